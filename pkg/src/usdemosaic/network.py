"""Residual demosaicing network with spectral attention and an interpolation branch."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import ops
from .sfa import SFAPattern

ATTENTION_KINDS = ("none", "lsa", "hsa")


def _hidden(n: int, d: int) -> int:
    return max(1, math.ceil(n / d))


@dataclass
class ModelConfig:
    layout: list = field(default_factory=lambda: np.arange(25).reshape(5, 5).tolist())
    bands: int = 25
    channels: int = 64
    blocks: int = 4
    reduction: int = 4
    residual_scale: float = 1.0
    attention: str = "lsa"
    interp_branch: bool = True

    def __post_init__(self):
        if not self.channels >= self.reduction >= 1:
            raise ValueError("need channels >= reduction >= 1")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        self.layout = np.asarray(self.layout).tolist()

    @classmethod
    def for_pattern(cls, pattern: SFAPattern, **kwargs) -> "ModelConfig":
        return cls(layout=pattern.layout.tolist(), bands=pattern.bands, **kwargs)

    @property
    def pattern(self) -> SFAPattern:
        return SFAPattern(np.array(self.layout), self.bands)

    def to_dict(self) -> dict:
        return asdict(self)


class SqueezeExcite(nn.Module):
    """Dense ``n -> ceil(n/d) -> n`` bottleneck ending in a sigmoid."""

    def __init__(self, n: int, d: int):
        super().__init__()
        self.down = nn.Linear(n, _hidden(n, d))
        self.up = nn.Linear(_hidden(n, d), n)

    def forward(self, x):
        return torch.sigmoid(self.up(torch.relu(self.down(x))))


class SpaceAttention(nn.Module):
    """Per-phase attention shared by every channel; one weight per mosaic phase."""

    def __init__(self, r1: int, r2: int, d: int):
        super().__init__()
        self.r1, self.r2 = r1, r2
        self.se = SqueezeExcite(r1 * r2, d)

    def forward(self, fm):
        h, w = fm.shape[-2:]
        weights = self.se(ops.phase_means(fm, self.r1, self.r2))
        return ops.phase_broadcast(weights, self.r1, self.r2, h, w)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, d: int):
        super().__init__()
        self.se = SqueezeExcite(channels, d)

    def forward(self, fm):
        return self.se(fm.mean(dim=(-2, -1)))


class LightweightSpectralAttention(nn.Module):
    def __init__(self, channels: int, r1: int, r2: int, d: int):
        super().__init__()
        self.space = SpaceAttention(r1, r2, d)
        self.channel = ChannelAttention(channels, d)

    def forward(self, fm):
        am = self.space(fm)
        av = self.channel(fm)
        return fm * am * av[..., None, None]


class HeavyweightSpectralAttention(nn.Module):
    """Joint phase-by-channel attention over all ``C*r1*r2`` phase means."""

    def __init__(self, channels: int, r1: int, r2: int, d: int):
        super().__init__()
        self.r1, self.r2 = r1, r2
        self.se = SqueezeExcite(channels * r1 * r2, d)

    def forward(self, fm):
        n, c, h, w = fm.shape
        weights = self.se(ops.phase_means(fm, self.r1, self.r2).reshape(n, -1))
        return fm * ops.phase_broadcast(weights.reshape(n, c, -1), self.r1, self.r2, h, w)


def make_attention(kind: str, channels: int, r1: int, r2: int, d: int) -> nn.Module:
    if kind == "lsa":
        return LightweightSpectralAttention(channels, r1, r2, d)
    if kind == "hsa":
        return HeavyweightSpectralAttention(channels, r1, r2, d)
    return nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, attention: nn.Module):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.attention = attention

    def forward(self, x):
        return self.attention(x + self.conv2(torch.relu(self.conv1(x))))


class DemosaicNet(nn.Module):
    """Maps a mosaic ``(N, H, W)`` to a cube ``(N, B, H, W)``.

    The output is the interpolated cube plus a learned residual; the tail
    convolution starts at zero so a fresh model reproduces the interpolation.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.pattern = config.pattern
        b, c = config.bands, config.channels
        r1, r2 = self.pattern.period
        in_ch = 2 * b if config.interp_branch else b
        self.stem = nn.Conv2d(in_ch, c, 3, padding=1)
        self.body = nn.Sequential(*[
            ResidualBlock(c, make_attention(config.attention, c, r1, r2, config.reduction))
            for _ in range(config.blocks)
        ])
        self.tail = nn.Conv2d(c, b, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, mosaic: torch.Tensor) -> torch.Tensor:
        if mosaic.dim() == 4:
            mosaic = mosaic.squeeze(1)
        h, w = mosaic.shape[-2:]
        if h % self.pattern.r1 or w % self.pattern.r2:
            raise ValueError(f"mosaic {h}x{w} is not a multiple of the {self.pattern.period} period")
        sparse = ops.sparse_expand(mosaic, self.pattern)
        if not self.config.interp_branch:
            return self.config.residual_scale * self.tail(self.body(self.stem(sparse)))
        wb = ops.wb_interpolate(mosaic, self.pattern)
        feats = self.body(self.stem(torch.cat([sparse, wb], dim=1)))
        return wb + self.config.residual_scale * self.tail(feats)


def build_model(config: ModelConfig, seed: int | None = None, dtype=torch.float32) -> DemosaicNet:
    if seed is not None:
        torch.manual_seed(seed)
    return DemosaicNet(config).to(dtype)


@torch.no_grad()
def demosaic(model: DemosaicNet, mosaic: np.ndarray) -> np.ndarray:
    """Numpy convenience wrapper: ``(H, W)`` mosaic to ``(H, W, B)`` cube."""
    dtype = next(model.parameters()).dtype
    y = torch.as_tensor(np.asarray(mosaic), dtype=dtype)[None]
    was_training = model.training
    model.eval()
    out = model(y)[0].permute(1, 2, 0).cpu().numpy()
    model.train(was_training)
    return out.astype(np.float64)


def count_params(model: nn.Module) -> tuple[int, dict[str, int]]:
    """Total trainable parameters and a per-tensor table."""
    table = {name: p.numel() for name, p in model.named_parameters() if p.requires_grad}
    return sum(table.values()), table


def weight_count(module: nn.Module, biases: bool = False) -> int:
    """Parameter count of ``module``, biases excluded unless asked for."""
    return sum(p.numel() for name, p in module.named_parameters()
               if biases or not name.endswith("bias"))


def lsa_formula(channels: int, r1: int, r2: int, d: int) -> float:
    """Idealized bias-free LSA weight count ``2((r1 r2)^2 + C^2)/d``."""
    return 2 * ((r1 * r2) ** 2 + channels ** 2) / d


def hsa_formula(channels: int, r1: int, r2: int, d: int) -> float:
    return 2 * (r1 * r2) ** 2 * channels ** 2 / d


def lsa_param_count(channels: int, r1: int, r2: int, d: int, biases: bool = False) -> int:
    """Realized LSA count with ceiling bottleneck widths."""
    p = r1 * r2
    count = 2 * p * _hidden(p, d) + 2 * channels * _hidden(channels, d)
    if biases:
        count += p + _hidden(p, d) + channels + _hidden(channels, d)
    return count


def hsa_param_count(channels: int, r1: int, r2: int, d: int, biases: bool = False) -> int:
    n = r1 * r2 * channels
    count = 2 * n * _hidden(n, d)
    if biases:
        count += n + _hidden(n, d)
    return count
