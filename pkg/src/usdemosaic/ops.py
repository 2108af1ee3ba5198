"""Differentiable torch counterparts of the SFA measurement operators.

Tensors are ``(N, B, H, W)`` cubes and ``(N, H, W)`` mosaics.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .interp import bilinear_kernel
from .sfa import SFAPattern, TransformSpec, mask_of, resize_shape


def mask_tensor(pattern: SFAPattern, height: int, width: int, *, dtype=torch.float32, device=None):
    """``(B, H, W)`` sampling masks; cached, so callers must not modify the result in place."""
    layout = pattern.layout
    return _mask_tensor(layout.tobytes(), layout.shape, str(layout.dtype), pattern.bands, height, width, dtype,
                        str(device) if device is not None else "cpu")


@lru_cache(maxsize=64)
def _mask_tensor(layout_bytes, shape, layout_dtype, bands, height, width, dtype, device):
    pattern = SFAPattern(np.frombuffer(layout_bytes, dtype=layout_dtype).reshape(shape), bands)
    mask = mask_of(pattern, height, width).transpose(2, 0, 1)
    return torch.as_tensor(np.ascontiguousarray(mask), dtype=dtype, device=device)


@lru_cache(maxsize=64)
def _wb_denominator(layout_bytes, shape, layout_dtype, bands, height, width, dtype, device):
    pattern = SFAPattern(np.frombuffer(layout_bytes, dtype=layout_dtype).reshape(shape), bands)
    mask = _mask_tensor(layout_bytes, shape, layout_dtype, bands, height, width, dtype, device)
    return F.conv2d(mask.unsqueeze(0), _wb_weight(pattern, dtype, device), padding=(pattern.r1 - 1, pattern.r2 - 1),
                    groups=bands)


def _wb_weight(pattern, dtype, device):
    kernel = torch.as_tensor(bilinear_kernel(*pattern.period), dtype=dtype, device=device)
    return kernel.expand(pattern.bands, 1, *kernel.shape)


def mosaic_sample(cube: torch.Tensor, pattern: SFAPattern) -> torch.Tensor:
    if cube.shape[1] != pattern.bands:
        raise ValueError(f"cube has {cube.shape[1]} bands but the pattern has {pattern.bands}")
    mask = mask_tensor(pattern, *cube.shape[-2:], dtype=cube.dtype, device=cube.device)
    return (cube * mask).sum(dim=1)


def sparse_expand(mosaic: torch.Tensor, pattern: SFAPattern) -> torch.Tensor:
    mask = mask_tensor(pattern, *mosaic.shape[-2:], dtype=mosaic.dtype, device=mosaic.device)
    return mosaic.unsqueeze(1) * mask


def wb_interpolate(mosaic: torch.Tensor, pattern: SFAPattern) -> torch.Tensor:
    """Normalized-convolution interpolation; frames must span at least one period."""
    h, w = mosaic.shape[-2:]
    if h < pattern.r1 or w < pattern.r2:
        raise ValueError("frame smaller than one SFA period")
    dtype, device = mosaic.dtype, mosaic.device
    layout = pattern.layout
    key = (layout.tobytes(), layout.shape, str(layout.dtype), pattern.bands, h, w, dtype, str(device))
    sparse = mosaic.unsqueeze(1) * _mask_tensor(*key)
    num = F.conv2d(sparse, _wb_weight(pattern, dtype, device), padding=(pattern.r1 - 1, pattern.r2 - 1),
                   groups=pattern.bands)
    return num / _wb_denominator(*key)


def apply_transform(cube: torch.Tensor, spec: TransformSpec, pattern: SFAPattern) -> torch.Tensor:
    spec.validate(pattern)
    if spec.kind == "identity":
        return cube
    if spec.kind == "shift":
        return torch.roll(cube, shifts=(spec.i, spec.j), dims=(-2, -1))
    if spec.kind == "flip":
        return torch.flip(cube, dims=(-1,) if spec.axis == "horizontal" else (-2,))
    if spec.kind == "rotate":
        return torch.rot90(cube, spec.k, dims=(-2, -1))
    h, w = cube.shape[-2:]
    scaled = (int(round(h * spec.scale)), int(round(w * spec.scale)))
    out_h, out_w = resize_shape(h, w, spec.scale, pattern)
    out = F.interpolate(cube, size=scaled, mode="bilinear", align_corners=False)
    return out[..., :out_h, :out_w]


def phase_means(x: torch.Tensor, r1: int, r2: int) -> torch.Tensor:
    """Global mean of each phase sub-image: ``(..., H, W) -> (..., r1*r2)``."""
    *lead, h, w = x.shape
    if h % r1 or w % r2:
        raise ValueError(f"frame {h}x{w} is not a multiple of the {r1}x{r2} period")
    x = x.reshape(*lead, h // r1, r1, w // r2, r2)
    return x.mean(dim=(-4, -2)).reshape(*lead, r1 * r2)


def phase_broadcast(weights: torch.Tensor, r1: int, r2: int, h: int, w: int) -> torch.Tensor:
    """Tile per-phase values ``(..., r1*r2)`` back onto an ``h x w`` frame."""
    *lead, _ = weights.shape
    tile = weights.reshape(*lead, 1, r1, 1, r2)
    return tile.expand(*lead, h // r1, r1, w // r2, r2).reshape(*lead, h, w)
