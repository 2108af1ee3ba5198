"""Unsupervised equivariant training: losses, single steps and the epoch loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import ops
from .data import atomic_write_bytes, crop, random_offsets, snap_size
from .metrics import evaluate
from .network import DemosaicNet, ModelConfig, build_model, demosaic
from .sei import EarlyStopper, SEIReport
from .sfa import IDENTITY, SFAPattern, random_transform

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "usdemosaic-checkpoint"
CHECKPOINT_VERSION = 1
POLICIES = ("shift", "mixed", "none")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    alpha: float = 1.0
    eps: float = 1e-3
    stop_gradient_pseudo_gt: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.eps <= 0:
            raise ValueError("need alpha >= 0 and eps > 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    patch_size: int = 100
    batch_size: int = 1
    max_epochs: int = 100
    steps_per_epoch: int | None = None  # default: one step per training image
    policy: str = "mixed"
    supervised: bool = False
    seed: int = 0
    sei_every: int = 50
    sei_max: float = math.inf

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


def charbonnier(x: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    return torch.sqrt(x * x + eps * eps).mean()


def mosaic_loss(x_hat: torch.Tensor, y: torch.Tensor, pattern: SFAPattern, eps: float = 1e-3) -> torch.Tensor:
    return charbonnier(ops.mosaic_sample(x_hat, pattern) - y, eps)


def cube_loss(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"cube shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return charbonnier(a - b, eps)


@dataclass
class StepLosses:
    cube: float
    mosaic: float
    total: float


def usd_loss(model: DemosaicNet, y: torch.Tensor, spec, loss_cfg: LossConfig):
    """Total equivariant objective for one batch under transform ``spec``.

    Returns ``(total, cube_term, mosaic_term)`` as tensors.
    """
    pattern = model.pattern
    x_hat = model(y)
    x_prime = ops.apply_transform(x_hat, spec, pattern)
    if loss_cfg.stop_gradient_pseudo_gt:
        x_prime = x_prime.detach()
    x_tilde = model(ops.mosaic_sample(x_prime, pattern))
    lc = cube_loss(x_tilde, x_prime, loss_cfg.eps)
    lm = mosaic_loss(x_hat, y, pattern, loss_cfg.eps)
    return lc + loss_cfg.alpha * lm, lc, lm


def supervised_loss(model: DemosaicNet, y: torch.Tensor, x: torch.Tensor, loss_cfg: LossConfig):
    x_hat = model(y)
    lc = cube_loss(x_hat, x, loss_cfg.eps)
    return lc, lc, mosaic_loss(x_hat, y, model.pattern, loss_cfg.eps).detach()


def train_step(model, optimizer, y, rng, train_cfg: TrainConfig, loss_cfg: LossConfig, x=None) -> StepLosses:
    """One optimizer update; ``x`` is the ground truth for supervised mode."""
    optimizer.zero_grad(set_to_none=True)
    if train_cfg.supervised:
        total, lc, lm = supervised_loss(model, y, x, loss_cfg)
    else:
        spec = random_transform(rng, model.pattern, train_cfg.policy)
        total, lc, lm = usd_loss(model, y, spec, loss_cfg)
    if not torch.isfinite(total):
        raise TrainingDiverged(f"non-finite loss {total.item()} (cube {lc.item()}, mosaic {lm.item()})")
    total.backward()
    optimizer.step()
    return StepLosses(lc.item(), lm.item(), total.item())


def period_crop(image: np.ndarray, pattern: SFAPattern) -> np.ndarray:
    return image[: snap_size(image.shape[0], pattern.r1), : snap_size(image.shape[1], pattern.r2)]


@dataclass
class FitResult:
    model: DemosaicNet
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_state: dict | None = None
    stopped_early: bool = False

    def best_model(self) -> DemosaicNet:
        model = build_model(self.model.config, dtype=next(self.model.parameters()).dtype)
        model.load_state_dict(self.best_state)
        return model


def evaluate_model(model, mosaics, pattern, gts=None, epoch=None) -> dict:
    """SEI over ``mosaics`` and, with ground truth, mean full-reference metrics."""
    cubes = [demosaic(model, period_crop(y, pattern)) for y in mosaics]
    row = {"sei": SEIReport.of(cubes, pattern, epoch).sei}
    if gts is not None:
        reports = [evaluate(c, period_crop(g, pattern)) for c, g in zip(cubes, gts)]
        for key in ("psnr", "ssim", "sam", "ergas"):
            # SAM is undefined for an all-zero estimate, e.g. an untrained model without the WB branch
            values = [v for v in (getattr(r, key) for r in reports) if v is not None]
            row[key] = float(np.mean(values)) if values else math.nan
    return row


def fit(train_mosaics, val_mosaics, model_cfg: ModelConfig, train_cfg: TrainConfig,
        loss_cfg: LossConfig | None = None, run_dir=None, train_gts=None, val_gts=None,
        model: DemosaicNet | None = None, dtype=torch.float32) -> FitResult:
    """Train until ``max_epochs`` or until the validation SEI exceeds ``sei_max``.

    Validation runs at epoch 0 and every ``sei_every`` epochs; the kept
    model is the lowest-SEI one among those evaluations.
    """
    if not train_mosaics:
        raise ValueError("training set is empty")
    if train_cfg.supervised and train_gts is None:
        raise ValueError("supervised mode needs ground-truth cubes")
    loss_cfg = loss_cfg or LossConfig()
    pattern = model_cfg.pattern
    rng = np.random.default_rng(train_cfg.seed)
    if model is None:
        model = build_model(model_cfg, seed=train_cfg.seed, dtype=dtype)
    dtype = next(model.parameters()).dtype
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    stopper = EarlyStopper(train_cfg.sei_max)
    steps = train_cfg.steps_per_epoch or max(1, math.ceil(len(train_mosaics) / train_cfg.batch_size))
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
    result = FitResult(model)

    def checkpoint(epoch):
        row = evaluate_model(model, val_mosaics or train_mosaics, pattern,
                             val_gts if val_mosaics else train_gts, epoch)
        stop = stopper.update(epoch, row["sei"])
        if stopper.best_epoch == epoch:
            result.best_epoch = epoch
            result.best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if run_dir is not None:
            meta = {"epoch": epoch, "seed": train_cfg.seed, "sei_history": [list(h) for h in stopper.history]}
            save_checkpoint(model, run_dir / "checkpoints" / f"epoch{epoch:06d}.pt", meta)
            if stopper.best_epoch == epoch:
                save_checkpoint(model, run_dir / "best.pt", meta)
        return row, stop

    row, _ = checkpoint(0)
    result.history.append({"epoch": 0, "cube_loss": math.nan, "mosaic_loss": math.nan, **row})
    for epoch in range(1, train_cfg.max_epochs + 1):
        model.train()
        sums = np.zeros(2)
        for _ in range(steps):
            idx = rng.integers(len(train_mosaics), size=train_cfg.batch_size)
            ys, xs = [], []
            for i in idx:
                off = random_offsets(train_mosaics[i].shape, train_cfg.patch_size, 1, rng, pattern)[0]
                ys.append(crop(train_mosaics[i], off))
                if train_cfg.supervised:
                    xs.append(crop(train_gts[i], off).transpose(2, 0, 1))
            y = torch.as_tensor(np.stack(ys), dtype=dtype)
            x = torch.as_tensor(np.stack(xs), dtype=dtype) if xs else None
            losses = train_step(model, optimizer, y, rng, train_cfg, loss_cfg, x)
            sums += (losses.cube, losses.mosaic)
        entry = {"epoch": epoch, "cube_loss": sums[0] / steps, "mosaic_loss": sums[1] / steps}
        stop = False
        if epoch % train_cfg.sei_every == 0 or epoch == train_cfg.max_epochs:
            row, stop = checkpoint(epoch)
            entry.update(row)
            log.info("epoch %d  cube %.3e  mosaic %.3e  sei %.3e", epoch, entry["cube_loss"],
                     entry["mosaic_loss"], row["sei"])
        result.history.append(entry)
        if run_dir is not None:
            write_history(result.history, run_dir / "history.csv")
        if stop:
            log.info("SEI %.3e exceeded %.3e at epoch %d; stopping", row["sei"], train_cfg.sei_max, epoch)
            result.stopped_early = True
            break
    if run_dir is not None:
        write_history(result.history, run_dir / "history.csv")
    return result


HISTORY_FIELDS = ("epoch", "cube_loss", "mosaic_loss", "sei", "psnr", "ssim", "sam", "ergas")


def write_history(history, path) -> None:
    fields = [f for f in HISTORY_FIELDS if any(f in row for row in history)]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore")
    writer.writeheader()
    for row in history:
        writer.writerow({k: row.get(k, "") for k in fields})
    atomic_write_bytes(path, buf.getvalue().encode())


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (float(v) if v not in ("", None) else None) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_checkpoint(model: DemosaicNet, path, meta: dict | None = None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": json.dumps(model.config.to_dict()),
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "meta": json.dumps(meta or {}),
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[DemosaicNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a demosaicing checkpoint")
    if blob["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob['version']}")
    config = ModelConfig(**json.loads(blob["model_config"]))
    state = blob["state_dict"]
    model = build_model(config, dtype=next(iter(state.values())).dtype)
    model.load_state_dict(state)
    return model, json.loads(blob["meta"])


def config_dict(*configs) -> dict:
    return {type(c).__name__: asdict(c) for c in configs}
