"""Desk-scale experiment protocol shared by the acceptance suite and ``scripts/``."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import synthetic_dataset
from .interp import wb_interpolate
from .metrics import psnr
from .network import ModelConfig
from .sfa import SFAPattern, mosaic_sample
from .train import LossConfig, TrainConfig, fit


@dataclass(frozen=True)
class DeskSetup:
    period: int = 4
    train_scenes: int = 5
    test_scenes: int = 3
    size: int = 128
    complexity: int = 3
    texture: float = 0.1
    grain_scales: tuple = (1.0, 2.0, 4.0, 8.0)
    data_seed: int = 123
    channels: int = 32
    blocks: int = 2
    steps: int = 2000
    steps_per_epoch: int = 10
    evals: int = 5
    patch_size: int = 64
    batch_size: int = 4
    lr: float = 5e-4

    @property
    def pattern(self) -> SFAPattern:
        return SFAPattern.row_major(self.period, self.period)

    def with_(self, **changes) -> "DeskSetup":
        return replace(self, **changes)


@dataclass
class DeskData:
    pattern: SFAPattern
    train_gts: list
    test_gts: list
    train_mosaics: list = field(init=False)
    test_mosaics: list = field(init=False)

    def __post_init__(self):
        self.train_mosaics = [mosaic_sample(x, self.pattern) for x in self.train_gts]
        self.test_mosaics = [mosaic_sample(x, self.pattern) for x in self.test_gts]

    def wb_psnr(self) -> float:
        return float(np.mean([psnr(wb_interpolate(y, self.pattern), x)
                              for y, x in zip(self.test_mosaics, self.test_gts)]))


def desk_data(setup: DeskSetup) -> DeskData:
    rng = np.random.default_rng(setup.data_seed)
    kw = dict(complexity=setup.complexity, texture=setup.texture, grain_scales=setup.grain_scales)
    pattern = setup.pattern
    train = synthetic_dataset(rng, setup.train_scenes, setup.size, setup.size, pattern, **kw)
    test = synthetic_dataset(rng, setup.test_scenes, setup.size, setup.size, pattern, **kw)
    return DeskData(pattern, train, test)


@dataclass
class RunOutcome:
    psnr: float
    history: list
    seconds: float
    result: object = None


def desk_run(setup: DeskSetup, seed: int, data: DeskData | None = None, policy: str = "mixed",
             interp_branch: bool = True, supervised: bool = False, attention: str = "lsa",
             run_dir=None) -> RunOutcome:
    """Train one model under ``setup``; PSNR is that of the final model on the test scenes."""
    data = data or desk_data(setup)
    epochs = setup.steps // setup.steps_per_epoch
    model_cfg = ModelConfig.for_pattern(data.pattern, channels=setup.channels, blocks=setup.blocks,
                                        attention=attention, interp_branch=interp_branch)
    train_cfg = TrainConfig(lr=setup.lr, patch_size=setup.patch_size, batch_size=setup.batch_size,
                            max_epochs=epochs, steps_per_epoch=setup.steps_per_epoch, policy=policy,
                            supervised=supervised, seed=seed, sei_every=max(1, epochs // setup.evals))
    torch.manual_seed(seed)
    start = time.perf_counter()
    result = fit(data.train_mosaics, data.test_mosaics, model_cfg, train_cfg, LossConfig(), run_dir=run_dir,
                 train_gts=data.train_gts, val_gts=data.test_gts)
    return RunOutcome(result.history[-1]["psnr"], result.history, time.perf_counter() - start, result)


def overfit_run(setup: DeskSetup, seed: int, steps: int, patch: int = 32, lr: float = 1e-3,
                every: int = 100, data: DeskData | None = None) -> RunOutcome:
    """Train on one fixed ``patch`` x ``patch`` crop for ``steps`` steps, scoring the test scenes every ``every``."""
    data = data or desk_data(setup)
    y = data.train_mosaics[0][:patch, :patch]
    model_cfg = ModelConfig.for_pattern(data.pattern, channels=setup.channels, blocks=setup.blocks)
    train_cfg = TrainConfig(lr=lr, patch_size=patch, batch_size=1, max_epochs=steps, steps_per_epoch=1,
                            seed=seed, sei_every=every)
    torch.manual_seed(seed)
    start = time.perf_counter()
    result = fit([y], data.test_mosaics, model_cfg, train_cfg, LossConfig(), val_gts=data.test_gts)
    return RunOutcome(result.history[-1]["psnr"], result.history, time.perf_counter() - start, result)
