"""Self-evaluation index: a no-reference measure of period-locked distortion.

For each band the image is split into its ``r1*r2`` phase sub-images; the
population variance of their global means is the band score ``v_b``, and
the cube score is the mean of ``v_b`` over bands. Scores scale with the
square of intensity, so the shipped thresholds assume ``[0, 1]`` data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sfa import SFAPattern, inverse_pixel_shuffle

# maximum-SEI presets for [0, 1]-normalized data
SEI_MAX_PRESETS = {"icvl": 2.1e-7, "mosaic25": 1e-6}


def band_sei(band: np.ndarray, pattern: SFAPattern) -> float:
    subs = inverse_pixel_shuffle(np.asarray(band, dtype=np.float64), pattern.r1, pattern.r2)
    return float(np.var(subs.mean(axis=(1, 2))))


def band_seis(cube: np.ndarray, pattern: SFAPattern) -> np.ndarray:
    cube = np.asarray(cube, dtype=np.float64)
    return np.array([band_sei(cube[..., b], pattern) for b in range(cube.shape[2])])


def cube_sei(cube: np.ndarray, pattern: SFAPattern) -> float:
    return float(band_seis(cube, pattern).mean())


@dataclass
class SEIReport:
    per_band: np.ndarray
    epoch: int | None = None

    @property
    def sei(self) -> float:
        return float(np.mean(self.per_band))

    @classmethod
    def of(cls, cubes, pattern: SFAPattern, epoch: int | None = None) -> "SEIReport":
        """Per-band scores averaged over one or more cubes."""
        if isinstance(cubes, np.ndarray) and cubes.ndim == 3:
            cubes = [cubes]
        return cls(np.mean([band_seis(c, pattern) for c in cubes], axis=0), epoch)


def should_stop(history, sei_max: float) -> bool:
    """True once the latest SEI exceeds ``sei_max``."""
    return bool(history) and history[-1] > sei_max


@dataclass
class EarlyStopper:
    """Tracks the SEI curve and the lowest-SEI evaluation point."""

    sei_max: float = math.inf
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_sei: float = math.inf

    def update(self, epoch: int, sei: float) -> bool:
        self.history.append((epoch, sei))
        if sei < self.best_sei:
            self.best_sei, self.best_epoch = sei, epoch
        return should_stop([s for _, s in self.history], self.sei_max)
