"""Full-reference quality metrics for ``(H, W, B)`` cubes in ``[0, 1]``."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from skimage.metrics import structural_similarity

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    """PSNR in dB from the MSE over the whole cube; ``inf`` for identical inputs."""
    x, y = _pair(x, y)
    mse = np.mean((x - y) ** 2)
    return math.inf if mse == 0 else float(10 * np.log10(peak ** 2 / mse))


def band_psnr(x, y, peak: float = 1.0) -> np.ndarray:
    x, y = _pair(x, y)
    return np.array([psnr(x[..., b], y[..., b], peak) for b in range(x.shape[-1])])


def band_ssim(x, y, data_range: float = 1.0) -> np.ndarray:
    x, y = _pair(x, y)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {x.shape[:2]}")
    return np.array([
        structural_similarity(x[..., b], y[..., b], data_range=data_range, gaussian_weights=True,
                              sigma=SSIM_SIGMA, use_sample_covariance=False, K1=0.01, K2=0.03)
        for b in range(x.shape[-1])
    ])


def ssim(x, y, data_range: float = 1.0) -> float:
    """Mean over bands of Gaussian-window (11, sigma 1.5) SSIM."""
    return float(band_ssim(x, y, data_range).mean())


def sam(x, y) -> float | None:
    """Mean spectral angle in degrees; pixels where either spectrum is zero are skipped."""
    x, y = _pair(x, y)
    x = x.reshape(-1, x.shape[-1])
    y = y.reshape(-1, y.shape[-1])
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    keep = (nx > 0) & (ny > 0)
    if not keep.any():
        return None
    u = x[keep] / nx[keep, None]
    v = y[keep] / ny[keep, None]
    # half-angle form stays exact near 0 where arccos of a rounded cosine does not
    angle = 2 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
    return float(np.degrees(angle).mean())


def ergas(x, y, ratio: float = 1.0) -> float:
    """``100 * ratio * sqrt(mean_b (RMSE_b / mean_b)^2)`` with band means taken from ``y``."""
    x, y = _pair(x, y)
    rmse = np.sqrt(np.mean((x - y) ** 2, axis=(0, 1)))
    means = np.mean(y, axis=(0, 1))
    keep = means != 0
    if not keep.all():
        warnings.warn(f"ERGAS: skipping {int((~keep).sum())} band(s) with zero reference mean")
    if not keep.any():
        return math.nan
    return float(100 * ratio * np.sqrt(np.mean((rmse[keep] / means[keep]) ** 2)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float | None
    ergas: float
    psnr_band_mean: float
    per_band: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("per_band")
        return d


def evaluate(x, y, peak: float = 1.0, ergas_ratio: float = 1.0) -> MetricReport:
    """All four metrics of estimate ``x`` against reference ``y``."""
    bp = band_psnr(x, y, peak)
    bs = band_ssim(x, y, peak)
    return MetricReport(
        psnr=psnr(x, y, peak),
        ssim=float(bs.mean()),
        sam=sam(x, y),
        ergas=ergas(x, y, ergas_ratio),
        psnr_band_mean=float(np.mean(bp)),
        per_band={"psnr": bp.tolist(), "ssim": bs.tolist()},
    )
