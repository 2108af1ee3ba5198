"""Weighted bilinear interpolation of each sparse band (normalized convolution)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .sfa import SFAPattern, mask_of


def bilinear_kernel(r1: int, r2: int) -> np.ndarray:
    """Separable tent ``(1 - |u|/r1)(1 - |v|/r2)`` on ``|u| < r1, |v| < r2``."""
    ku = 1.0 - np.abs(np.arange(-r1 + 1, r1)) / r1
    kv = 1.0 - np.abs(np.arange(-r2 + 1, r2)) / r2
    return np.outer(ku, kv)


def wb_interpolate(mosaic: np.ndarray, pattern: SFAPattern) -> np.ndarray:
    """Interpolate every band of ``mosaic`` from its own samples.

    Numerator and denominator are the sparse band and its mask convolved with
    the tent kernel under zero padding. Any pixel whose window holds no
    same-band sample (only possible on frames smaller than one period) takes
    the nearest sample of that band.
    """
    mosaic = np.asarray(mosaic, dtype=np.float64)
    kernel = bilinear_kernel(pattern.r1, pattern.r2)
    mask = mask_of(pattern, *mosaic.shape)
    out = np.zeros(mask.shape)
    for b in range(pattern.bands):
        m = mask[..., b]
        if not m.any():
            continue
        num = ndimage.correlate(m * mosaic, kernel, mode="constant")
        den = ndimage.correlate(m, kernel, mode="constant")
        band = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)
        holes = den <= 1e-12
        if holes.any():
            _, (ri, ci) = ndimage.distance_transform_edt(m == 0, return_indices=True)
            band[holes] = mosaic[ri[holes], ci[holes]]
        out[..., b] = band
    return out
