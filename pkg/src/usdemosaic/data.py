"""Cube files, synthetic spectral responses, patch cropping and procedural scenes."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .sfa import SFAPattern

MAGIC = "USDCUBE"
FORMAT_VERSION = 1
DEFAULT_RANGE = (600.0, 900.0)


class CubeFormatError(ValueError):
    pass


@dataclass
class CubeFile:
    data: np.ndarray  # (H, W, B) float32
    wavelengths: np.ndarray | None = None
    scale: float = 1.0


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_cube(cube, path, wavelengths=None, scale: float = 1.0) -> None:
    """Store an ``(H, W, B)`` or ``(H, W)`` array as little-endian float32, band-major."""
    cube = np.asarray(cube)
    if cube.ndim == 2:
        cube = cube[..., None]
    if cube.ndim != 3:
        raise ValueError(f"expected an (H, W, B) cube, got shape {cube.shape}")
    h, w, b = cube.shape
    lines = [MAGIC, f"version {FORMAT_VERSION}", f"height {h}", f"width {w}", f"bands {b}",
             "dtype float32", "byteorder little", f"scale {float(scale)!r}"]
    if wavelengths is not None:
        wavelengths = np.asarray(wavelengths, dtype=float)
        if wavelengths.shape != (b,):
            raise ValueError(f"{wavelengths.size} wavelengths given for {b} bands")
        lines.append("wavelengths " + " ".join(repr(float(v)) for v in wavelengths))
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.ascontiguousarray(cube.transpose(2, 0, 1), dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_cube(path) -> CubeFile:
    raw = Path(path).read_bytes()
    fields = {}
    pos = 0
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CubeFormatError(f"{path}: unterminated header")
        line = raw[pos:nl].decode("ascii", errors="replace").strip()
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise CubeFormatError(f"{path}: bad magic {line[:16]!r}, expected {MAGIC!r}")
            first = False
            continue
        if line == "end":
            break
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        version = int(fields["version"])
        h, w, b = (int(fields[k]) for k in ("height", "width", "bands"))
    except (KeyError, ValueError) as exc:
        raise CubeFormatError(f"{path}: malformed header ({exc})") from None
    if version != FORMAT_VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if fields.get("dtype") != "float32":
        raise CubeFormatError(f"{path}: dtype {fields.get('dtype')!r} is not float32")
    if fields.get("byteorder") != "little":
        raise CubeFormatError(
            f"{path}: byte order {fields.get('byteorder')!r} unsupported; payload must be little-endian"
        )
    payload = raw[pos:]
    expected = h * w * b * 4
    if len(payload) != expected:
        raise CubeFormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(b, h, w).transpose(1, 2, 0).astype(np.float32)
    wl = fields.get("wavelengths")
    wavelengths = np.array([float(v) for v in wl.split()]) if wl else None
    return CubeFile(data, wavelengths, float(fields.get("scale", 1.0)))


def load_cube(path, normalize: bool = False) -> np.ndarray:
    """Read a cube; with ``normalize`` it is divided by its maximum (see :func:`normalize_cube`)."""
    data = read_cube(path).data
    return normalize_cube(data)[0] if normalize else data


def normalize_cube(cube: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(np.max(cube))
    scale = peak if peak > 0 else 1.0
    return cube / scale, scale


def load_mosaic(path) -> np.ndarray:
    data = read_cube(path).data
    if data.shape[2] != 1:
        raise CubeFormatError(f"{path}: expected a single-plane mosaic, found {data.shape[2]} bands")
    return data[..., 0]


def save_mosaic_png(mosaic: np.ndarray, path) -> None:
    """16-bit grayscale preview of a ``[0, 1]`` mosaic."""
    from PIL import Image

    img = np.round(np.clip(mosaic, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(img).save(path)


class ManifestEntry(NamedTuple):
    path: Path
    split: str = "train"
    gt: Path | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """One ``path [split] [gt_path]`` entry per line; relative paths resolve against the manifest folder."""
    base = Path(path).parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    entries = []
    for line in Path(path).read_text().splitlines():
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        split = parts[1] if len(parts) > 1 else "train"
        gt = resolve(parts[2]) if len(parts) > 2 else None
        entries.append(ManifestEntry(resolve(parts[0]), split, gt))
    return entries


def write_manifest(entries, path) -> None:
    lines = []
    for entry in entries:
        entry = ManifestEntry(*entry)
        fields = [str(entry.path), entry.split] + ([str(entry.gt)] if entry.gt is not None else [])
        lines.append(" ".join(fields) + "\n")
    atomic_write_bytes(path, "".join(lines).encode())


@dataclass
class SSFBank:
    """Synthetic spectral sensitivity functions, one unit-sum row per output band."""

    weights: np.ndarray  # (B, L)
    centers: np.ndarray
    fwhm: float
    source_wavelengths: np.ndarray


def make_ssf_bank(source_wavelengths, bands: int, wl_range=DEFAULT_RANGE, fwhm: float | None = None) -> SSFBank:
    """Gaussian responses with centers evenly spread over ``wl_range``.

    ``fwhm`` defaults to the center spacing.
    """
    wl = np.asarray(source_wavelengths, dtype=float)
    lo, hi = wl_range
    if wl.min() > lo or wl.max() < hi:
        raise ValueError(f"source grid [{wl.min()}, {wl.max()}] nm does not cover [{lo}, {hi}] nm")
    spacing = (hi - lo) / bands
    centers = lo + (np.arange(bands) + 0.5) * spacing
    fwhm = spacing if fwhm is None else float(fwhm)
    sigma = fwhm / (2 * np.sqrt(2 * np.log(2)))
    logw = -0.5 * ((wl[None, :] - centers[:, None]) / sigma) ** 2
    weights = np.exp(logw - logw.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    return SSFBank(weights, centers, fwhm, wl)


def spectral_resample(cube: np.ndarray, bank: SSFBank) -> np.ndarray:
    cube = np.asarray(cube)
    if cube.shape[-1] != bank.weights.shape[1]:
        raise ValueError(f"cube has {cube.shape[-1]} bands, bank expects {bank.weights.shape[1]}")
    return cube @ bank.weights.T


def snap_size(size: int, period: int) -> int:
    return size // period * period


def random_offsets(shape, size: int, count: int, rng: np.random.Generator, pattern: SFAPattern):
    """Top-left corners of ``count`` phase-aligned ``size x size`` crops.

    ``size`` is snapped down to a period multiple along each axis.
    """
    ph, pw = snap_size(size, pattern.r1), snap_size(size, pattern.r2)
    if ph < pattern.r1 or pw < pattern.r2 or ph > shape[0] or pw > shape[1]:
        raise ValueError(f"patch size {size} does not fit a {shape[0]}x{shape[1]} image")
    rows = (shape[0] - ph) // pattern.r1 + 1
    cols = (shape[1] - pw) // pattern.r2 + 1
    return [(int(rng.integers(rows)) * pattern.r1, int(rng.integers(cols)) * pattern.r2, ph, pw)
            for _ in range(count)]


def crop(image: np.ndarray, offset) -> np.ndarray:
    top, left, ph, pw = offset
    return image[top: top + ph, left: left + pw]


def extract_patches(mosaic: np.ndarray, size: int, count: int, rng: np.random.Generator,
                    pattern: SFAPattern) -> list[np.ndarray]:
    return [crop(mosaic, off) for off in random_offsets(mosaic.shape, size, count, rng, pattern)]


def smooth_spectra(rng: np.random.Generator, count: int, bands: int, order: int = 4) -> np.ndarray:
    """Random spectra from a low-order cosine basis, rescaled into ``[0.05, 0.95]``."""
    t = np.linspace(0.0, 1.0, bands)
    basis = np.stack([np.cos(np.pi * k * t) for k in range(order)])
    coef = rng.normal(size=(count, order)) / (1.0 + np.arange(order)) ** 1.5
    spectra = coef @ basis
    lo, hi = spectra.min(axis=1, keepdims=True), spectra.max(axis=1, keepdims=True)
    span = np.maximum(hi - lo, 1e-9)
    level = rng.uniform(0.25, 0.75, size=(count, 1))
    amp = rng.uniform(0.1, 0.4, size=(count, 1))
    return np.clip(level + amp * ((spectra - lo) / span - 0.5), 0.05, 0.95)


def generate_scene(rng: np.random.Generator, height: int, width: int, bands: int,
                   complexity: int = 3, texture: float = 0.03,
                   grain_scales: tuple[float, ...] = (1.0,)) -> np.ndarray:
    """Piecewise-smooth synthetic cube in ``[0, 1]``.

    ``complexity`` sets the number of extra materials: regions come from a
    Voronoi partition (sharp edges), modulated by smooth shading and a
    texture shared by all bands. The texture sums Gaussian-filtered noise at
    each of ``grain_scales`` with amplitude proportional to the scale, which
    gives a roughly 1/f spectrum over those octaves, and has standard
    deviation ``texture``. ``complexity=0`` gives a spatially constant cube.
    """
    spectra = smooth_spectra(rng, complexity + 1, bands)
    if complexity == 0:
        return np.broadcast_to(spectra[0], (height, width, bands)).copy()
    seeds = rng.uniform(0, 1, size=(2 * complexity + 2, 2)) * (height, width)
    materials = rng.integers(0, complexity + 1, size=len(seeds))
    yy, xx = np.mgrid[:height, :width]
    dist = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    labels = materials[np.argmin(dist, axis=-1)]
    shading = ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=min(height, width) / 6,
                                      mode="wrap")
    shading = 1.0 + 0.5 * shading / (np.abs(shading).max() + 1e-12)
    grain = sum(s * ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=s) for s in grain_scales)
    grain = texture * grain / (grain.std() + 1e-12)
    cube = spectra[labels] * (shading + grain)[..., None]
    return np.clip(cube, 0.0, 1.0)


def source_wavelengths(count: int = 61, lo: float = 550.0, hi: float = 950.0) -> np.ndarray:
    return np.linspace(lo, hi, count)


def synthetic_dataset(rng: np.random.Generator, count: int, height: int, width: int,
                      pattern: SFAPattern, complexity: int = 3, source_bands: int = 61,
                      texture: float = 0.03, grain_scales: tuple[float, ...] = (1.0,)) -> list[np.ndarray]:
    """Ground-truth cubes for ``pattern``: fine-grid scenes pushed through a Gaussian bank."""
    wl = source_wavelengths(source_bands)
    bank = make_ssf_bank(wl, pattern.bands)
    return [spectral_resample(generate_scene(rng, height, width, source_bands, complexity, texture, grain_scales),
                              bank) for _ in range(count)]
