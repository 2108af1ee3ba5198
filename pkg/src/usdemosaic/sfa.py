"""Spectral filter array patterns, mosaic sampling and geometric transforms.

Cubes are ``numpy`` arrays laid out ``(H, W, B)``; mosaics are ``(H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

TRANSFORM_KINDS = ("shift", "flip", "rotate", "resize")
RESIZE_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class SFAPattern:
    """A periodic ``r1 x r2`` tile of band indices."""

    layout: np.ndarray
    bands: int = field(default=-1)

    def __post_init__(self):
        layout = np.asarray(self.layout)
        if layout.ndim != 2 or layout.size == 0:
            raise ValueError("pattern layout must be a non-empty 2-D grid")
        if not np.issubdtype(layout.dtype, np.integer):
            if not np.all(layout == np.round(layout)):
                raise ValueError("pattern layout entries must be integers")
        layout = layout.astype(np.int64)
        layout.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        bands = self.bands if self.bands > 0 else int(layout.max()) + 1
        object.__setattr__(self, "bands", bands)
        if layout.min() < 0 or layout.max() >= bands:
            raise ValueError(f"layout entries must lie in [0, {bands})")

    @classmethod
    def row_major(cls, r1: int, r2: int) -> "SFAPattern":
        return cls(np.arange(r1 * r2).reshape(r1, r2), r1 * r2)

    @property
    def r1(self) -> int:
        return self.layout.shape[0]

    @property
    def r2(self) -> int:
        return self.layout.shape[1]

    @property
    def period(self) -> tuple[int, int]:
        return self.r1, self.r2

    @property
    def is_non_redundant(self) -> bool:
        return self.bands == self.r1 * self.r2 and len(np.unique(self.layout)) == self.bands

    def band_map(self, height: int, width: int) -> np.ndarray:
        """Band index sampled at every pixel of an ``height x width`` frame."""
        reps = (-(-height // self.r1), -(-width // self.r2))
        return np.tile(self.layout, reps)[:height, :width]

    def __eq__(self, other):
        if not isinstance(other, SFAPattern):
            return NotImplemented
        return self.bands == other.bands and np.array_equal(self.layout, other.layout)

    def __hash__(self):
        return hash((self.bands, self.layout.tobytes(), self.layout.shape))

    def to_text(self) -> str:
        rows = "\n".join(" ".join(str(v) for v in row) for row in self.layout)
        return f"r1 {self.r1}\nr2 {self.r2}\nB {self.bands}\nlayout\n{rows}\n"

    @classmethod
    def from_text(cls, text: str) -> "SFAPattern":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        header = {}
        idx = 0
        while idx < len(lines) and lines[idx] != "layout":
            key, _, value = lines[idx].partition(" ")
            header[key] = int(value)
            idx += 1
        try:
            r1, r2, bands = header["r1"], header["r2"], header["B"]
        except KeyError as exc:
            raise ValueError(f"pattern file missing field {exc.args[0]!r}") from None
        rows = lines[idx + 1: idx + 1 + r1]
        if idx == len(lines) or len(rows) != r1:
            raise ValueError(f"pattern file must list {r1} layout rows")
        layout = np.array([[int(v) for v in row.split()] for row in rows])
        if layout.shape != (r1, r2):
            raise ValueError(f"layout grid is {layout.shape}, header says {(r1, r2)}")
        return cls(layout, bands)


def load_pattern(path) -> SFAPattern:
    return SFAPattern.from_text(Path(path).read_text())


def save_pattern(pattern: SFAPattern, path) -> None:
    Path(path).write_text(pattern.to_text())


def parse_pattern(arg: str) -> SFAPattern:
    """Accept ``"5x5"`` (row-major layout) or a path to a pattern file."""
    if "x" in arg and all(p.isdigit() for p in arg.split("x", 1)):
        r1, r2 = (int(p) for p in arg.split("x", 1))
        return SFAPattern.row_major(r1, r2)
    return load_pattern(arg)


def _check_bands(cube: np.ndarray, pattern: SFAPattern) -> None:
    if cube.ndim != 3:
        raise ValueError(f"expected an (H, W, B) cube, got shape {cube.shape}")
    if cube.shape[2] != pattern.bands:
        raise ValueError(
            f"cube has {cube.shape[2]} bands but the pattern has {pattern.bands}"
        )


def mask_of(pattern: SFAPattern, height: int, width: int) -> np.ndarray:
    """Binary sampling mask, shape ``(H, W, B)``."""
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    bmap = pattern.band_map(height, width)
    return (bmap[..., None] == np.arange(pattern.bands)).astype(np.float64)


def mosaic_sample(cube: np.ndarray, pattern: SFAPattern) -> np.ndarray:
    """Collapse a cube to the single-plane observation seen through the SFA."""
    cube = np.asarray(cube)
    _check_bands(cube, pattern)
    bmap = pattern.band_map(*cube.shape[:2])
    return np.take_along_axis(cube, bmap[..., None], axis=2)[..., 0]


def sparse_expand(mosaic: np.ndarray, pattern: SFAPattern) -> np.ndarray:
    """Place every mosaic sample in its own band; zeros elsewhere."""
    mosaic = np.asarray(mosaic)
    return mask_of(pattern, *mosaic.shape).astype(mosaic.dtype, copy=False) * mosaic[..., None]


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    i: int = 0
    j: int = 0
    axis: str = "horizontal"
    k: int = 1
    scale: float = 1.0

    def validate(self, pattern: SFAPattern) -> None:
        if self.kind == "shift":
            if not (1 <= self.i <= pattern.r1 and 1 <= self.j <= pattern.r2):
                raise ValueError(
                    f"shift ({self.i}, {self.j}) outside [1, {pattern.r1}] x [1, {pattern.r2}]"
                )
        elif self.kind == "flip":
            if self.axis not in ("horizontal", "vertical"):
                raise ValueError(f"unknown flip axis {self.axis!r}")
        elif self.kind == "rotate":
            if self.k not in (1, 2, 3):
                raise ValueError("rotation must be 1, 2 or 3 quarter turns")
        elif self.kind == "resize":
            lo, hi = RESIZE_RANGE
            if not lo <= self.scale <= hi:
                raise ValueError(f"resize scale {self.scale} outside [{lo}, {hi}]")
        elif self.kind != "identity":
            raise ValueError(f"unknown transform kind {self.kind!r}")


IDENTITY = TransformSpec("identity")


def resize_shape(height: int, width: int, scale: float, pattern: SFAPattern) -> tuple[int, int]:
    """Output size of a resize: scaled, then cropped down to a period multiple."""
    h = int(round(height * scale)) // pattern.r1 * pattern.r1
    w = int(round(width * scale)) // pattern.r2 * pattern.r2
    if h < pattern.r1 or w < pattern.r2:
        raise ValueError(
            f"resize by {scale} of a {height}x{width} frame is smaller than one period"
        )
    return h, w


def apply_transform(cube: np.ndarray, spec: TransformSpec, pattern: SFAPattern) -> np.ndarray:
    """Apply one geometric transform identically to every band of ``cube``."""
    spec.validate(pattern)
    cube = np.asarray(cube)
    if spec.kind == "identity":
        return cube.copy()
    if spec.kind == "shift":
        return np.roll(cube, (spec.i, spec.j), axis=(0, 1))
    if spec.kind == "flip":
        return np.flip(cube, axis=1 if spec.axis == "horizontal" else 0).copy()
    if spec.kind == "rotate":
        return np.rot90(cube, spec.k, axes=(0, 1)).copy()
    height, width = cube.shape[:2]
    scaled = (int(round(height * spec.scale)), int(round(width * spec.scale)))
    out_h, out_w = resize_shape(height, width, spec.scale, pattern)
    # align_corners=False sampling grid, same convention as the torch path
    rows = (np.arange(scaled[0]) + 0.5) * height / scaled[0] - 0.5
    cols = (np.arange(scaled[1]) + 0.5) * width / scaled[1] - 0.5
    rr, cc = np.meshgrid(rows[:out_h], cols[:out_w], indexing="ij")
    out = np.empty((out_h, out_w, cube.shape[2]), dtype=np.result_type(cube.dtype, np.float32))
    for b in range(cube.shape[2]):
        out[..., b] = ndimage.map_coordinates(cube[..., b], [rr, cc], order=1, mode="nearest")
    return out


def random_transform(rng: np.random.Generator, pattern: SFAPattern, policy="mixed") -> TransformSpec:
    """Draw a transform.

    ``policy`` is ``"shift"``, ``"mixed"`` (uniform over the four kinds),
    ``"none"`` or a mapping from kind to selection weight.
    """
    if policy == "none":
        return IDENTITY
    if policy == "shift":
        weights = {"shift": 1.0}
    elif policy == "mixed":
        weights = dict.fromkeys(TRANSFORM_KINDS, 1.0)
    else:
        weights = dict(policy)
        unknown = set(weights) - set(TRANSFORM_KINDS)
        if unknown:
            raise ValueError(f"unknown transform kinds {sorted(unknown)}")
    kinds = list(weights)
    p = np.array([weights[k] for k in kinds], dtype=float)
    kind = kinds[rng.choice(len(kinds), p=p / p.sum())]
    if kind == "shift":
        return TransformSpec("shift", i=int(rng.integers(1, pattern.r1 + 1)),
                             j=int(rng.integers(1, pattern.r2 + 1)))
    if kind == "flip":
        return TransformSpec("flip", axis=("horizontal", "vertical")[rng.integers(2)])
    if kind == "rotate":
        return TransformSpec("rotate", k=int(rng.integers(1, 4)))
    return TransformSpec("resize", scale=float(rng.uniform(*RESIZE_RANGE)))


def inverse_pixel_shuffle(band: np.ndarray, r1: int, r2: int) -> np.ndarray:
    """Split a plane into its ``r1*r2`` phase sub-images.

    Returns shape ``(r1*r2, H//r1, W//r2)``; sub-image ``p*r2 + q`` holds the
    pixels at ``(p + r1*m, q + r2*n)``. Trailing rows/cols that do not fill a
    whole period are cropped.
    """
    band = np.asarray(band)
    h, w = band.shape[0] // r1 * r1, band.shape[1] // r2 * r2
    band = band[:h, :w]
    return band.reshape(h // r1, r1, w // r2, r2).transpose(1, 3, 0, 2).reshape(r1 * r2, h // r1, w // r2)


def pixel_shuffle(subs: np.ndarray, r1: int, r2: int) -> np.ndarray:
    """Inverse of :func:`inverse_pixel_shuffle`."""
    subs = np.asarray(subs)
    _, hs, ws = subs.shape
    return subs.reshape(r1, r2, hs, ws).transpose(2, 0, 3, 1).reshape(hs * r1, ws * r2)
