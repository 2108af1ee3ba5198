"""Unsupervised spectral demosaicing with equivariant training."""
from .sfa import SFAPattern, TransformSpec, mask_of, mosaic_sample, sparse_expand
from .interp import wb_interpolate

__all__ = ["SFAPattern", "TransformSpec", "mask_of", "mosaic_sample", "sparse_expand", "wb_interpolate"]
__version__ = "0.1.0"
