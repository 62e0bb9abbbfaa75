"""Desk-scale experiment pipelines built on the library modules."""

from .color import ColorTransferResult, Palette, color_transfer, gray_subspace, make_test_image, quantize
from .gmm import (
    DAReport,
    Gmm,
    LabeledDataset,
    fit_source_gmm,
    fit_target_gmm,
    gmm_da,
    make_da_blobs,
)
from .knn import mk_knn
from .limits import diagonal_instance, mi_limit, mk_limit
from .synthetic import CurveTable, SyntheticConfig, elbow_index, synthetic_noise_curves

__all__ = [
    "ColorTransferResult",
    "CurveTable",
    "DAReport",
    "Gmm",
    "LabeledDataset",
    "Palette",
    "SyntheticConfig",
    "color_transfer",
    "diagonal_instance",
    "elbow_index",
    "fit_source_gmm",
    "fit_target_gmm",
    "gmm_da",
    "gray_subspace",
    "make_da_blobs",
    "make_test_image",
    "mi_limit",
    "mk_knn",
    "mk_limit",
    "quantize",
    "synthetic_noise_curves",
]
