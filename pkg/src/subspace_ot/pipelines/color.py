"""Palette transfer between RGB images through quantized color distributions."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..discrete_ot import (
    DEFAULT_SIZE_LIMIT,
    TransportPlan,
    discrete_mk_details,
    ot_exact,
    sliced_plan,
)
from ..errors import DimensionMismatch
from ..measures import DiscreteMeasure, Subspace
from .gmm import kmeans_labels

LUMA = np.array([0.299, 0.587, 0.114])
GRAY_AXIS = LUMA / np.linalg.norm(LUMA)
METHODS = ("full-OT", "gray-MK", "sliced")


def gray_subspace() -> Subspace:
    return Subspace.from_basis(GRAY_AXIS[:, None])


@dataclass(frozen=True)
class Palette:
    """Cluster centers, their pixel shares, and each pixel's cluster."""

    centers: np.ndarray
    weights: np.ndarray
    labels: np.ndarray

    @property
    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.centers, self.weights)


def quantize(pixels, n_clusters: int, seed=0) -> Palette:
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 3)
    if n_clusters > pixels.shape[0]:
        raise ValueError(f"n_clusters={n_clusters} exceeds pixel count {pixels.shape[0]}")
    centers, labels = kmeans_labels(pixels, n_clusters, seed)
    counts = np.bincount(labels, minlength=n_clusters)
    return Palette(centers, counts / counts.sum(), labels)


@dataclass
class ColorTransferResult:
    image: np.ndarray
    displacement: np.ndarray
    plan: TransportPlan
    source_palette: Palette
    target_palette: Palette
    timings: dict = field(default_factory=dict)
    marginal_plan: TransportPlan | None = None


def color_transfer(
    source_img,
    target_img,
    n_clusters: int = 3000,
    method: str = "gray-MK",
    seed=0,
    n_proj: int = 100,
    bins: int | None = None,
    fiber_cost: str = "complement",
    size_limit: int | None = None,
    output: str = "displaced",
    palettes: tuple | None = None,
) -> ColorTransferResult:
    """Move the source palette onto the target palette.

    Both images (``(h, w, 3)`` arrays, values in [0, 255]) are quantized by
    k-means. The cluster measures are coupled by ``method``; each source
    cluster is displaced to the plan-weighted mean of its targets.
    ``output="displaced"`` shifts every source pixel by its cluster's
    displacement, ``output="quantized"`` replaces it by its cluster's
    mapped center. Values are clipped to [0, 255].

    ``size_limit`` defaults to ``max(4e6, n_clusters^2)`` so that full OT at
    the requested palette size is allowed. ``palettes`` may pass the
    (source, target) quantizations of an earlier call to skip k-means.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if output not in ("displaced", "quantized"):
        raise ValueError("output must be 'displaced' or 'quantized'")
    src = np.asarray(source_img, dtype=float)
    tgt = np.asarray(target_img, dtype=float)
    if src.ndim != 3 or src.shape[2] != 3 or tgt.ndim != 3 or tgt.shape[2] != 3:
        raise DimensionMismatch("images must be (h, w, 3) arrays")
    limit = max(DEFAULT_SIZE_LIMIT, n_clusters**2) if size_limit is None else size_limit

    timings = {}
    t0 = time.perf_counter()
    if palettes is None:
        sp = quantize(src, n_clusters, seed)
        tp = quantize(tgt, n_clusters, seed)
    else:
        sp, tp = palettes
    timings["quantize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    marginal = None
    if method == "full-OT":
        plan, _ = ot_exact(sp.measure, tp.measure, size_limit=limit)
    elif method == "gray-MK":
        res = discrete_mk_details(sp.measure, tp.measure, gray_subspace(), bins, fiber_cost=fiber_cost, size_limit=limit)
        plan, marginal = res.plan, res.marginal_plan
    else:
        plan = sliced_plan(sp.measure, tp.measure, n_proj, seed)
    mapped = plan.barycentric_targets(tp.centers)
    timings["transport"] = time.perf_counter() - t0

    displacement = mapped - sp.centers
    pixels = src.reshape(-1, 3)
    if output == "displaced":
        out = pixels + displacement[sp.labels]
    else:
        out = mapped[sp.labels]
    image = np.clip(out, 0.0, 255.0).reshape(src.shape)
    timings["total"] = timings["quantize"] + timings["transport"]
    return ColorTransferResult(image, displacement, plan, sp, tp, timings, marginal)


def make_test_image(height: int = 64, width: int = 64, seed=0, palette_shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Smooth color gradients plus pixel noise, values in [0, 255]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    phase = rng.uniform(0, 2 * np.pi, (3, 2))
    freq = rng.uniform(1.0, 4.0, (3, 2))
    img = np.empty((height, width, 3))
    for c in range(3):
        img[..., c] = 0.5 + 0.25 * np.sin(2 * np.pi * freq[c, 0] * xx + phase[c, 0]) * np.cos(
            2 * np.pi * freq[c, 1] * yy + phase[c, 1]
        )
    img = 255.0 * img + np.asarray(palette_shift) + rng.normal(0.0, 8.0, img.shape)
    return np.clip(img, 0.0, 255.0)
