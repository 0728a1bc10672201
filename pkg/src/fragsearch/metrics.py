"""Distances between fragment descriptors and the ranking score.

All distances are raw (unnormalized) except the shape composite, whose
ingredients live on incompatible scales and are each divided by a
dataset-level normalizer before mixing.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .descriptors import FragmentDescriptors, Histogram, PropertyId
from .errors import BinningMismatchError

PRODUCT_EPSILON = 1e-12

# order of the shape-composite ingredients everywhere they appear
SHAPE_COMPONENTS = ("compactness", "aspect_ratio", "d2", "sh")


def emd_1d(h1: Histogram, h2: Histogram) -> float:
    """Earth mover's distance between two same-binned 1D histograms.

    For equal-mass 1D histograms the optimal transport cost reduces to
    bin_width * sum |CDF1 - CDF2|, which keeps this both exact and
    O(bins). Raises BinningMismatchError for differently binned inputs.
    """
    if not h1.same_binning(h2):
        raise BinningMismatchError(
            f"histograms not comparable: "
            f"[{h1.lo}, {h1.hi}]/{h1.bins} vs [{h2.lo}, {h2.hi}]/{h2.bins}"
        )
    if abs(h1.mass - h2.mass) > 1e-6:
        raise ValueError(
            f"earth mover's distance needs equal masses, "
            f"got {h1.mass} vs {h2.mass}"
        )
    return float(h1.bin_width * np.abs(np.cumsum(h1.counts - h2.counts)).sum())


def color_distance(a, b) -> float:
    """Sum of per-channel CIELab histogram transport distances."""
    return emd_1d(a.l, b.l) + emd_1d(a.a, b.a) + emd_1d(a.b, b.b)


def sh_l1(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.abs(np.asarray(x) - np.asarray(y)).sum())


def shape_distance_components(
    a: FragmentDescriptors, b: FragmentDescriptors
) -> tuple[float, float, float, float] | None:
    """Raw ingredients of the shape composite, in SHAPE_COMPONENTS order.

    None when either side's volume-based compactness is unreliable
    (open or inconsistently wound mesh): the composite would silently
    mix a garbage term, so the whole pair is masked instead.
    """
    if not (a.compactness_reliable and b.compactness_reliable):
        return None
    return (
        abs(a.compactness - b.compactness),
        abs(a.size_aspect_ratio - b.size_aspect_ratio),
        emd_1d(a.d2, b.d2),
        sh_l1(a.sh_energy, b.sh_energy),
    )


def combine_shape(
    components: Iterable[float],
    normalizers: Iterable[float],
    weights: Iterable[float],
) -> float:
    """Normalized weighted mean of the shape ingredients."""
    comps = np.asarray(list(components), dtype=np.float64)
    norm = np.asarray(list(normalizers), dtype=np.float64)
    w = np.asarray(list(weights), dtype=np.float64)
    if not (len(comps) == len(norm) == len(w) == len(SHAPE_COMPONENTS)):
        raise ValueError(
            f"expected {len(SHAPE_COMPONENTS)} shape components, got "
            f"{len(comps)}/{len(norm)}/{len(w)}"
        )
    if (norm <= 0).any():
        raise ValueError("shape normalizers must be positive")
    if w.sum() <= 0:
        raise ValueError("shape weights must not sum to zero")
    return float((w * (comps / norm)).sum() / w.sum())


def simple_property_distance(
    prop: PropertyId, a: FragmentDescriptors, b: FragmentDescriptors
) -> float | None:
    """Pairwise distance for every property except the shape composite.

    None marks an undefined comparison (a side lacks the measurement);
    undefined entries become masked cells in the distance matrices.
    """
    if prop == PropertyId.SIZE_DIAGONAL:
        return abs(a.size_diagonal - b.size_diagonal)
    if prop == PropertyId.SIZE_ASPECT_RATIO:
        return abs(a.size_aspect_ratio - b.size_aspect_ratio)
    if prop == PropertyId.THICKNESS:
        if a.thickness is None or b.thickness is None:
            return None
        return abs(a.thickness - b.thickness)
    if prop == PropertyId.ROUGHNESS_K:
        return emd_1d(a.roughness_k, b.roughness_k)
    if prop == PropertyId.ROUGHNESS_SI:
        return emd_1d(a.roughness_si, b.roughness_si)
    if prop == PropertyId.COLOR:
        if a.color is None or b.color is None:
            return None
        return color_distance(a.color, b.color)
    raise ValueError(f"no pairwise rule for property {prop!s}")


def robust_normalizer(values: np.ndarray) -> float:
    """Scale estimate for one shape ingredient over a dataset.

    Median of the observed distances; a degenerate (zero) median falls
    back to the mean, and an all-zero sample to 1.0 so normalization
    never divides by zero.
    """
    values = np.asarray(values, dtype=np.float64)
    if not len(values):
        return 1.0
    med = float(np.median(values))
    if med > 0.0:
        return med
    mean = float(values.mean())
    if mean > 0.0:
        return mean
    return 1.0


def product_score(distances: Iterable[float]) -> float:
    """Ranking score: product of the active per-property distances.

    A tiny epsilon keeps exact-zero distances from collapsing the
    product, so a candidate perfect in one property still ranks by the
    others. No active properties gives 0.0 (everything ties).
    """
    ds = list(distances)
    if not ds:
        return 0.0
    out = 1.0
    for d in ds:
        out *= d + PRODUCT_EPSILON
    return float(out)
