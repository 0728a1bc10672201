"""Per-fragment descriptors and the pipeline that computes them.

Each fragment is summarized by a fixed set of searchable properties:
overall size (bounding-box diagonal and aspect ratio), wall thickness,
two roughness histograms (mean curvature and shape index), a CIELab
color histogram, and the global-shape ingredients (compactness, D2
pair-distance histogram, spherical-harmonic energies).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ZeroMassError
from .geometry import (
    minimal_bounding_box,
    mixed_voronoi_areas,
    principal_curvatures,
    sample_surface_points,
    shape_diameter,
    srgb_to_lab,
)
from .geometry.curvature import shape_index
from .geometry.measures import compactness as compute_compactness
from .mesh import TriangleMesh, compute_vertex_normals, decimate
from .spharm import DESCRIPTOR_LENGTH, sh_shape_descriptor

CLASS_SHERD = "sherd"
CLASS_NON_SHERD = "non-sherd"
VALID_CLASSES = (CLASS_SHERD, CLASS_NON_SHERD)

# Bump whenever a change to the descriptor pipeline alters its output;
# persisted stores carrying a different number must be rebuilt.
DESCRIPTOR_VERSION = 1


class PropertyId(str, Enum):
    """Identifiers of the searchable per-fragment properties."""

    SIZE_DIAGONAL = "size_diagonal"
    SIZE_ASPECT_RATIO = "size_aspect_ratio"
    THICKNESS = "thickness"
    ROUGHNESS_K = "roughness_k"
    ROUGHNESS_SI = "roughness_si"
    COLOR = "color"
    SHAPE = "shape"

    def __str__(self) -> str:  # plain value in messages and filenames
        return self.value


ALL_PROPERTIES = tuple(PropertyId)


@dataclass(frozen=True)
class Histogram:
    """Fixed-range 1D histogram with unit total mass."""

    lo: float
    hi: float
    counts: np.ndarray

    def __post_init__(self):
        counts = np.ascontiguousarray(np.asarray(self.counts,
                                                 dtype=np.float64))
        if counts.ndim != 1 or not len(counts):
            raise ValueError(f"counts must be a non-empty vector, "
                             f"got shape {counts.shape}")
        if not np.isfinite(counts).all() or (counts < 0).any():
            raise ValueError("counts must be finite and non-negative")
        if not (self.hi > self.lo):
            raise ValueError(f"need hi > lo, got [{self.lo}, {self.hi}]")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @property
    def bins(self) -> int:
        return len(self.counts)

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.bins

    @property
    def mass(self) -> float:
        return float(self.counts.sum())

    def same_binning(self, other: "Histogram") -> bool:
        return (
            self.bins == other.bins
            and self.lo == other.lo
            and self.hi == other.hi
        )

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.counts)

    @classmethod
    def from_samples(
        cls, values, lo: float, hi: float, bins: int, weights=None
    ) -> "Histogram":
        """Area-normalized histogram; out-of-range values land in the
        edge bins. Raises ZeroMassError when the total weight is zero."""
        values = np.asarray(values, dtype=np.float64)
        if weights is None:
            weights = np.ones(len(values))
        else:
            weights = np.asarray(weights, dtype=np.float64)
        total = float(weights.sum())
        if total <= 0.0:
            raise ZeroMassError(
                f"cannot normalize a histogram with total weight {total}"
            )
        width = (hi - lo) / bins
        idx = np.floor((np.clip(values, lo, hi) - lo) / width).astype(np.int64)
        idx = np.clip(idx, 0, bins - 1)
        counts = np.bincount(idx, weights=weights, minlength=bins)
        return cls(lo=lo, hi=hi, counts=counts / total)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi,
                "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls(lo=d["lo"], hi=d["hi"], counts=np.asarray(d["counts"]))


@dataclass(frozen=True)
class ColorHistogram:
    """Marginal CIELab histograms: one per channel, each unit mass."""

    l: Histogram
    a: Histogram
    b: Histogram

    def same_binning(self, other: "ColorHistogram") -> bool:
        return (
            self.l.same_binning(other.l)
            and self.a.same_binning(other.a)
            and self.b.same_binning(other.b)
        )

    def to_dict(self) -> dict:
        return {"l": self.l.to_dict(), "a": self.a.to_dict(),
                "b": self.b.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ColorHistogram":
        return cls(
            l=Histogram.from_dict(d["l"]),
            a=Histogram.from_dict(d["a"]),
            b=Histogram.from_dict(d["b"]),
        )


@dataclass(frozen=True)
class DescribeParams:
    """Knobs of the descriptor pipeline.

    ``d2_range_max`` is dataset-wide: every fragment's pair-distance
    histogram shares it so the histograms stay comparable (and size
    differences stay visible, since the scale is absolute).
    """

    d2_range_max: float
    seed: int = 0
    decimate_target: int = 6000
    ring_radius: int = 2
    cone_angle_deg: float = 60.0
    ray_count: int = 30
    d2_pairs: int = 100_000
    d2_bins: int = 128
    curvature_bins: int = 200
    curvature_max_abs: float = 2.0  # 1/mm clamp for the K histogram
    color_bins: int = 100
    thickness_bins: int = 64
    min_thickness_faces: int = 10

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "DescribeParams":
        return cls(**d)


@dataclass(frozen=True)
class FragmentDescriptors:
    """Everything the search engine knows about one fragment."""

    fragment_id: str
    fragment_class: str
    size_diagonal: float
    size_aspect_ratio: float
    thickness: float | None
    roughness_k: Histogram
    roughness_si: Histogram
    color: ColorHistogram | None
    d2: Histogram
    compactness: float
    compactness_reliable: bool
    sh_energy: np.ndarray
    source_vertex_count: int
    source_face_count: int
    descriptor_version: int = DESCRIPTOR_VERSION

    def __post_init__(self):
        sh = np.ascontiguousarray(np.asarray(self.sh_energy,
                                             dtype=np.float64))
        if sh.shape != (DESCRIPTOR_LENGTH,):
            raise ValueError(
                f"sh_energy must have length {DESCRIPTOR_LENGTH}, "
                f"got {sh.shape}"
            )
        sh.flags.writeable = False
        object.__setattr__(self, "sh_energy", sh)

    def to_dict(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "fragment_class": self.fragment_class,
            "size_diagonal": self.size_diagonal,
            "size_aspect_ratio": self.size_aspect_ratio,
            "thickness": self.thickness,
            "roughness_k": self.roughness_k.to_dict(),
            "roughness_si": self.roughness_si.to_dict(),
            "color": None if self.color is None else self.color.to_dict(),
            "d2": self.d2.to_dict(),
            "compactness": self.compactness,
            "compactness_reliable": self.compactness_reliable,
            "sh_energy": self.sh_energy.tolist(),
            "source_vertex_count": self.source_vertex_count,
            "source_face_count": self.source_face_count,
            "descriptor_version": self.descriptor_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FragmentDescriptors":
        return cls(
            fragment_id=d["fragment_id"],
            fragment_class=d["fragment_class"],
            size_diagonal=d["size_diagonal"],
            size_aspect_ratio=d["size_aspect_ratio"],
            thickness=d["thickness"],
            roughness_k=Histogram.from_dict(d["roughness_k"]),
            roughness_si=Histogram.from_dict(d["roughness_si"]),
            color=(
                None if d["color"] is None
                else ColorHistogram.from_dict(d["color"])
            ),
            d2=Histogram.from_dict(d["d2"]),
            compactness=d["compactness"],
            compactness_reliable=d["compactness_reliable"],
            sh_energy=np.asarray(d["sh_energy"]),
            source_vertex_count=d["source_vertex_count"],
            source_face_count=d["source_face_count"],
            descriptor_version=d.get("descriptor_version",
                                     DESCRIPTOR_VERSION),
        )


def fragment_rngs(seed: int, fragment_id: str) -> dict[str, np.random.Generator]:
    """Independent, reproducible random streams for one fragment.

    Derived from the global seed and a digest of the fragment id, so
    results do not depend on processing order or thread count.
    """
    digest = hashlib.sha256(fragment_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
    root = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words])
    d2_ss, sh_ss = root.spawn(2)
    return {
        "d2": np.random.default_rng(d2_ss),
        "sh": np.random.default_rng(sh_ss),
    }


def thickness_from_sdf(
    sdf: np.ndarray,
    valid: np.ndarray,
    face_areas: np.ndarray,
    bins: int,
    min_faces: int,
) -> float | None:
    """Reduce per-face diameters to one thickness: the area-weighted
    mean of the values in the most-covered histogram bin.

    Averaging only the modal bin keeps broken rims, decorations and
    probe artifacts from dragging a slab's thickness off its plateau
    value. Returns None when too few faces have a usable diameter.
    """
    values = sdf[valid]
    if len(values) < min_faces:
        return None
    weights = face_areas[valid]
    vmax = float(values.max())
    if vmax <= 0.0:
        return None
    width = vmax / bins
    idx = np.minimum((values / width).astype(np.int64), bins - 1)
    mass = np.bincount(idx, weights=weights, minlength=bins)
    modal = int(np.argmax(mass))
    sel = idx == modal
    return float((values[sel] * weights[sel]).sum() / weights[sel].sum())


def describe_fragment(
    mesh: TriangleMesh,
    fragment_id: str,
    fragment_class: str,
    params: DescribeParams,
) -> FragmentDescriptors:
    """Compute every descriptor for one fragment mesh.

    The mesh is decimated to ``params.decimate_target`` vertices first
    so descriptor cost and smoothing are comparable across differently
    tessellated scans.
    """
    source_v, source_f = mesh.vertex_count, mesh.face_count
    work = mesh
    if mesh.vertex_count > params.decimate_target:
        work = decimate(mesh, params.decimate_target)
    work = compute_vertex_normals(work)
    rngs = fragment_rngs(params.seed, fragment_id)

    box = minimal_bounding_box(work)

    field = principal_curvatures(work, ring_radius=params.ring_radius)
    vmask = field.valid
    k_hist = Histogram.from_samples(
        field.mean_curvature[vmask],
        lo=-params.curvature_max_abs,
        hi=params.curvature_max_abs,
        bins=params.curvature_bins,
        weights=field.areas[vmask],
    )
    si_hist = Histogram.from_samples(
        shape_index(field.k1[vmask], field.k2[vmask]),
        lo=-1.0,
        hi=1.0,
        bins=params.curvature_bins,
        weights=field.areas[vmask],
    )

    face_areas = work.face_areas()
    sdf, sdf_valid = shape_diameter(
        work,
        cone_angle_deg=params.cone_angle_deg,
        ray_count=params.ray_count,
    )
    thickness = thickness_from_sdf(
        sdf, sdf_valid, face_areas,
        bins=params.thickness_bins,
        min_faces=params.min_thickness_faces,
    )

    color = None
    if work.colors is not None:
        lab = srgb_to_lab(work.colors)
        vertex_areas = field.areas
        color = ColorHistogram(
            l=Histogram.from_samples(
                lab[:, 0], 0.0, 100.0, params.color_bins,
                weights=vertex_areas,
            ),
            a=Histogram.from_samples(
                lab[:, 1], -110.0, 110.0, params.color_bins,
                weights=vertex_areas,
            ),
            b=Histogram.from_samples(
                lab[:, 2], -110.0, 110.0, params.color_bins,
                weights=vertex_areas,
            ),
        )

    rng_d2 = rngs["d2"]
    p = sample_surface_points(work, params.d2_pairs, rng_d2)
    q = sample_surface_points(work, params.d2_pairs, rng_d2)
    dists = np.linalg.norm(p - q, axis=1)
    d2_hist = Histogram.from_samples(
        dists, 0.0, params.d2_range_max, params.d2_bins
    )

    comp, comp_reliable = compute_compactness(work)
    sh = sh_shape_descriptor(work, rngs["sh"])

    return FragmentDescriptors(
        fragment_id=fragment_id,
        fragment_class=fragment_class,
        size_diagonal=float(box.diagonal),
        size_aspect_ratio=float(box.aspect_ratio),
        thickness=thickness,
        roughness_k=k_hist,
        roughness_si=si_hist,
        color=color,
        d2=d2_hist,
        compactness=comp,
        compactness_reliable=comp_reliable,
        sh_energy=sh,
        source_vertex_count=source_v,
        source_face_count=source_f,
    )
