"""Deterministic generation of synthetic fragment corpora from JSON recipes.

A recipe describes parametric fragments in three families:

* ``slab`` — a flat rectangular sherd-like plate with controllable width,
  depth, thickness, CIELab color, and surface-roughness amplitude (smooth
  random relief applied to the two large faces).
* ``cap`` — a spherical-shell cap (curved sherd) with controllable sphere
  radius, angular extent, shell thickness, and color.
* ``solid`` — a closed volumetric object (sphere, box, or ellipsoid) with
  optional smooth radial bumps; used as non-sherd material.

Each recipe entry produces ``count`` fragments; scalar parameters may be
given either as a single number (fixed) or as a two-element ``[lo, hi]``
range sampled uniformly.  Generation is fully deterministic: the recipe
seed feeds a :class:`numpy.random.SeedSequence`, which is split into one
independent stream per fragment, so the same recipe and seed always
produce bitwise-identical files.

Outputs written to the target directory:

* one binary PLY file per fragment (vertex colors included),
* ``classes.json`` — the class-assignment manifest consumed by ingestion,
* ``ground_truth.json`` — true thickness, color, size, and group labels.

Example recipe::

    {
      "name": "demo",
      "seed": 7,
      "fragments": [
        {"kind": "slab", "prefix": "a", "count": 3, "class": "sherd",
         "group_label": "cluster-a",
         "width_mm": [28, 36], "depth_mm": [20, 27],
         "thickness_mm": 5.0, "roughness_mm": [0.05, 0.3],
         "lab": [55, 30, 25], "lab_jitter": 2.5}
      ]
    }
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .descriptors import VALID_CLASSES
from .errors import RecipeError
from .geometry.color import lab_to_srgb
from .mesh import TriangleMesh, save_mesh

log = logging.getLogger(__name__)

CLASSES_FILE = "classes.json"
GROUND_TRUTH_FILE = "ground_truth.json"

_KINDS = ("slab", "cap", "solid")
_SOLID_SHAPES = ("sphere", "box", "ellipsoid")

# Per-kind recognized keys beyond the shared ones; unknown keys are
# rejected so that typos fail loudly instead of silently using defaults.
_COMMON_KEYS = {
    "kind", "prefix", "count", "class", "group_label", "collection",
    "lab", "lab_jitter", "resolution_mm",
}
_KIND_KEYS = {
    "slab": {"width_mm", "depth_mm", "thickness_mm", "roughness_mm",
             "relief_scale", "relief_aspect", "relief_skew",
             "pimple_count", "pimple_height_mm", "pimple_sigma_mm",
             "draft_mm"},
    "cap": {"radius_mm", "arc_deg", "chord_mm", "curvature_ratio",
            "thickness_mm", "roughness_mm",
            "relief_scale", "relief_aspect", "relief_skew",
            "pimple_count", "pimple_height_mm", "pimple_sigma_mm",
            "rim_skew_mm"},
    "solid": {"shape", "diameter_mm", "bump_mm", "bump_wavelength_mm",
              "axis_ratio"},
}


@dataclass(frozen=True)
class GenerationSummary:
    """What a corpus generation run produced.

    Attributes:
        out_dir: Directory the files were written into.
        fragment_ids: Generated fragment identifiers, in generation order.
        classes_path: Path of the class-assignment manifest.
        ground_truth_path: Path of the ground-truth record file.
        seed: The seed that drove generation.
    """

    out_dir: Path
    fragment_ids: tuple[str, ...]
    classes_path: Path
    ground_truth_path: Path
    seed: int


# ---------------------------------------------------------------------------
# recipe parsing

def load_recipe(path) -> dict:
    """Read and validate a recipe file.

    Args:
        path: JSON recipe file.

    Returns:
        The parsed recipe dictionary.

    Raises:
        RecipeError: if the file is not valid JSON or violates the recipe
            contract.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RecipeError(f"cannot read recipe {path}: {exc}") from exc
    try:
        recipe = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecipeError(f"recipe {path} is not valid JSON: {exc}") from exc
    validate_recipe(recipe)
    return recipe


def validate_recipe(recipe) -> None:
    """Check recipe structure; raise :class:`RecipeError` on any violation."""
    if not isinstance(recipe, dict):
        raise RecipeError("recipe must be a JSON object")
    unknown = set(recipe) - {"name", "description", "seed", "fragments"}
    if unknown:
        raise RecipeError(f"unknown recipe keys: {sorted(unknown)}")
    entries = recipe.get("fragments")
    if not isinstance(entries, list) or not entries:
        raise RecipeError("recipe must contain a non-empty 'fragments' list")
    seed = recipe.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise RecipeError("recipe seed must be a non-negative integer")
    seen: set[str] = set()
    for pos, entry in enumerate(entries):
        label = f"fragments[{pos}]"
        _validate_entry(entry, label)
        for fid in _entry_ids(entry):
            if fid in seen:
                raise RecipeError(f"{label}: duplicate fragment id '{fid}'")
            seen.add(fid)


def _validate_entry(entry, label: str) -> None:
    if not isinstance(entry, dict):
        raise RecipeError(f"{label} must be an object")
    kind = entry.get("kind")
    if kind not in _KINDS:
        raise RecipeError(f"{label}: kind must be one of {_KINDS}, got {kind!r}")
    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    unknown = set(entry) - allowed
    if unknown:
        raise RecipeError(f"{label}: unknown keys {sorted(unknown)}")
    prefix = entry.get("prefix")
    if not isinstance(prefix, str) or not prefix:
        raise RecipeError(f"{label}: 'prefix' must be a non-empty string")
    count = entry.get("count", 1)
    if not isinstance(count, int) or count < 1:
        raise RecipeError(f"{label}: 'count' must be a positive integer")
    cls = entry.get("class")
    if cls not in VALID_CLASSES:
        raise RecipeError(
            f"{label}: 'class' must be one of {list(VALID_CLASSES)}, got {cls!r}"
        )
    lab = entry.get("lab")
    if (not isinstance(lab, list) or len(lab) != 3
            or not all(isinstance(v, (int, float)) for v in lab)):
        raise RecipeError(f"{label}: 'lab' must be a list of three numbers")
    for key in _KIND_KEYS[kind] - {"shape"}:
        if key in entry:
            _check_range(entry[key], f"{label}.{key}")
    required = {
        "slab": ("width_mm", "depth_mm", "thickness_mm"),
        "cap": ("thickness_mm",),
        "solid": ("diameter_mm",),
    }[kind]
    for key in required:
        if key not in entry:
            raise RecipeError(f"{label}: missing required key '{key}'")
    if kind == "cap":
        polar = "radius_mm" in entry and "arc_deg" in entry
        chord = "chord_mm" in entry and "curvature_ratio" in entry
        if not polar and not chord:
            raise RecipeError(
                f"{label}: cap needs either radius_mm + arc_deg or "
                "chord_mm + curvature_ratio"
            )
    if kind == "solid":
        shape = entry.get("shape", "sphere")
        if shape not in _SOLID_SHAPES:
            raise RecipeError(
                f"{label}: shape must be one of {_SOLID_SHAPES}, got {shape!r}"
            )


def _check_range(value, label: str) -> None:
    if isinstance(value, (int, float)):
        return
    if (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) for v in value)):
        lo, hi = value
        if lo > hi:
            raise RecipeError(f"{label}: range [{lo}, {hi}] has lo > hi")
        return
    if isinstance(value, dict):
        unknown = set(value) - {"stratify", "log", "shuffle"}
        if unknown:
            raise RecipeError(f"{label}: unknown keys {sorted(unknown)}")
        strat = value.get("stratify")
        if (not isinstance(strat, list) or len(strat) != 2
                or not all(isinstance(v, (int, float)) for v in strat)
                or strat[0] > strat[1]):
            raise RecipeError(f"{label}: 'stratify' must be a [lo, hi] range")
        if value.get("log") and strat[0] <= 0:
            raise RecipeError(f"{label}: log stratification needs lo > 0")
        return
    raise RecipeError(
        f"{label}: expected a number, [lo, hi] range, or stratify spec"
    )


def _entry_ids(entry: dict) -> list[str]:
    prefix = entry["prefix"]
    count = entry.get("count", 1)
    if count == 1:
        return [prefix]
    return [f"{prefix}{i:02d}" for i in range(count)]


def _sample(value, rng: np.random.Generator, index: int = 0,
            count: int = 1) -> float:
    """Resolve a recipe value for one entry member to a concrete float.

    Supports three forms: a fixed number; a ``[lo, hi]`` range sampled
    uniformly; or a stratified spec ``{"stratify": [lo, hi]}`` that
    assigns member ``index`` of ``count`` a jittered value inside its own
    stratum of the range, optionally log-spaced (``"log": true``) or
    permuted across members (``"shuffle": k`` for a fixed affine
    permutation), so members spread evenly instead of bunching.
    """
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        lo, hi = value["stratify"]
        shuffle = int(value.get("shuffle", 0))
        pos = (index * shuffle + shuffle) % count if shuffle else index
        u = (pos + rng.uniform()) / count
        if value.get("log"):
            return float(lo * (hi / lo) ** u)
        return float(lo + (hi - lo) * u)
    lo, hi = value
    return float(rng.uniform(lo, hi))


# ---------------------------------------------------------------------------
# mesh builders

def _smooth_grid_noise(shape: tuple[int, int], rng: np.random.Generator,
                       sigma: float = 2.0, mode="nearest",
                       aspect: float = 1.0,
                       skew: float = 0.0) -> np.ndarray:
    """Correlated random relief on a grid, scaled to unit max amplitude.

    ``aspect`` stretches the correlation length along the first axis
    while shrinking it along the second, turning blob-like relief into
    ridge-like corrugations as it grows past 1.  ``skew`` biases the
    field upward or downward, trading domes against bowls.
    """
    white = rng.standard_normal(shape)
    sig = (sigma * aspect, max(0.8, sigma / aspect))
    smooth = gaussian_filter(white, sigma=sig, mode=mode)
    peak = np.abs(smooth).max()
    if peak > 0:
        smooth /= peak
    if skew:
        smooth = smooth + skew * smooth**2
        peak = np.abs(smooth).max()
        if peak > 0:
            smooth /= peak
    return smooth


def _pimple_field(shape: tuple[int, int], rng: np.random.Generator,
                  count: float, height: float, sigma: float,
                  spacing: tuple[float, float],
                  wrap_cols: bool = False) -> np.ndarray:
    """Sum of small, sharply curved Gaussian bumps and pits on a lattice.

    Unlike the broad correlated relief, these features are only a few mm
    across, so they carry principal curvatures of order ``height /
    sigma**2`` — strong enough to register in curvature statistics.

    Args:
        shape: Lattice shape (rows, cols).
        rng: Random stream for positions, amplitudes and signs.
        count: Number of features to place (rounded to an integer).
        height: Peak feature amplitude in mm; individual features vary
            between 55% and 100% of it, and roughly 40% point inward.
        sigma: Gaussian radius of a feature in mm.
        spacing: Approximate lattice spacing in mm along (rows, cols),
            used to convert ``sigma`` into lattice units.
        wrap_cols: Treat the column axis as periodic.

    Returns:
        A float array of the given shape with the summed displacements.
    """
    field = np.zeros(shape)
    n = int(round(count))
    if n <= 0 or height <= 0 or sigma <= 0:
        return field
    rows_idx = np.arange(shape[0], dtype=np.float64)[:, None]
    cols_idx = np.arange(shape[1], dtype=np.float64)[None, :]
    sig_r = max(sigma / spacing[0], 1e-6)
    sig_c = max(sigma / spacing[1], 1e-6)
    for _ in range(n):
        r0 = rng.uniform(0.0, shape[0] - 1.0)
        c0 = rng.uniform(0.0, shape[1] - 1.0)
        amp = height * (0.55 + 0.45 * rng.uniform())
        if rng.uniform() < 0.4:
            amp = -amp
        dr = (rows_idx - r0) / sig_r
        dc = cols_idx - c0
        if wrap_cols:
            dc = dc - shape[1] * np.round(dc / shape[1])
        dc = dc / sig_c
        field += amp * np.exp(-0.5 * (dr * dr + dc * dc))
    return field


def slab_mesh(width: float, depth: float, thickness: float,
              roughness: float = 0.0,
              rng: np.random.Generator | None = None,
              resolution: float = 1.6,
              relief_scale: float = 2.0,
              relief_aspect: float = 1.0,
              relief_skew: float = 0.0,
              pimple_count: float = 0.0,
              pimple_height: float = 0.0,
              pimple_sigma: float = 1.2,
              draft: float = 0.0) -> TriangleMesh:
    """Build a closed rectangular plate with optional surface relief.

    The two large faces are regular grids displaced by smooth random
    noise of the given amplitude plus optional small sharp bumps; all
    relief tapers to zero at the rim so the four side walls stay planar
    and the mesh stays watertight.  A positive ``draft`` insets the
    bottom face, slanting the side walls like an oblique fracture.

    Args:
        width: Extent along x in mm.
        depth: Extent along y in mm.
        thickness: Extent along z in mm.
        roughness: Peak relief amplitude in mm (0 disables the noise).
        rng: Random stream for the relief; required when any relief is
            enabled.
        resolution: Approximate grid spacing in mm.
        relief_scale: Noise correlation length in grid cells; larger
            values give broader, gentler bumps.
        relief_aspect: Relief anisotropy; values far from 1 give
            ridge-like rather than blob-like bumps.
        relief_skew: Bias toward domes (positive) or bowls (negative).
        pimple_count: Number of sharp mm-scale bumps/pits per face.
        pimple_height: Peak pimple amplitude in mm.
        pimple_sigma: Gaussian radius of a pimple in mm.
        draft: Inward offset of the bottom face rim in mm; 0 keeps the
            side walls vertical.

    Returns:
        A watertight, consistently oriented TriangleMesh (no colors).
    """
    if min(width, depth, thickness) <= 0:
        raise ValueError("slab dimensions must be positive")
    if not 0 <= draft < min(width, depth) / 2.0:
        raise ValueError("draft must be in [0, min(width, depth)/2)")
    textured = roughness > 0 or (pimple_count >= 1 and pimple_height > 0)
    if textured and rng is None:
        raise ValueError("surface relief requires an rng")
    nx = max(2, int(round(width / resolution)))
    ny = max(2, int(round(depth / resolution)))
    xs = np.linspace(-width / 2.0, width / 2.0, nx + 1)
    ys = np.linspace(-depth / 2.0, depth / 2.0, ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # shape (ny+1, nx+1)

    z_top = np.full(gx.shape, thickness / 2.0)
    z_bot = np.full(gx.shape, -thickness / 2.0)
    if textured:
        spacing = (depth / ny, width / nx)
        edge = np.minimum.reduce([
            gx - xs[0], xs[-1] - gx, gy - ys[0], ys[-1] - gy,
        ])
        taper = np.clip(edge / 2.0, 0.0, 1.0)
        for sign, z in ((1.0, z_top), (-1.0, z_bot)):
            relief = np.zeros(gx.shape)
            if roughness > 0:
                relief += roughness * _smooth_grid_noise(
                    gx.shape, rng, relief_scale, aspect=relief_aspect,
                    skew=relief_skew)
            relief += _pimple_field(gx.shape, rng, pimple_count,
                                    pimple_height, pimple_sigma, spacing)
            z += sign * relief * taper

    sheet = np.stack([gx, gy, z_top], axis=-1).reshape(-1, 3)
    shrink = (1.0 - 2.0 * draft / width, 1.0 - 2.0 * draft / depth)
    sheet_b = np.stack(
        [gx * shrink[0], gy * shrink[1], z_bot], axis=-1).reshape(-1, 3)
    vertices = np.vstack([sheet, sheet_b])
    off = sheet.shape[0]

    def vt(i: int, j: int) -> int:
        return j * (nx + 1) + i

    def vb(i: int, j: int) -> int:
        return off + j * (nx + 1) + i

    faces: list[tuple[int, int, int]] = []
    for j in range(ny):
        for i in range(nx):
            a, b = vt(i, j), vt(i + 1, j)
            c, d = vt(i + 1, j + 1), vt(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
            a, b = vb(i, j), vb(i + 1, j)
            c, d = vb(i + 1, j + 1), vb(i, j + 1)
            faces += [(a, c, b), (a, d, c)]
    for i in range(nx):  # y = min (outward -y) and y = max (outward +y)
        faces += [(vt(i, 0), vb(i, 0), vb(i + 1, 0)),
                  (vt(i, 0), vb(i + 1, 0), vt(i + 1, 0))]
        faces += [(vt(i + 1, ny), vb(i + 1, ny), vb(i, ny)),
                  (vt(i + 1, ny), vb(i, ny), vt(i, ny))]
    for j in range(ny):  # x = min (outward -x) and x = max (outward +x)
        faces += [(vt(0, j + 1), vb(0, j + 1), vb(0, j)),
                  (vt(0, j + 1), vb(0, j), vt(0, j))]
        faces += [(vt(nx, j), vb(nx, j), vb(nx, j + 1)),
                  (vt(nx, j), vb(nx, j + 1), vt(nx, j + 1))]
    return TriangleMesh(
        vertices=vertices, faces=np.asarray(faces, dtype=np.int64)
    )


def cap_mesh(radius: float, thickness: float, arc_deg: float,
             resolution: float = 1.6,
             roughness: float = 0.0,
             rng: np.random.Generator | None = None,
             relief_scale: float = 2.0,
             relief_aspect: float = 1.0,
             relief_skew: float = 0.0,
             pimple_count: float = 0.0,
             pimple_height: float = 0.0,
             pimple_sigma: float = 1.2,
             rim_skew: float = 0.0) -> TriangleMesh:
    """Build a closed spherical-shell cap (a curved sherd).

    The cap is the portion of a hollow sphere with outer radius
    ``radius`` and shell ``thickness`` covered by polar angles up to
    ``arc_deg``, closed by an annular rim.  The apex points along +z and
    the sphere center sits at the origin.  Optional relief (smooth noise
    plus small sharp bumps) perturbs the outer surface radially,
    tapering to zero at the rim so the rim annulus keeps its exact
    width.  A nonzero ``rim_skew`` slides the inner rim circle along
    the sphere, slanting the rim cut like an oblique fracture.

    Args:
        radius: Outer sphere radius in mm.
        thickness: Shell thickness in mm (must be < radius).
        arc_deg: Polar angular extent of the cap in degrees (0 < arc < 90).
        resolution: Approximate vertex spacing in mm.
        roughness: Peak outer-surface relief amplitude in mm.
        rng: Random stream for the relief; required when any relief is
            enabled.
        relief_scale: Noise correlation length in lattice cells.
        relief_aspect: Relief anisotropy; values far from 1 give
            ridge-like rather than blob-like bumps.
        relief_skew: Bias toward domes (positive) or bowls (negative).
        pimple_count: Number of sharp mm-scale bumps/pits.
        pimple_height: Peak pimple amplitude in mm.
        pimple_sigma: Gaussian radius of a pimple in mm.
        rim_skew: Arc-length offset in mm of the inner rim circle
            relative to a perpendicular cut; positive pulls it toward
            the pole.

    Returns:
        A watertight, consistently oriented TriangleMesh (no colors).
    """
    if not 0 < thickness < radius:
        raise ValueError("cap thickness must be in (0, radius)")
    if not 0 < arc_deg < 90:
        raise ValueError("cap arc must be in (0, 90) degrees")
    textured = roughness > 0 or (pimple_count >= 1 and pimple_height > 0)
    if textured and rng is None:
        raise ValueError("surface relief requires an rng")
    theta_max = math.radians(arc_deg)
    inner = radius - thickness
    theta_inner = theta_max - rim_skew / radius
    if not 0 < theta_inner < math.pi / 2:
        raise ValueError("rim_skew too large for this cap")
    rows = max(4, int(round(radius * theta_max / resolution)))
    cols = max(12, int(round(2.0 * math.pi * radius * math.sin(theta_max)
                             / resolution)))

    thetas = theta_max * np.arange(1, rows + 1) / rows
    phis = 2.0 * math.pi * np.arange(cols) / cols
    st, ct = np.sin(thetas), np.cos(thetas)
    cp, sp = np.cos(phis), np.sin(phis)
    # unit directions for each (ring, column) lattice point
    dirs = np.stack([
        np.outer(st, cp), np.outer(st, sp),
        np.broadcast_to(ct[:, None], (rows, cols)).copy(),
    ], axis=-1).reshape(-1, 3)
    ti = theta_inner * np.arange(1, rows + 1) / rows
    sti, cti = np.sin(ti), np.cos(ti)
    dirs_in = np.stack([
        np.outer(sti, cp), np.outer(sti, sp),
        np.broadcast_to(cti[:, None], (rows, cols)).copy(),
    ], axis=-1).reshape(-1, 3)

    outer_r = np.full((rows, cols), radius)
    pole_r = radius
    if textured:
        relief = np.zeros((rows + 1, cols))
        if roughness > 0:
            relief += roughness * _smooth_grid_noise(
                (rows + 1, cols), rng, relief_scale,
                mode=("nearest", "wrap"), aspect=relief_aspect,
                skew=relief_skew)
        # mm spacing of the lattice: rows step along the meridian, columns
        # around a mid-cap parallel
        spacing = (radius * theta_max / rows,
                   2.0 * math.pi * radius * math.sin(0.6 * theta_max) / cols)
        relief += _pimple_field((rows + 1, cols), rng, pimple_count,
                                pimple_height, pimple_sigma, spacing,
                                wrap_cols=True)
        taper = np.clip((theta_max - thetas) * radius / 2.0, 0.0, 1.0)
        outer_r = radius + relief[1:] * taper[:, None]
        pole_r = radius + float(relief[0].mean())

    pole = np.array([[0.0, 0.0, 1.0]])
    vertices = np.vstack([
        pole_r * pole, outer_r.reshape(-1, 1) * dirs,
        inner * pole, inner * dirs_in,
    ])
    n_shell = 1 + rows * cols

    def vo(j: int, i: int) -> int:  # outer ring j (1-based), column i
        return 1 + (j - 1) * cols + i % cols

    def vi(j: int, i: int) -> int:
        return n_shell + 1 + (j - 1) * cols + i % cols

    faces: list[tuple[int, int, int]] = []
    for i in range(cols):
        faces.append((0, vo(1, i), vo(1, i + 1)))
        faces.append((n_shell, vi(1, i + 1), vi(1, i)))
    for j in range(1, rows):
        for i in range(cols):
            a, b = vo(j, i), vo(j + 1, i)
            c, d = vo(j + 1, i + 1), vo(j, i + 1)
            faces += [(a, b, c), (a, c, d)]
            a, b = vi(j, i), vi(j + 1, i)
            c, d = vi(j + 1, i + 1), vi(j, i + 1)
            faces += [(a, c, b), (a, d, c)]
    for i in range(cols):  # rim annulus at theta_max, outward normal
        faces += [(vo(rows, i), vi(rows, i), vi(rows, i + 1)),
                  (vo(rows, i), vi(rows, i + 1), vo(rows, i + 1))]
    return TriangleMesh(
        vertices=vertices, faces=np.asarray(faces, dtype=np.int64)
    )


def _icosphere(subdivisions: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere vertices/faces via midpoint subdivision."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts_list = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = np.array(verts_list[a]) + np.array(verts_list[b])
                m /= np.linalg.norm(m)
                cache[key] = len(verts_list)
                verts_list.append(tuple(m))
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return (np.asarray(verts_list, dtype=np.float64),
            np.asarray(faces, dtype=np.int64))


def _wave_noise(points: np.ndarray, rng: np.random.Generator,
                wavelength: float, octaves: int = 6) -> np.ndarray:
    """Smooth random field over 3-D points, scaled to unit max amplitude."""
    total = np.zeros(len(points))
    for _ in range(octaves):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        k = direction * 2.0 * math.pi / (wavelength * rng.uniform(0.75, 1.25))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        total += rng.uniform(0.5, 1.0) * np.cos(points @ k + phase)
    peak = np.abs(total).max()
    if peak > 0:
        total /= peak
    return total


def solid_mesh(shape: str, diameter: float, bump: float = 0.0,
               axis_ratio: tuple[float, float] = (0.97, 0.94),
               rng: np.random.Generator | None = None,
               subdivisions: int = 3,
               bump_wavelength: float = 6.0) -> TriangleMesh:
    """Build a closed volumetric solid: sphere, box, or ellipsoid.

    Args:
        shape: One of ``sphere``, ``box``, ``ellipsoid``.
        diameter: Longest extent in mm.
        bump: Peak amplitude in mm of smooth radial bumps (spheres and
            ellipsoids only; ignored for boxes).
        axis_ratio: Relative second/third axis lengths for ellipsoids.
        rng: Random stream for the bumps; required when bump > 0.
        subdivisions: Icosphere subdivision level for curved shapes.
        bump_wavelength: Characteristic bump size in mm.

    Returns:
        A watertight, consistently oriented TriangleMesh (no colors).
    """
    if shape not in _SOLID_SHAPES:
        raise ValueError(f"unknown solid shape {shape!r}")
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    if shape == "box":
        return slab_mesh(diameter, 0.97 * diameter, 0.95 * diameter)
    verts, faces = _icosphere(subdivisions)
    radii = np.full(3, diameter / 2.0)
    if shape == "ellipsoid":
        radii[1] *= axis_ratio[0]
        radii[2] *= axis_ratio[1]
    vertices = verts * radii
    if bump > 0:
        if rng is None:
            raise ValueError("bumps require an rng")
        relief = _wave_noise(vertices, rng, wavelength=bump_wavelength)
        vertices = vertices + verts * (bump * relief)[:, None]
    return TriangleMesh(vertices=vertices, faces=faces)


# ---------------------------------------------------------------------------
# corpus generation

def _build_fragment(entry: dict, rng: np.random.Generator,
                    index: int, count: int) -> tuple[TriangleMesh, dict]:
    """Build member ``index`` of an entry plus its ground-truth fields."""
    kind = entry["kind"]
    lab_center = np.asarray(entry["lab"], dtype=np.float64)
    jitter = float(entry.get("lab_jitter", 0.0))
    lab = lab_center + rng.uniform(-jitter, jitter, size=3)
    resolution = float(entry.get("resolution_mm", 1.6))

    def pick(key, default=None):
        value = entry.get(key, default) if default is not None else entry[key]
        return _sample(value, rng, index, count)

    truth: dict = {"kind": kind, "lab": [round(v, 4) for v in lab]}
    if kind == "slab":
        width = pick("width_mm")
        depth = pick("depth_mm")
        thickness = pick("thickness_mm")
        roughness = pick("roughness_mm", 0.0)
        relief_scale = pick("relief_scale", 2.0)
        relief_aspect = pick("relief_aspect", 1.0)
        relief_skew = _sample(entry.get("relief_skew", 0.0), rng,
                              index, count)
        mesh = slab_mesh(width, depth, thickness, roughness, rng,
                         resolution, relief_scale, relief_aspect,
                         relief_skew, pick("pimple_count", 0.0),
                         pick("pimple_height_mm", 0.0),
                         pick("pimple_sigma_mm", 1.2),
                         pick("draft_mm", 0.0))
        truth.update(thickness_mm=round(thickness, 4),
                     roughness_mm=round(roughness, 4))
    elif kind == "cap":
        if "chord_mm" in entry:
            chord = pick("chord_mm")
            ratio = pick("curvature_ratio")
            radius = ratio * chord / 2.0
            arc = math.degrees(math.asin(1.0 / ratio))
        else:
            radius = pick("radius_mm")
            arc = pick("arc_deg")
        thickness = pick("thickness_mm")
        roughness = pick("roughness_mm", 0.0)
        relief_scale = pick("relief_scale", 2.0)
        relief_aspect = pick("relief_aspect", 1.0)
        relief_skew = _sample(entry.get("relief_skew", 0.0), rng,
                              index, count)
        mesh = cap_mesh(radius, thickness, arc, resolution, roughness,
                        rng, relief_scale, relief_aspect, relief_skew,
                        pick("pimple_count", 0.0),
                        pick("pimple_height_mm", 0.0),
                        pick("pimple_sigma_mm", 1.2),
                        pick("rim_skew_mm", 0.0))
        truth.update(thickness_mm=round(thickness, 4),
                     radius_mm=round(radius, 4), arc_deg=round(arc, 4),
                     roughness_mm=round(roughness, 4))
    else:
        shape = entry.get("shape", "sphere")
        diameter = pick("diameter_mm")
        bump = pick("bump_mm", 0.0)
        wavelength = pick("bump_wavelength_mm", 6.0)
        ratio_spec = entry.get("axis_ratio", [0.93, 0.99])
        ratios = sorted(
            (_sample(ratio_spec, rng), _sample(ratio_spec, rng)),
            reverse=True,
        )
        mesh = solid_mesh(shape, diameter, bump, tuple(ratios), rng,
                          bump_wavelength=wavelength)
        truth.update(shape=shape, diameter_mm=round(diameter, 4),
                     thickness_mm=None)

    color = np.tile(lab_to_srgb(lab), (mesh.vertices.shape[0], 1))
    mesh = TriangleMesh(vertices=mesh.vertices, faces=mesh.faces,
                        colors=color)
    extent = mesh.bounding_extent()
    truth["size_mm"] = [round(float(v), 4) for v in extent]
    return mesh, truth


def generate_corpus(recipe: dict, out_dir, seed: int | None = None,
                    ) -> GenerationSummary:
    """Generate every fragment of a recipe into a directory.

    Args:
        recipe: Parsed recipe (see :func:`load_recipe`).
        out_dir: Target directory; created if missing.
        seed: Overrides the recipe's seed when given.

    Returns:
        A GenerationSummary listing the written artifacts.

    Raises:
        RecipeError: if the recipe is invalid.
    """
    validate_recipe(recipe)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    used_seed = int(recipe.get("seed", 0)) if seed is None else int(seed)

    jobs: list[tuple[str, dict, int, int]] = []
    for entry in recipe["fragments"]:
        ids = _entry_ids(entry)
        for index, fid in enumerate(ids):
            jobs.append((fid, entry, index, len(ids)))
    streams = np.random.SeedSequence(used_seed).spawn(len(jobs))

    manifest_rows = []
    truth_rows = []
    fragment_ids = []
    for (fid, entry, index, count), stream in zip(jobs, streams):
        rng = np.random.default_rng(stream)
        mesh, truth = _build_fragment(entry, rng, index, count)
        mesh_name = f"{fid}.ply"
        save_mesh(mesh, out_dir / mesh_name)
        manifest_rows.append({
            "path": mesh_name,
            "fragment_id": fid,
            "class": entry["class"],
            "collection": entry.get("collection", "synthetic"),
            "group_label": entry.get("group_label"),
        })
        truth_rows.append({
            "fragment_id": fid,
            "class": entry["class"],
            "group_label": entry.get("group_label"),
            **truth,
        })
        fragment_ids.append(fid)
        log.info("generated %s (%s, %d vertices)", fid, entry["kind"],
                 mesh.vertices.shape[0])

    classes_path = out_dir / CLASSES_FILE
    truth_path = out_dir / GROUND_TRUTH_FILE
    _write_json(classes_path, {"fragments": manifest_rows})
    _write_json(truth_path, {
        "recipe_name": recipe.get("name", ""),
        "seed": used_seed,
        "fragments": truth_rows,
    })
    return GenerationSummary(
        out_dir=out_dir,
        fragment_ids=tuple(fragment_ids),
        classes_path=classes_path,
        ground_truth_path=truth_path,
        seed=used_seed,
    )


def _write_json(path: Path, obj) -> None:
    data = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    path.write_text(data, encoding="utf-8")
