"""Discrete principal curvatures via local quadric fitting.

Curvature sign follows the surface orientation: convex regions of an
outward-wound mesh get positive principal curvatures. Units are 1/mm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..mesh import TriangleMesh, compute_vertex_normals

MIN_NEIGHBORS = 5


@dataclass(frozen=True)
class CurvatureField:
    """Per-vertex principal curvatures with ``k2 >= k1``.

    ``valid`` is False where the estimate is unusable (undefined
    normal, too few neighbours, or a rank-deficient fit); ``areas``
    carries mixed-Voronoi vertex areas for area-weighted statistics.
    """

    k1: np.ndarray
    k2: np.ndarray
    valid: np.ndarray
    areas: np.ndarray

    @property
    def mean_curvature(self) -> np.ndarray:
        return 0.5 * (self.k1 + self.k2)


def mixed_voronoi_areas(mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex mixed Voronoi areas (mm^2).

    Non-obtuse triangles are split by the circumcenter Voronoi cells;
    obtuse ones give half their area to the obtuse corner and a quarter
    to each other corner. The per-face contributions sum exactly to the
    face area, so the vertex areas partition the total surface area.
    """
    v = mesh.vertices
    f = mesh.faces
    p = [v[f[:, k]] for k in range(3)]
    # edge vectors opposite each corner
    e = [p[(k + 2) % 3] - p[(k + 1) % 3] for k in range(3)]
    sq = [np.einsum("ij,ij->i", ek, ek) for ek in e]
    cross = np.cross(p[1] - p[0], p[2] - p[0])
    double_area = np.linalg.norm(cross, axis=1)
    areas = 0.5 * double_area
    ok = double_area > 1e-300

    # cot at corner k = (opposite edges dot) / (2 * area); use the
    # standard identity cot(theta_k) = (sq_a + sq_b - sq_c) / (4 * area)
    # with c the edge opposite corner k
    cots = []
    for k in range(3):
        num = sq[(k + 1) % 3] + sq[(k + 2) % 3] - sq[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            cots.append(np.where(ok, num / (4.0 * areas), 0.0))

    obtuse_at = [cots[k] < 0.0 for k in range(3)]
    any_obtuse = obtuse_at[0] | obtuse_at[1] | obtuse_at[2]

    out = np.zeros(mesh.vertex_count)
    for k in range(3):
        voronoi = 0.125 * (
            sq[(k + 1) % 3] * cots[(k + 1) % 3]
            + sq[(k + 2) % 3] * cots[(k + 2) % 3]
        )
        obtuse_share = np.where(obtuse_at[k], 0.5 * areas, 0.25 * areas)
        contrib = np.where(any_obtuse, obtuse_share, voronoi)
        np.add.at(out, f[:, k], np.where(ok, contrib, 0.0))
    return out


def _ring_neighborhoods(mesh: TriangleMesh, ring_radius: int) -> sp.csr_matrix:
    """Sparse reachability within ``ring_radius`` edge hops."""
    n = mesh.vertex_count
    edges, _ = mesh.edge_face_counts()
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix(
        (np.ones(len(i), dtype=np.float64), (i, j)), shape=(n, n)
    )
    reach = adj.copy()
    for _ in range(ring_radius - 1):
        reach = reach + reach @ adj
    return reach.tocsr()


def _tangent_frame(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0])
    if abs(w[0]) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = np.cross(w, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(w, u)


def principal_curvatures(
    mesh: TriangleMesh, ring_radius: int = 2
) -> CurvatureField:
    """Estimate per-vertex principal curvatures (k2 >= k1, units 1/mm).

    For each vertex, neighbours within ``ring_radius`` edge hops are
    expressed in a tangent frame whose z axis points along the *inward*
    normal, and a quadric z = a x^2 + b x y + c y^2 is least-squares
    fitted; the eigenvalues of [[2a, b], [b, 2c]] are the curvatures.
    Vertices with an undefined normal, fewer than 5 neighbours, or a
    rank-deficient fit are flagged invalid.
    """
    if mesh.normals is None:
        mesh = compute_vertex_normals(mesh)
    n = mesh.vertex_count
    verts = mesh.vertices
    normals = mesh.normals
    reach = _ring_neighborhoods(mesh, ring_radius)
    indptr, indices = reach.indptr, reach.indices

    coeffs = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    for i in range(n):
        w_out = normals[i]
        if w_out[0] == 0.0 and w_out[1] == 0.0 and w_out[2] == 0.0:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        nbrs = nbrs[nbrs != i]
        if len(nbrs) < MIN_NEIGHBORS:
            continue
        w = -w_out  # inward: convex neighbourhoods bulge toward +z
        u, v = _tangent_frame(w)
        d = verts[nbrs] - verts[i]
        x = d @ u
        y = d @ v
        h = d @ w
        design = np.column_stack([x * x, x * y, y * y])
        sol, _, rank, _ = np.linalg.lstsq(design, h, rcond=None)
        if rank < 3 or not np.isfinite(sol).all():
            continue
        coeffs[i] = sol
        valid[i] = True

    a, b, c = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]
    # eigenvalues of the symmetric shape operator [[2a, b], [b, 2c]]
    mean = a + c
    half_diff = np.sqrt((a - c) ** 2 + b * b)
    k1 = np.where(valid, mean - half_diff, 0.0)
    k2 = np.where(valid, mean + half_diff, 0.0)
    return CurvatureField(
        k1=k1, k2=k2, valid=valid, areas=mixed_voronoi_areas(mesh)
    )


def shape_index(k1, k2) -> np.ndarray:
    """Shape index in [-1, 1] from principal curvatures with k2 >= k1.

    (2/pi) * arctan((k1 + k2) / (k1 - k2)), which maps a convex umbilic
    (dome) to +1, a concave umbilic (cup) to -1, a convex cylinder
    (ridge) to -0.5, a concave cylinder (rut) to +0.5, and symmetric
    saddles and flats to 0. Near-umbilic points (curvature spread under
    5% of the total) snap to sign(k1 + k2) to keep the extremes exact.
    """
    k1 = np.asarray(k1, dtype=np.float64)
    k2 = np.asarray(k2, dtype=np.float64)
    s = k1 + k2
    d = k1 - k2
    umbilic = np.abs(d) < np.maximum(1e-9, 0.05 * np.abs(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        si = (2.0 / np.pi) * np.arctan(s / d)
    si = np.where(umbilic, np.sign(s), si)
    return si if si.ndim else float(si)
