"""Global mesh measures: volume, compactness, surface point sampling."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateGeometryError
from ..mesh import TriangleMesh


def orientation_consistent(mesh: TriangleMesh) -> bool:
    """True when neighbouring faces agree on winding across every edge.

    On a consistently oriented closed surface each undirected edge is
    traversed once in each direction; a directed edge that appears twice
    (or a boundary edge) breaks the volume computation's guarantees.
    """
    f = mesh.faces
    if not len(f):
        return False
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    keys = directed[:, 0] * (mesh.vertex_count + 1) + directed[:, 1]
    if len(np.unique(keys)) != len(keys):
        return False  # some directed edge repeats
    rev = directed[:, 1] * (mesh.vertex_count + 1) + directed[:, 0]
    return bool(np.isin(keys, rev).all())


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume by the divergence theorem (mm^3).

    Positive for outward-wound closed meshes; callers should gate on
    :func:`orientation_consistent` when reliability matters.
    """
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def compactness(mesh: TriangleMesh) -> tuple[float, bool]:
    """Sphericity 36*pi*V^2 / A^3 in (0, 1], plus a reliability flag.

    1.0 for a sphere, ~0.524 for a cube. Values are clipped to 1.0
    (discretization can nudge the ratio just past the bound). The flag
    is False when the mesh is open or inconsistently wound, in which
    case V came from an unreliable signed sum.
    """
    area = float(mesh.face_areas().sum())
    if area <= 0.0:
        raise DegenerateGeometryError("mesh has zero surface area")
    vol = abs(mesh_volume(mesh))
    value = min(36.0 * np.pi * vol * vol / area**3, 1.0)
    reliable = mesh.is_closed() and orientation_consistent(mesh)
    return float(value), reliable


def sample_surface_points(
    mesh: TriangleMesh, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform-by-area random points on the surface.

    Faces are chosen with probability proportional to area, then a
    point is drawn uniformly inside each via the square-root barycentric
    warp. Returns (count, 3) positions.
    """
    areas = mesh.face_areas()
    total = float(areas.sum())
    if total <= 0.0:
        raise DegenerateGeometryError("cannot sample a zero-area mesh")
    probs = areas / total
    idx = rng.choice(len(areas), size=count, p=probs)
    corners = mesh.face_corners()[idx]
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (
        w0[:, None] * corners[:, 0]
        + w1[:, None] * corners[:, 1]
        + w2[:, None] * corners[:, 2]
    )
