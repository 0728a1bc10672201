"""Convex hulls and minimal-volume oriented bounding boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import DegenerateGeometryError
from ..mesh import TriangleMesh


def convex_hull(points) -> TriangleMesh:
    """Convex hull as a triangle mesh with outward-wound facets.

    Accepts a TriangleMesh or an (N, 3) point array. Vertices of the
    result are exactly the hull's extreme points. Raises
    DegenerateGeometryError for point sets of affine rank < 3.
    """
    if isinstance(points, TriangleMesh):
        points = points.vertices
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    if len(pts) < 4:
        raise DegenerateGeometryError(
            f"need at least 4 points for a 3D hull, got {len(pts)}"
        )
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(
            f"degenerate point set (coplanar or collinear): {exc}"
        ) from exc

    # compact to hull vertices only
    used = hull.vertices
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    faces = remap[hull.simplices]

    # Qhull does not promise simplex winding; orient each facet so its
    # cross product agrees with the outward plane normal it reports
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    cr = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", cr, hull.equations[:, :3]) < 0.0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(vertices=verts, faces=faces)


@dataclass(frozen=True)
class BoundingBox:
    """Oriented box: rows of ``axes`` are unit directions, extents sorted
    descending so ``extents[0]`` is the longest edge."""

    center: np.ndarray
    axes: np.ndarray
    extents: np.ndarray
    volume: float
    aspect_ratio: float
    fallback_aabb: bool = False

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)],
            dtype=np.float64,
        ) - 0.5
        return self.center + (signs * self.extents) @ self.axes


def _box_from_rotation(points, rot):
    """Box stats for a frame whose rows are the box axes."""
    q = points @ rot.T
    mn = q.min(axis=0)
    mx = q.max(axis=0)
    ext = mx - mn
    center = ((mn + mx) / 2.0) @ rot
    return center, ext, float(ext[0] * ext[1] * ext[2])


def _min_area_rect_angle(pts2d):
    """Rotation angle (radians) of the minimum-area rectangle of 2D points.

    The optimal rectangle has a side collinear with a convex-hull edge,
    so it suffices to test each hull edge direction.
    """
    try:
        hull = ConvexHull(pts2d)
        ring = pts2d[hull.vertices]
    except QhullError:
        # collinear projection: any frame aligned with the spread works
        d = pts2d - pts2d.mean(axis=0)
        _, _, vt = np.linalg.svd(d, full_matrices=False)
        return float(np.arctan2(vt[0, 1], vt[0, 0]))
    edges = np.roll(ring, -1, axis=0) - ring
    angles = np.arctan2(edges[:, 1], edges[:, 0])
    cos, sin = np.cos(-angles), np.sin(-angles)
    # (E, 2, N): every hull point in every edge-aligned frame
    x = cos[:, None] * ring[:, 0] - sin[:, None] * ring[:, 1]
    y = sin[:, None] * ring[:, 0] + cos[:, None] * ring[:, 1]
    areas = (x.max(axis=1) - x.min(axis=1)) * (y.max(axis=1) - y.min(axis=1))
    return float(angles[np.argmin(areas)])


def _pca_frame(points):
    d = points - points.mean(axis=0)
    cov = d.T @ d / max(len(d), 1)
    _, vecs = np.linalg.eigh(cov)
    return vecs.T  # rows are principal directions


MAX_FACET_CANDIDATES = 320


def _candidate_normals(normals, cap=MAX_FACET_CANDIDATES):
    """Distinct facet directions to try as box axes, at most ``cap``.

    Antipodal and nearly parallel facets share a frame, so normals are
    folded into a hemisphere and deduplicated. Very round hulls can
    still present thousands of distinct directions whose boxes all but
    coincide; those are thinned to an evenly spaced, deterministic
    subset. Polyhedral hulls (few distinct facet planes) are kept
    exactly, which is what makes flush-faced boxes exactly recoverable.
    """
    flip = (
        (normals[:, 0] < 0)
        | ((normals[:, 0] == 0) & (normals[:, 1] < 0))
        | ((normals[:, 0] == 0) & (normals[:, 1] == 0) & (normals[:, 2] < 0))
    )
    folded = np.where(flip[:, None], -normals, normals)
    uniq = np.unique(np.round(folded, 9), axis=0)
    norms = np.linalg.norm(uniq, axis=1)
    uniq = uniq[norms > 0.5] / norms[norms > 0.5, None]
    if len(uniq) > cap:
        step = np.linspace(0, len(uniq) - 1, cap).astype(np.int64)
        uniq = uniq[np.unique(step)]
    return uniq


def _aabb_fallback(points):
    mn = points.min(axis=0)
    mx = points.max(axis=0)
    ext = mx - mn
    order = np.argsort(ext)[::-1]
    axes = np.eye(3)[order]
    ext = ext[order]
    vol = float(ext[0] * ext[1] * ext[2])
    aspect = float(ext[2] / ext[0]) if ext[0] > 0 else 0.0
    return BoundingBox(
        center=(mn + mx) / 2.0,
        axes=axes,
        extents=ext,
        volume=vol,
        aspect_ratio=aspect,
        fallback_aabb=True,
    )


def minimal_bounding_box(points) -> BoundingBox:
    """Minimum-volume oriented bounding box of a point set or mesh.

    Searches two candidate families over the convex hull: the principal
    component frame, and, for every hull facet, the frame spanned by the
    facet normal and the minimum-area rectangle of the hull projected
    onto that facet's plane. The smallest-volume candidate wins.
    Degenerate inputs (affine rank < 3) fall back to the axis-aligned
    box and set ``fallback_aabb``.
    """
    if isinstance(points, TriangleMesh):
        points = points.vertices
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError(f"expected non-empty (N, 3) points, got {pts.shape}")

    try:
        hull = convex_hull(pts)
    except DegenerateGeometryError:
        return _aabb_fallback(pts)

    hv = hull.vertices
    candidates = [_pca_frame(hv)]

    for z in _candidate_normals(hull.face_normals()):
        # in-plane basis
        ref = np.array([1.0, 0.0, 0.0])
        if abs(z[0]) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(z, ref)
        u /= np.linalg.norm(u)
        v = np.cross(z, u)
        pts2d = np.column_stack([hv @ u, hv @ v])
        ang = _min_area_rect_angle(pts2d)
        c, s = np.cos(ang), np.sin(ang)
        # rectangle edge direction expressed back in 3D
        e1 = c * u + s * v
        e2 = np.cross(z, e1)
        candidates.append(np.vstack([e1, e2, z]))

    best = None
    for rot in candidates:
        center, ext, vol = _box_from_rotation(hv, rot)
        if best is None or vol < best[2]:
            best = (center, ext, vol, rot)

    center, ext, vol, rot = best
    order = np.argsort(ext)[::-1]
    axes = rot[order]
    ext = ext[order]
    if np.linalg.det(axes) < 0:
        axes = axes.copy()
        axes[2] = -axes[2]
    aspect = float(ext[2] / ext[0]) if ext[0] > 0 else 0.0
    return BoundingBox(
        center=center,
        axes=axes,
        extents=ext,
        volume=vol,
        aspect_ratio=aspect,
        fallback_aabb=False,
    )
