"""Shape-diameter function: local thickness via cone ray casting.

A bounding-volume hierarchy over the triangles makes each of the many
ray casts logarithmic instead of linear in the face count.
"""

from __future__ import annotations

import numpy as np

from ..mesh import TriangleMesh

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
DEFAULT_CONE_ANGLE_DEG = 60.0  # full opening angle of the ray cone
DEFAULT_RAY_COUNT = 30
MIN_ACCEPTED_HITS = 3


class TriangleBVH:
    """Median-split bounding-volume hierarchy over mesh triangles.

    Built in O(n log n) by splitting face centroids at the median of
    the widest bounding-box axis; leaves keep at most ``leaf_size``
    triangles. Ray casts run batched: a frontier of (node, ray-subset)
    pairs is processed with vectorized slab tests and Moller-Trumbore
    intersection at the leaves.
    """

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 16):
        v = mesh.vertices
        f = mesh.faces
        if not len(f):
            raise ValueError("cannot build a BVH over zero triangles")
        self._v0 = v[f[:, 0]]
        self._e1 = v[f[:, 1]] - self._v0
        self._e2 = v[f[:, 2]] - self._v0
        self._tri_normal = np.cross(self._e1, self._e2)  # unnormalized outward

        corners = v[f]  # (M, 3, 3)
        tri_min = corners.min(axis=1)
        tri_max = corners.max(axis=1)
        centroids = corners.mean(axis=1)

        order = np.arange(len(f))
        bounds_min, bounds_max = [], []
        children, ranges = [], []
        # (node_index, start, end) work list; children filled on pop
        stack = [(0, 0, len(f))]
        bounds_min.append(None)
        bounds_max.append(None)
        children.append((-1, -1))
        ranges.append((0, len(f)))
        while stack:
            node, start, end = stack.pop()
            sel = order[start:end]
            bounds_min[node] = tri_min[sel].min(axis=0)
            bounds_max[node] = tri_max[sel].max(axis=0)
            ranges[node] = (start, end)
            if end - start <= leaf_size:
                children[node] = (-1, -1)
                continue
            cen = centroids[sel]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            mid = (end - start) // 2
            part = np.argpartition(cen[:, axis], mid)
            order[start:end] = sel[part]
            left, right = len(children), len(children) + 1
            for _ in range(2):
                bounds_min.append(None)
                bounds_max.append(None)
                children.append((-1, -1))
                ranges.append((0, 0))
            children[node] = (left, right)
            stack.append((left, start, start + mid))
            stack.append((right, start + mid, end))

        self._order = order
        self._bmin = np.asarray(bounds_min)
        self._bmax = np.asarray(bounds_max)
        self._children = np.asarray(children, dtype=np.int64)
        self._ranges = np.asarray(ranges, dtype=np.int64)

    def cast(
        self,
        origins: np.ndarray,
        directions: np.ndarray,
        exit_only: bool = True,
        t_min: float = 0.0,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Nearest intersection along each ray.

        ``exit_only`` keeps only back-facing hits (triangle normal and
        ray direction agreeing), skipping front-facing ones entirely —
        the filter a thickness probe needs to ignore re-entries.
        Returns (t, face_index) with inf / -1 where nothing was hit.
        """
        origins = np.asarray(origins, dtype=np.float64)
        directions = np.asarray(directions, dtype=np.float64)
        n_rays = len(origins)
        best_t = np.full(n_rays, np.inf)
        best_face = np.full(n_rays, -1, dtype=np.int64)
        tiny = 1e-300
        d_safe = np.where(np.abs(directions) < tiny, tiny, directions)
        inv_d = 1.0 / d_safe
        o_inv = origins * inv_d  # slab test becomes bmin*inv - o_inv

        stack = [(0, np.arange(n_rays))]
        while stack:
            node, rays = stack.pop()
            inv = inv_d[rays]
            with np.errstate(over="ignore", invalid="ignore"):
                t1 = self._bmin[node] * inv - o_inv[rays]
                t2 = self._bmax[node] * inv - o_inv[rays]
            near = np.minimum(t1, t2).max(axis=1)
            far = np.maximum(t1, t2).min(axis=1)
            alive = (near <= far) & (far >= t_min) & (near <= best_t[rays])
            if not alive.any():
                continue
            if not alive.all():
                rays = rays[alive]
            left, right = self._children[node]
            if left < 0:
                start, end = self._ranges[node]
                self._leaf_hits(rays, origins, directions,
                                self._order[start:end], exit_only,
                                t_min, best_t, best_face)
            else:
                stack.append((right, rays))
                stack.append((left, rays))
        return best_t, best_face

    def _leaf_hits(self, rays, origins, directions, tri, exit_only,
                   t_min, best_t, best_face):
        o = origins[rays][:, None, :]      # (K, 1, 3)
        d = directions[rays][:, None, :]
        v0 = self._v0[tri][None, :, :]     # (1, T, 3)
        e1 = self._e1[tri][None, :, :]
        e2 = self._e2[tri][None, :, :]
        pvec = np.cross(d, e2)
        det = np.einsum("ktj,ktj->kt", e1, pvec)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            tvec = o - v0
            u = np.einsum("ktj,ktj->kt", tvec, pvec) * inv_det
            qvec = np.cross(tvec, e1)
            w = np.einsum("ktj,ktj->kt", d, qvec) * inv_det
            t = np.einsum("ktj,ktj->kt", e2, qvec) * inv_det
            eps = 1e-12
            ok = (
                (np.abs(det) > eps)
                & (u >= -1e-9) & (w >= -1e-9) & (u + w <= 1.0 + 1e-9)
                & (t > t_min)
            )
        if exit_only:
            facing = np.einsum("tj,kj->kt", self._tri_normal[tri],
                               directions[rays])
            ok &= facing > 0.0
        t = np.where(ok, t, np.inf)
        t_best = t.min(axis=1)
        which = np.argmin(t, axis=1)
        improved = t_best < best_t[rays]
        upd = rays[improved]
        best_t[upd] = t_best[improved]
        best_face[upd] = tri[which[improved]]


def cone_ray_directions(
    cone_angle_deg: float, ray_count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic spiral of unit directions inside a cone around +z.

    The cone angle is the *full opening*: rays stay within half that
    angle of the axis. The sqrt radial profile spreads rays uniformly
    per solid angle; none lies exactly on the axis, so 1/theta weights
    stay finite. Returns ((ray_count, 3) directions, (ray_count,)
    axis offsets theta in radians).
    """
    half = np.deg2rad(cone_angle_deg) / 2.0
    j = np.arange(ray_count)
    theta = half * np.sqrt((j + 0.5) / ray_count)
    phi = j * GOLDEN_ANGLE
    sin_t = np.sin(theta)
    return np.column_stack(
        [sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)]
    ), theta


def shape_diameter(
    mesh: TriangleMesh,
    cone_angle_deg: float = DEFAULT_CONE_ANGLE_DEG,
    ray_count: int = DEFAULT_RAY_COUNT,
    bvh: TriangleBVH | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-face shape diameter (mm) with a validity mask.

    From each face centroid, nudged slightly inward, a cone of rays is
    cast opposite the face normal. The nearest exit hit per ray gives a
    thickness sample; samples farther than one standard deviation from
    their median are discarded and the rest are averaged with 1/angle
    weights (rays closer to the axis count more). Faces with a
    degenerate normal or fewer than 3 usable hits are invalid.
    """
    if bvh is None:
        bvh = TriangleBVH(mesh)
    m = mesh.face_count
    normals = mesh.face_normals()
    centroids = mesh.face_corners().mean(axis=1)
    n_norm = np.linalg.norm(normals, axis=1)
    face_ok = n_norm > 0.5  # unit or zero by construction

    w = -normals  # inward axis
    ref = np.where(
        (np.abs(w[:, 0]) <= 0.9)[:, None],
        np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]),
    )
    u = np.cross(w, ref)
    u_norm = np.linalg.norm(u, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(u_norm > 1e-12, u / u_norm, 0.0)
    v = np.cross(w, u)

    local, theta = cone_ray_directions(cone_angle_deg, ray_count)
    # (M, R, 3) = local x,y,z blended into each face frame
    dirs = (
        local[None, :, 0, None] * u[:, None, :]
        + local[None, :, 1, None] * v[:, None, :]
        + local[None, :, 2, None] * w[:, None, :]
    )
    eps = 1e-4 * mesh.bbox_diagonal()
    origins = centroids + eps * w
    origins = np.repeat(origins, ray_count, axis=0)
    dirs = dirs.reshape(-1, 3)

    t, _ = bvh.cast(origins, dirs, exit_only=True, t_min=1e-9)
    t = t.reshape(m, ray_count)
    hit = np.isfinite(t) & face_ok[:, None]
    counts = hit.sum(axis=1)
    valid = counts >= MIN_ACCEPTED_HITS

    tv = np.where(hit, t, np.nan)
    tv[counts == 0] = 0.0  # placeholder rows so nan-reductions stay quiet
    with np.errstate(invalid="ignore"):
        med = np.nanmedian(tv, axis=1)
        sig = np.nanstd(tv, axis=1)
        keep = hit & (np.abs(tv - med[:, None]) <= sig[:, None] + 1e-300)
        weights = np.where(keep, 1.0 / theta[None, :], 0.0)
        wsum = weights.sum(axis=1)
        sdf = np.where(
            valid & (wsum > 0.0),
            (np.where(keep, tv, 0.0) * weights).sum(axis=1)
            / np.where(wsum > 0.0, wsum, 1.0),
            0.0,
        )
    return sdf, valid & (wsum > 0.0)
