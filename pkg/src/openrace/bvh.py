"""Bounding-volume hierarchy over triangle meshes and ray intersection kernels.

Construction is a deterministic top-down median split along the longest axis
of the node's centroid bounds, with at most four triangles per leaf.  The
traversal kernels are numba-compiled and report, besides the hit, how many
triangles were tested, which the test suite uses to bound traversal cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .mesh import TrackMesh

LEAF_SIZE = 4
_EPS_DET = 1e-12
_EPS_BARY = 1e-10
_T_MIN = 1e-6


@dataclass
class Bvh:
    """Flattened BVH plus triangle geometry laid out in traversal order."""

    node_min: np.ndarray  # (N, 3)
    node_max: np.ndarray  # (N, 3)
    node_left: np.ndarray  # (N,) child index or -1
    node_right: np.ndarray  # (N,)
    node_start: np.ndarray  # (N,) first triangle slot for leaves
    node_count: np.ndarray  # (N,) triangle count, 0 for inner nodes
    tri_index: np.ndarray  # (T,) slot -> original triangle id
    tri_v0: np.ndarray  # (T, 3) per slot
    tri_e1: np.ndarray
    tri_e2: np.ndarray

    @property
    def node_count_total(self) -> int:
        return len(self.node_left)

    def max_depth(self) -> int:
        depth = {0: 1}
        best = 1
        stack = [0]
        while stack:
            node = stack.pop()
            left = int(self.node_left[node])
            right = int(self.node_right[node])
            for child in (left, right):
                if child >= 0:
                    depth[child] = depth[node] + 1
                    best = max(best, depth[child])
                    stack.append(child)
        return best


def build_bvh(mesh: TrackMesh) -> Bvh:
    tris = mesh.triangles
    verts = mesh.vertices
    n = len(tris)
    if n == 0:
        raise ValueError("cannot build a BVH over an empty mesh")

    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    tri_min = np.minimum(np.minimum(a, b), c)
    tri_max = np.maximum(np.maximum(a, b), c)
    centroids = (a + b + c) / 3.0

    order = np.arange(n)
    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    node_left: list[int] = []
    node_right: list[int] = []
    node_start: list[int] = []
    node_count: list[int] = []

    def new_node(lo: int, hi: int) -> int:
        idx = len(node_min)
        sel = order[lo:hi]
        node_min.append(tri_min[sel].min(axis=0))
        node_max.append(tri_max[sel].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(lo)
        node_count.append(hi - lo)
        return idx

    root = new_node(0, n)
    stack = [root]
    while stack:
        node = stack.pop()
        lo = node_start[node]
        count = node_count[node]
        if count <= LEAF_SIZE:
            continue
        hi = lo + count
        sel = order[lo:hi]
        cen = centroids[sel]
        extent = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(extent))
        mid = count // 2
        part = np.argpartition(cen[:, axis], mid, kind="introselect")
        order[lo:hi] = sel[part]
        left = new_node(lo, lo + mid)
        right = new_node(lo + mid, hi)
        node_left[node] = left
        node_right[node] = right
        node_count[node] = 0
        stack.append(left)
        stack.append(right)

    v0 = a[order]
    return Bvh(
        node_min=np.array(node_min),
        node_max=np.array(node_max),
        node_left=np.array(node_left, dtype=np.int32),
        node_right=np.array(node_right, dtype=np.int32),
        node_start=np.array(node_start, dtype=np.int32),
        node_count=np.array(node_count, dtype=np.int32),
        tri_index=order.astype(np.int32),
        tri_v0=v0,
        tri_e1=b[order] - v0,
        tri_e2=c[order] - v0,
    )


@dataclass(frozen=True)
class RayHit:
    t: float
    triangle: int
    u: float
    v: float


@njit(cache=True, fastmath=True, inline="always")
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, slot):
    hx = dy * e2[slot, 2] - dz * e2[slot, 1]
    hy = dz * e2[slot, 0] - dx * e2[slot, 2]
    hz = dx * e2[slot, 1] - dy * e2[slot, 0]
    det = e1[slot, 0] * hx + e1[slot, 1] * hy + e1[slot, 2] * hz
    if -_EPS_DET < det < _EPS_DET:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[slot, 0]
    sy = oy - v0[slot, 1]
    sz = oz - v0[slot, 2]
    u = (sx * hx + sy * hy + sz * hz) * inv
    if u < -_EPS_BARY or u > 1.0 + _EPS_BARY:
        return -1.0, 0.0, 0.0
    qx = sy * e1[slot, 2] - sz * e1[slot, 1]
    qy = sz * e1[slot, 0] - sx * e1[slot, 2]
    qz = sx * e1[slot, 1] - sy * e1[slot, 0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -_EPS_BARY or u + v > 1.0 + _EPS_BARY:
        return -1.0, 0.0, 0.0
    t = (e2[slot, 0] * qx + e2[slot, 1] * qy + e2[slot, 2] * qz) * inv
    if t <= _T_MIN:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True, fastmath=True, inline="always")
def _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, node, best_t):
    t0 = (bmin[node, 0] - ox) * ix
    t1 = (bmax[node, 0] - ox) * ix
    tmin = min(t0, t1)
    tmax = max(t0, t1)
    t0 = (bmin[node, 1] - oy) * iy
    t1 = (bmax[node, 1] - oy) * iy
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    t0 = (bmin[node, 2] - oz) * iz
    t1 = (bmax[node, 2] - oz) * iz
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    tmin = max(tmin, 0.0)  # origin inside the box still counts as an entry at 0
    if tmax < tmin or tmin > best_t:
        return -1.0
    return tmin


@njit(cache=True, fastmath=True)
def _traverse(
    ox,
    oy,
    oz,
    dx,
    dy,
    dz,
    node_min,
    node_max,
    node_left,
    node_right,
    node_start,
    node_count,
    tri_index,
    tri_v0,
    tri_e1,
    tri_e2,
):
    """Nearest hit along one ray: (t, original triangle id, u, v, tris tested)."""
    inf = np.inf
    ix = 1.0 / dx if dx != 0.0 else inf
    iy = 1.0 / dy if dy != 0.0 else inf
    iz = 1.0 / dz if dz != 0.0 else inf
    best_t = inf
    best_tri = -1
    best_u = 0.0
    best_v = 0.0
    tested = 0
    stack = np.empty(128, dtype=np.int32)
    top = 0
    if _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, 0, best_t) >= 0.0:
        stack[0] = 0
        top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        count = node_count[node]
        if count > 0:
            start = node_start[node]
            for slot in range(start, start + count):
                t, u, v = _ray_triangle(ox, oy, oz, dx, dy, dz, tri_v0, tri_e1, tri_e2, slot)
                tested += 1
                if t > 0.0:
                    tri = tri_index[slot]
                    if t < best_t or (t == best_t and tri < best_tri):
                        best_t = t
                        best_tri = tri
                        best_u = u
                        best_v = v
        else:
            left = node_left[node]
            right = node_right[node]
            tl = _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, left, best_t)
            tr = _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, right, best_t)
            # Push the farther child first so the nearer one is popped next.
            if tl >= 0.0 and tr >= 0.0:
                if tl <= tr:
                    stack[top] = right
                    stack[top + 1] = left
                else:
                    stack[top] = left
                    stack[top + 1] = right
                top += 2
            elif tl >= 0.0:
                stack[top] = left
                top += 1
            elif tr >= 0.0:
                stack[top] = right
                top += 1
    return best_t, best_tri, best_u, best_v, tested


@njit(cache=True, parallel=True, fastmath=True)
def _traverse_batch(
    origins,
    dirs,
    node_min,
    node_max,
    node_left,
    node_right,
    node_start,
    node_count,
    tri_index,
    tri_v0,
    tri_e1,
    tri_e2,
    out_t,
    out_tri,
    out_u,
    out_v,
    out_tested,
):
    for i in prange(len(dirs)):
        t, tri, u, v, tested = _traverse(
            origins[i, 0],
            origins[i, 1],
            origins[i, 2],
            dirs[i, 0],
            dirs[i, 1],
            dirs[i, 2],
            node_min,
            node_max,
            node_left,
            node_right,
            node_start,
            node_count,
            tri_index,
            tri_v0,
            tri_e1,
            tri_e2,
        )
        out_t[i] = t
        out_tri[i] = tri
        out_u[i] = u
        out_v[i] = v
        out_tested[i] = tested


def _unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    n = float(np.linalg.norm(d))
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"ray direction must be unit length (|d| = {n})")
    return d


def raycast(bvh: Bvh, origin, direction) -> RayHit | None:
    """Nearest positive-t intersection, or None on a miss."""
    o = np.asarray(origin, dtype=float)
    d = _unit(direction)
    t, tri, u, v, _ = _traverse(
        o[0],
        o[1],
        o[2],
        d[0],
        d[1],
        d[2],
        bvh.node_min,
        bvh.node_max,
        bvh.node_left,
        bvh.node_right,
        bvh.node_start,
        bvh.node_count,
        bvh.tri_index,
        bvh.tri_v0,
        bvh.tri_e1,
        bvh.tri_e2,
    )
    if tri < 0:
        return None
    return RayHit(t=float(t), triangle=int(tri), u=float(u), v=float(v))


def raycast_batch(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray):
    """Vectorized traversal; returns (t, triangle, u, v, tested) arrays.

    Misses have triangle == -1 and t == +inf.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = len(dirs)
    out_t = np.empty(n)
    out_tri = np.empty(n, dtype=np.int32)
    out_u = np.empty(n)
    out_v = np.empty(n)
    out_tested = np.empty(n, dtype=np.int64)
    _traverse_batch(
        origins,
        dirs,
        bvh.node_min,
        bvh.node_max,
        bvh.node_left,
        bvh.node_right,
        bvh.node_start,
        bvh.node_count,
        bvh.tri_index,
        bvh.tri_v0,
        bvh.tri_e1,
        bvh.tri_e2,
        out_t,
        out_tri,
        out_u,
        out_v,
        out_tested,
    )
    return out_t, out_tri, out_u, out_v, out_tested
