"""Column ray casting and point-to-surface distance.

Rays are cast along the local +z axis of a frame. A column hits a
triangle when its (x, y) lies inside the triangle's projection. The
inside test evaluates every edge in a canonical vertex order, so two
faces sharing an edge see bit-identical edge values, and resolves exact
zeros with a fixed symbolic perturbation of the column (simulation of
simplicity, direction ``(+eps, +eps**2)``). Parity along a column is
therefore exact even when columns graze vertices or edges.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshError, RigidTransform, TriMesh

log = logging.getLogger(__name__)

SURFACE_TOL = 1e-9


def _expand(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each owner ``o`` with ``counts[o]`` slots yield (owner, slot)."""
    owner = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    slot = np.arange(owner.size) - starts[owner]
    return owner, slot


def _edge_sign(ax, ay, bx, by, px, py):
    """Sign of cross(b - a, p - a) with the symbolic tie-break."""
    dx = bx - ax
    dy = by - ay
    e = dx * (py - ay) - dy * (px - ax)
    # p' = p + eps*(1, eps): derivative term is -dy, then +dx
    tie = np.where(dy != 0, -np.sign(dy), np.sign(dx))
    return np.where(e != 0, np.sign(e), tie)


def _inside_projected(local_v: np.ndarray, faces: np.ndarray, face_idx, px, py):
    """Exact point-in-projected-triangle for (face, point) pairs.

    Returns ``(hit, z)`` where ``z`` is the ray parameter of the hit.
    """
    f = faces[face_idx]
    hit = np.ones(len(face_idx), dtype=bool)
    for a_col, b_col, c_col in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        ia, ib, ic = f[:, a_col], f[:, b_col], f[:, c_col]
        lo = np.minimum(ia, ib)
        hi = np.maximum(ia, ib)
        ax, ay = local_v[lo, 0], local_v[lo, 1]
        bx, by = local_v[hi, 0], local_v[hi, 1]
        s_p = _edge_sign(ax, ay, bx, by, px, py)
        s_c = _edge_sign(ax, ay, bx, by, local_v[ic, 0], local_v[ic, 1])
        hit &= s_p == s_c
    v0 = local_v[f[:, 0]]
    v1 = local_v[f[:, 1]]
    v2 = local_v[f[:, 2]]
    d = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0])
    hit &= d != 0
    dd = np.where(d == 0, 1.0, d)
    w1 = ((px - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (py - v0[:, 1]) * (v2[:, 0] - v0[:, 0])) / dd
    w2 = ((v1[:, 0] - v0[:, 0]) * (py - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (px - v0[:, 0])) / dd
    z = v0[:, 2] + w1 * (v1[:, 2] - v0[:, 2]) + w2 * (v2[:, 2] - v0[:, 2])
    return hit, z


def lattice_hits(mesh: TriMesh, frame: RigidTransform, h: float, shape: tuple[int, int]):
    """Ray hits for the column lattice ``((i + .5) h, (j + .5) h)`` of a frame.

    Columns run along the frame's local +z axis. Returns arrays
    ``(i, j, z)`` with one entry per (column, crossed face).
    """
    local_v = frame.inverse().apply(mesh.vertices)
    faces = mesh.faces
    tri = local_v[faces]
    ni, nj = shape
    lo = tri[:, :, :2].min(axis=1)
    hi = tri[:, :, :2].max(axis=1)
    # one column of slack each side; the exact test below decides
    i0 = np.maximum(np.ceil(lo[:, 0] / h - 0.5) - 1, 0).astype(np.int64)
    i1 = np.minimum(np.floor(hi[:, 0] / h - 0.5) + 1, ni - 1).astype(np.int64)
    j0 = np.maximum(np.ceil(lo[:, 1] / h - 0.5) - 1, 0).astype(np.int64)
    j1 = np.minimum(np.floor(hi[:, 1] / h - 0.5) + 1, nj - 1).astype(np.int64)
    wi = np.clip(i1 - i0 + 1, 0, None)
    wj = np.clip(j1 - j0 + 1, 0, None)
    owner, slot = _expand(wi * wj)
    if owner.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    ci = i0[owner] + slot // wj[owner]
    cj = j0[owner] + slot % wj[owner]
    px = (ci + 0.5) * h
    py = (cj + 0.5) * h
    hit, z = _inside_projected(local_v, faces, owner, px, py)
    return ci[hit], cj[hit], z[hit]


def _bucket_pairs(local_v, faces, pts2, cell):
    """Candidate (face, point) pairs via a uniform 2D bucket grid."""
    tri = local_v[faces][:, :, :2]
    origin = pts2.min(axis=0)
    key = np.floor((pts2 - origin) / cell).astype(np.int64)
    nb = key.max(axis=0) + 1
    bid = key[:, 0] * nb[1] + key[:, 1]
    order = np.argsort(bid, kind="stable")
    sorted_bid = bid[order]
    start = np.searchsorted(sorted_bid, np.arange(nb[0] * nb[1]), side="left")
    stop = np.searchsorted(sorted_bid, np.arange(nb[0] * nb[1]), side="right")

    b0 = np.floor((tri.min(axis=1) - origin) / cell).astype(np.int64)
    b1 = np.floor((tri.max(axis=1) - origin) / cell).astype(np.int64)
    b0 = np.maximum(b0, 0)
    b1 = np.minimum(b1, nb - 1)
    w = np.clip(b1 - b0 + 1, 0, None)
    f_owner, slot = _expand(w[:, 0] * w[:, 1])
    bx = b0[f_owner, 0] + slot // w[f_owner, 1]
    by = b0[f_owner, 1] + slot % w[f_owner, 1]
    buckets = bx * nb[1] + by
    counts = stop[buckets] - start[buckets]
    pair_owner, pslot = _expand(counts)
    face_idx = f_owner[pair_owner]
    pt_idx = order[start[buckets[pair_owner]] + pslot]
    return face_idx, pt_idx


def contains_points(mesh: TriMesh, points, chunk: int = 2_000_000) -> np.ndarray:
    """Inside test by +z ray parity.

    Points within ``SURFACE_TOL`` of the surface count as inside. Non-finite points are reported outside with a warning.
    """
    mesh.require_watertight()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    result = np.zeros(len(pts), dtype=bool)
    finite = np.all(np.isfinite(pts), axis=1)
    if not finite.all():
        log.warning("%d non-finite point(s) treated as outside", int((~finite).sum()))
    idx = np.flatnonzero(finite)
    if idx.size == 0:
        return result
    p = pts[idx]
    v = mesh.vertices
    span = np.ptp(v[:, :2], axis=0).max() if len(v) else 1.0
    cell = max(span / max(np.sqrt(len(mesh.faces)), 1.0), 1e-9)
    face_idx, pt_idx = _bucket_pairs(v, mesh.faces, p[:, :2], cell)
    below = np.zeros(len(p), dtype=np.int64)
    on_surface = np.zeros(len(p), dtype=bool)
    for s in range(0, face_idx.size, chunk):
        fi = face_idx[s : s + chunk]
        pi = pt_idx[s : s + chunk]
        hit, z = _inside_projected(v, mesh.faces, fi, p[pi, 0], p[pi, 1])
        zp = p[pi, 2]
        np.add.at(below, pi[hit & (z < zp)], 1)
        on_surface[pi[hit & (np.abs(z - zp) <= SURFACE_TOL)]] = True
    inside = (below % 2 == 1) | on_surface
    # points on faces parallel or steep to the ray: exact distance near bboxes
    tri = v[mesh.faces]
    lo = tri.min(axis=1) - SURFACE_TOL
    hi = tri.max(axis=1) + SURFACE_TOL
    for s in range(0, face_idx.size, chunk):
        fi = face_idx[s : s + chunk]
        pi = pt_idx[s : s + chunk]
        keep = ~inside[pi]
        fi, pi = fi[keep], pi[keep]
        near = np.all((p[pi] >= lo[fi]) & (p[pi] <= hi[fi]), axis=1)
        fi, pi = fi[near], pi[near]
        if len(pi):
            q = closest_points_on_triangles(p[pi], tri[fi])
            close = np.linalg.norm(q - p[pi], axis=1) <= SURFACE_TOL
            inside[pi[close]] = True
    result[idx] = inside
    return result


def closest_points_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point on triangle ``tri[k]`` to point ``p[k]`` (vectorised)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a

    def dot(x, y):
        return np.einsum("ij,ij->i", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = va + vb + vc
        denom = np.where(denom == 0, 1.0, denom)
        v = vb / denom
        w = vc / denom
        put(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def _reach(tri: np.ndarray) -> np.ndarray:
    """Largest centroid-to-vertex distance of each triangle."""
    return np.linalg.norm(tri - tri.mean(axis=1, keepdims=True), axis=2).max(axis=1)


def _split4(tri: np.ndarray) -> np.ndarray:
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.concatenate([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ])


class SurfaceDistance:
    """Unsigned distance from query points to a triangle surface.

    A KD-tree over face centroids gathers candidate faces within the query
    radius plus the largest centroid-to-vertex reach; exact point-triangle
    distances are then taken over the candidates.
    """

    def __init__(self, mesh: TriMesh, max_reach: float | None = None):
        if mesh.is_empty:
            raise MeshError("distance query on an empty mesh")
        self.mesh = mesh
        tri = mesh.triangles
        reach = _reach(tri)
        if max_reach is None:
            max_reach = 0.5 * float(np.median(reach))
        # split oversized triangles; the pieces tile the same surface
        for _ in range(12):
            big = reach > max_reach
            if not big.any():
                break
            tri = np.concatenate([tri[~big], _split4(tri[big])])
            reach = _reach(tri)
        self.triangles = tri
        self.tree = cKDTree(tri.mean(axis=1))
        self.reach = float(reach.max())

    def query(self, points, max_dist: float) -> np.ndarray:
        """Distances, with ``inf`` for points farther than ``max_dist``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.full(len(pts), np.inf)
        if len(pts) == 0:
            return out
        # cheap rejection: nearest centroid already out of reach
        near, _ = self.tree.query(pts, distance_upper_bound=max_dist + self.reach)
        live = np.flatnonzero(np.isfinite(near))
        if len(live) == 0:
            return out
        lists = self.tree.query_ball_point(pts[live], max_dist + self.reach)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        if counts.sum() == 0:
            return out
        owner = np.repeat(live, counts)
        faces = np.fromiter((f for x in lists for f in x), dtype=np.int64, count=int(counts.sum()))
        q = closest_points_on_triangles(pts[owner], self.triangles[faces])
        d = np.linalg.norm(q - pts[owner], axis=1)
        np.minimum.at(out, owner, d)
        out[out > max_dist] = np.inf
        return out

    def within(self, points, eps: float, k: int = 8) -> np.ndarray:
        """Exact test ``distance <= eps`` with a cheaper k-nearest first pass.

        A centroid within ``eps`` settles a point at once (the centroid lies
        on its triangle). Otherwise the ``k`` nearest faces are measured
        exactly; only points whose k-th centroid is still within reach, so
        that a closer face might have been missed, fall back to ``query``.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.zeros(len(pts), dtype=bool)
        if len(pts) == 0:
            return out
        k = min(k, len(self.triangles))
        bound = eps + self.reach
        near, _ = self.tree.query(pts, distance_upper_bound=bound)
        out |= near <= eps
        rest = np.flatnonzero(~out & np.isfinite(near))
        if len(rest) == 0:
            return out
        dist, idx = self.tree.query(pts[rest], k=k, distance_upper_bound=bound)
        dist = dist.reshape(len(rest), k)
        valid = np.isfinite(dist)
        owner = np.repeat(rest, valid.sum(axis=1))
        faces = idx.reshape(len(rest), k)[valid]
        q = closest_points_on_triangles(pts[owner], self.triangles[faces])
        hit = np.linalg.norm(q - pts[owner], axis=1) <= eps
        out[owner[hit]] = True
        # the k-nearest list may be truncated while still inside the reach
        unsure = rest[~out[rest] & np.isfinite(dist[:, -1])]
        if len(unsure):
            out[unsure] = np.isfinite(self.query(pts[unsure], eps))
        return out
