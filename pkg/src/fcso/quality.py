"""Geometric grasp quality: normal spread (RLES), contact area, min-max pick.

RLES is the chord radius of the largest spherical cap on the unit sphere
that contains none of the mapped contact normals. Candidate cap centres are
the spherical Voronoi vertices, i.e. the outward normals of the convex hull
facets of the mapped points; each candidate is scored by its nearest
mapped point through a KD-tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .mesh import RigidTransform, TriMesh
from .raycast import SurfaceDistance
from .voxel import GridSpec

DEDUP_TOL = 1e-3
DEGENERATE_DEG = 1.0
FALLBACK_STEP_DEG = 2.0


class QualityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ContactPatch:
    faces: np.ndarray  # indices into the pad mesh
    areas: np.ndarray
    normals: np.ndarray  # world frame
    area: float

    @property
    def degenerate(self) -> bool:
        return len(self.faces) == 0


@dataclass(frozen=True)
class QualityRecord:
    i: int
    m: int
    RLES: float
    A: float
    E: float
    flagged: bool = False


@dataclass(frozen=True)
class SelectionResult:
    Q: tuple[float, ...]
    best: int  # 1-based combination id
    Q_max: float


def sphere_grid(step_deg: float) -> np.ndarray:
    """Latitude/longitude lattice of unit vectors with the given spacing."""
    lat = np.radians(np.arange(-90.0, 90.0 + 1e-9, step_deg))
    lon = np.radians(np.arange(0.0, 360.0, step_deg))
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    pts = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1)
    return pts.reshape(-1, 3)


def rles_grid(normals, step_deg: float = FALLBACK_STEP_DEG) -> float:
    """Brute-force largest empty cap over a lat/lon lattice of centres."""
    pts = _unit(normals)
    centers = sphere_grid(step_deg)
    d, _ = cKDTree(pts).query(centers)
    return float(min(d.max(), 2.0))


def _unit(normals) -> np.ndarray:
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(n) == 0:
        raise QualityError("RLES of an empty normal set")
    norm = np.linalg.norm(n, axis=1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise QualityError("normals must be unit length")
    return n / norm[:, None]


def _dedup(pts: np.ndarray) -> np.ndarray:
    # collapse points sharing a lattice cell of diagonal < DEDUP_TOL first;
    # voxel surfaces repeat a handful of normals thousands of times
    cell = DEDUP_TOL / 2.0
    _, first = np.unique(np.floor(pts / cell).astype(np.int64), axis=0, return_index=True)
    pts = pts[np.sort(first)]
    tree = cKDTree(pts)
    keep = np.ones(len(pts), dtype=bool)
    for i, j in sorted(tree.query_pairs(DEDUP_TOL)):
        if keep[i] and keep[j]:
            keep[j] = False
    return pts[keep]


def _degenerate(pts: np.ndarray) -> bool:
    if len(pts) < 4:
        return True
    sin_tol = math.sin(math.radians(DEGENERATE_DEG))
    mean = pts.mean(axis=0)
    if np.linalg.norm(mean) > 0:
        axis = mean / np.linalg.norm(mean)
        if np.all(pts @ axis >= math.cos(math.radians(DEGENERATE_DEG))):
            return True
    # near a great circle: small extent along the least-spread direction
    _, _, vt = np.linalg.svd(pts, full_matrices=False)
    return bool(np.all(np.abs(pts @ vt[-1]) <= sin_tol))


def rles(normals) -> float:
    """Radius (chord) of the largest empty spherical cap among the normals."""
    pts = _dedup(_unit(normals))
    if len(pts) == 1:
        return 2.0
    if _degenerate(pts):
        return rles_grid(pts, FALLBACK_STEP_DEG)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return rles_grid(pts, FALLBACK_STEP_DEG)
    centers = hull.equations[:, :3]
    centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    # origin outside or on the hull: the empty region may be a whole hemisphere
    if np.any(hull.equations[:, 3] >= -1e-12):
        centers = np.concatenate([centers, -centers, -pts])
    d, _ = cKDTree(pts).query(centers)
    return float(min(d.max(), 2.0))


def effective_area(rles_value: float, area: float) -> float:
    if not rles_value > 0:
        raise QualityError(f"RLES must be positive, got {rles_value}")
    return area / rles_value


def _cut_faces(pad: TriMesh, spec: GridSpec) -> np.ndarray:
    """Faces made by the box cut (box coordinates).

    That is faces on a box face plus the rim chamfers that touch one; both
    exist only because the pad is clipped to the sample box.
    """
    ext = np.array(spec.shape) * spec.h
    tol = 1e-9 * max(1.0, float(ext.max()))
    v = pad.vertices
    on_plane = np.any((np.abs(v) <= tol) | (np.abs(v - ext) <= tol), axis=1)
    return on_plane[pad.faces].any(axis=1)


class ContactCache:
    """Memo of contact decisions for faces on the voxel-surface lattice.

    Marching-cubes faces of an occupancy grid have centroids on a lattice of
    spacing ``h / 6`` in box coordinates. For a fixed placement the contact
    decision depends only on that lattice point, so it is computed once, at
    the lattice point itself, and reused by every pad that shares the face.
    """

    BITS = 21

    def __init__(self, h: float):
        self.h = h
        self.q = h / 6.0
        self.store: dict = {}
        self.near: dict = {}

    def _near_cells(self, key, shape, frame: RigidTransform, dist: SurfaceDistance, eps: float) -> np.ndarray:
        """Nearest surface-piece centroid distance per cell (box lattice, doubled along t).

        Cells farther than ``eps + reach + half diagonal`` get ``inf``: no
        point of theirs can be within ``eps`` of the surface. Since a centroid
        lies on the surface, a point ``p`` of a cell with centre ``c`` is also
        surely within ``eps`` when ``d[c] + |p - c| <= eps``.
        """
        got = self.near.get(key)
        if got is not None:
            return got
        ni, nj, nk = shape
        axes = [(np.arange(n) + 0.5) * self.h for n in (ni, nj, 2 * nk)]
        centres = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        bound = eps + dist.reach + 0.5 * math.sqrt(3.0) * self.h
        d, _ = dist.tree.query(frame.apply(centres), distance_upper_bound=bound)
        near = d.reshape(ni, nj, 2 * nk)
        self.near[key] = near
        return near

    def _pack(self, idx: np.ndarray) -> np.ndarray:
        off = 1 << (self.BITS - 1)
        idx = idx + off
        return (idx[:, 0] << (2 * self.BITS)) | (idx[:, 1] << self.BITS) | idx[:, 2]

    def mask(
        self,
        key,
        centroids: np.ndarray,
        frame: RigidTransform,
        dist: SurfaceDistance,
        eps: float,
        layers: int = 0,
        shape=None,
    ) -> np.ndarray:
        """Contact flags for box-frame centroids of a pad backed off ``layers``.

        ``frame`` is the unshifted placement; the back-off moves every face
        by ``layers * h`` along ``+t``, i.e. ``6 * layers`` lattice steps, so
        all back-offs of one placement share the memo.
        """
        idx = np.rint(centroids / self.q).astype(np.int64)
        on_lattice = np.all(np.abs(idx * self.q - centroids) <= 1e-7, axis=1)
        idx[:, 2] += 6 * layers
        out = np.zeros(len(centroids), dtype=bool)
        off = np.flatnonzero(~on_lattice)
        if len(off):
            shifted = centroids[off] + [0.0, 0.0, layers * 6 * self.q]
            out[off] = dist.within(frame.apply(shifted), eps)
        lat = np.flatnonzero(on_lattice)
        if shape is not None and len(lat):
            near = self._near_cells(key, shape, frame, dist, eps)
            cell = idx[lat] // 6
            inside = np.all((cell >= 0) & (cell < near.shape), axis=1)
            ci = cell[inside]
            d_cell = np.zeros(len(lat))
            d_cell[inside] = near[ci[:, 0], ci[:, 1], ci[:, 2]]
            offset = np.linalg.norm(idx[lat] * self.q - (cell + 0.5) * self.h, axis=1)
            sure = inside & (d_cell + offset <= eps - 1e-9)
            out[lat[sure]] = True
            lat = lat[~sure & np.isfinite(d_cell)]
        if len(lat) == 0:
            return out
        packed = self._pack(idx[lat])
        known_k, known_v = self.store.get(key, (np.empty(0, np.int64), np.empty(0, bool)))
        pos = np.searchsorted(known_k, packed)
        pos_c = np.minimum(pos, max(len(known_k) - 1, 0))
        found = (len(known_k) > 0) & (known_k[pos_c] == packed) if len(known_k) else np.zeros(len(packed), bool)
        vals = np.zeros(len(packed), dtype=bool)
        vals[found] = known_v[pos_c[found]]
        miss = np.flatnonzero(~found)
        if len(miss):
            new_k, first = np.unique(packed[miss], return_index=True)
            new_v = dist.within(frame.apply(idx[lat][miss[first]] * self.q), eps)
            vals[miss] = new_v[np.searchsorted(new_k, packed[miss])]
            at = np.searchsorted(known_k, new_k)
            self.store[key] = (np.insert(known_k, at, new_k), np.insert(known_v, at, new_v))
        out[lat] = vals
        return out


def extract_contact(
    pad: TriMesh,
    pad_spec: GridSpec,
    placements,
    posed_object: TriMesh | SurfaceDistance,
    eps: float,
    cache: ContactCache | None = None,
    cache_keys=None,
    layers=None,
) -> list[ContactPatch]:
    """Pad faces within ``eps`` of the part, one patch per finger placement.

    ``pad`` is in box coordinates; ``placements`` are the box-to-world
    transforms of the fingers, optionally backed off by whole voxel
    ``layers`` along ``+t``. Faces produced by the box cut are ignored: they
    bound the pad but never conform to the part. With a ``cache``,
    ``cache_keys`` names each unshifted placement (same key, same transform).
    """
    dist = posed_object if isinstance(posed_object, SurfaceDistance) else SurfaceDistance(posed_object)
    usable = ~_cut_faces(pad, pad_spec) & (pad.face_areas > 0)
    idx = np.flatnonzero(usable)
    cent_box = pad.face_centroids[idx]
    patches = []
    for n, frame in enumerate(placements):
        frame = frame.frame if isinstance(frame, GridSpec) else frame
        shift = 0 if layers is None else int(layers[n])
        if cache is None:
            near = dist.within(placement_offset(frame, shift, pad_spec.h).apply(cent_box), eps)
        else:
            near = cache.mask(cache_keys[n], cent_box, frame, dist, eps, shift, pad_spec.shape)
        hit = idx[near]
        normals = frame.apply_vectors(pad.face_normals[hit])
        areas = pad.face_areas[hit]
        patches.append(ContactPatch(hit, areas, normals, float(areas.sum())))
    return patches


def select_best(e_matrix) -> SelectionResult:
    """Min over poses, max over combinations; ties go to the lowest id.

    ``e_matrix`` is a sequence of per-combination sequences of E values
    (or a mapping ``i -> {m: E}`` with 1-based ``i``).
    """
    if isinstance(e_matrix, dict):
        ids = sorted(e_matrix)
        if ids != list(range(1, len(ids) + 1)):
            raise QualityError(f"combination ids must be 1..C, got {ids}")
        poses = sorted({m for row in e_matrix.values() for m in row})
        rows = []
        for i in ids:
            missing = [m for m in poses if m not in e_matrix[i]]
            if missing:
                raise QualityError(f"combination {i} lacks a record for pose(s) {missing}")
            rows.append([e_matrix[i][m] for m in poses])
    else:
        rows = [list(r) for r in e_matrix]
    if not rows:
        raise QualityError("no combinations to select from")
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise QualityError("every combination needs one E value per pose")
    q = tuple(float(min(r)) for r in rows)
    best = max(range(len(q)), key=lambda k: (q[k], -k))
    return SelectionResult(q, best + 1, q[best])


def placement_offset(frame: RigidTransform, layers: int, h: float) -> RigidTransform:
    """Frame backed off along its +t axis by whole voxel layers."""
    shift = frame.rotation[:, 2] * (layers * h)
    return RigidTransform(frame.rotation, frame.translation + shift)
