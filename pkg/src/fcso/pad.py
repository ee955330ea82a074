"""Fingerpad synthesis from part/sample-box intersections.

Every intersection grid lives in box coordinates (see ``sampler``): the
closing axis is ``+t``, ``t = 0`` is the face inside the part, and the pad
mounts on the outer face ``t = T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .mesh import RigidTransform, TriMesh
from .sampler import SampleBoxSpec
from .voxel import (
    GridSpec,
    OccupancyGrid,
    extract_surface,
    grid_bool,
    grid_volume,
    occupied_aabb,
    occupied_index_box,
    union_all,
    voxelize,
)

CANONICAL = RigidTransform.identity()
CLOSING_LOCAL = np.array([0.0, 0.0, 1.0])


class PadError(ValueError):
    pass


class Label(str, Enum):
    GOOD = "good"
    BAD = "bad"


class Validity(str, Enum):
    R_VALID = "R_valid"
    R_INVALID = "R_invalid_cluster_path"


class PadCase(str, Enum):
    ALL_GOOD = "all_good"
    ALL_BAD = "all_bad"
    MIXED = "mixed"


@dataclass(frozen=True)
class FilterParams:
    th: float = 0.1
    K: float = 1.5
    cluster_tol: float = 10.0  # degrees
    perp_tol: float = 10.0  # degrees

    def __post_init__(self):
        if not 0 < self.th < 1:
            raise PadError(f"th must lie in (0, 1), got {self.th}")
        if self.K < 1:
            raise PadError(f"K must be >= 1, got {self.K}")


@dataclass(frozen=True, eq=False)
class GeometryRecord:
    grid: OccupancyGrid
    V_I: float
    V_B: float
    R: float
    d_n: float | None = None
    label: Label | None = None
    validity: Validity | None = None
    # part surface inside the box, box coordinates; drives normal clustering
    surface: TriMesh | None = None
    tag: tuple = ()

    def canonical(self) -> OccupancyGrid:
        return self.grid.relabel(CANONICAL)


@dataclass(frozen=True, eq=False)
class PadGeometry:
    grid: OccupancyGrid
    mesh: TriMesh | None
    case: PadCase
    d_B: float
    count: int
    union: OccupancyGrid


@dataclass(frozen=True)
class NormalCluster:
    mean: np.ndarray
    area: float
    members: int


def record_from_grid(grid: OccupancyGrid, surface: TriMesh | None = None, tag=()) -> GeometryRecord:
    if grid.is_empty:
        raise PadError("empty intersection: the sample box misses the part")
    v_i = grid_volume(grid)
    _, v_b = occupied_aabb(grid)
    r = min(max((v_b - v_i) / v_b, 0.0), 1.0)
    return GeometryRecord(grid, v_i, v_b, r, surface=surface, tag=tag)


def _surface_in_box(posed_mesh: TriMesh, side_frame: GridSpec) -> TriMesh | None:
    local = side_frame.frame.inverse().apply(posed_mesh.vertices)
    ext = np.asarray(side_frame.extents)
    cent = local[posed_mesh.faces].mean(axis=1)
    inside = np.all((cent >= 0) & (cent <= ext), axis=1)
    if not inside.any():
        return None
    return TriMesh(local, posed_mesh.faces).submesh(inside)


def extract_intersection(posed_mesh: TriMesh, side_frame: GridSpec, tag=()) -> GeometryRecord:
    """Part-inside-box occupancy with its volume ratio ``R``."""
    grid = voxelize(posed_mesh, side_frame)
    return record_from_grid(grid, _surface_in_box(posed_mesh, side_frame), tag)


def depth_of_interest(rec: GeometryRecord, D: float) -> float:
    """Depth below the part surface at which a layer fills the bounding box.

    Layers are scanned from the part surface (outer side of the occupied
    box) toward the box's inner face. A layer qualifies when its occupied
    cells cover the whole cross-section of the occupied box. Coverage first
    reached only on the box's innermost layer comes from the box cut itself,
    so it, like no coverage at all, yields ``D``.
    """
    g = rec.grid
    h = g.spec.h
    (i0, i1), (j0, j1), (k0, k1) = occupied_index_box(g)
    sub = g.cells[i0:i1, j0:j1, :]
    for s, k in enumerate(range(k1 - 1, k0 - 1, -1)):
        if sub[:, :, k].all():
            if k == 0 and s > 0:
                return float(D)
            return float(min(s * h, D))
    return float(D)


def cluster_normals(surface: TriMesh, tol: float = 10.0) -> list[NormalCluster]:
    """Greedy area-weighted clustering of face normals.

    Faces are visited in index order and join the first cluster whose
    running mean lies within ``tol`` degrees, else start a new cluster.
    """
    normals = surface.face_normals
    areas = surface.face_areas
    cos_tol = math.cos(math.radians(tol))
    sums: list[np.ndarray] = []
    means: list[np.ndarray] = []
    totals: list[float] = []
    counts: list[int] = []
    for n, a in zip(normals, areas):
        if a <= 0:
            continue
        for c, m in enumerate(means):
            if float(np.dot(m, n)) >= cos_tol:
                sums[c] = sums[c] + a * n
                norm = np.linalg.norm(sums[c])
                means[c] = sums[c] / norm if norm > 0 else n
                totals[c] += float(a)
                counts[c] += 1
                break
        else:
            sums.append(a * n)
            means.append(n.copy())
            totals.append(float(a))
            counts.append(1)
    clusters = [NormalCluster(m, t, k) for m, t, k in zip(means, totals, counts)]
    clusters.sort(key=lambda c: -c.area)
    return clusters


def _surface_for_clustering(rec: GeometryRecord) -> TriMesh:
    if rec.surface is not None and not rec.surface.is_empty:
        return rec.surface
    # fall back to the voxel surface minus the faces made by the box cut
    mesh = extract_surface(rec.grid)
    ext = np.array(rec.grid.spec.shape) * rec.grid.spec.h
    tri = mesh.triangles
    on_cut = np.zeros(len(tri), dtype=bool)
    for axis in range(3):
        for value in (0.0, ext[axis]):
            on_cut |= np.all(np.abs(tri[:, :, axis] - value) < 1e-9, axis=1)
    return mesh.submesh(~on_cut)


def classify_geometry(rec: GeometryRecord, params: FilterParams, D: float) -> GeometryRecord:
    """Label a record good or bad; returns an updated copy."""
    d_n = rec.d_n if rec.d_n is not None else depth_of_interest(rec, D)
    if d_n < D - 1e-9:
        label = Label.GOOD if rec.R >= params.th else Label.BAD
        return replace(rec, d_n=d_n, label=label, validity=Validity.R_VALID)
    clusters = cluster_normals(_surface_for_clustering(rec), params.cluster_tol)
    label = Label.GOOD
    if clusters:
        cos_axis = abs(float(np.dot(clusters[0].mean, CLOSING_LOCAL)))
        if cos_axis >= math.cos(math.radians(params.perp_tol)):
            label = Label.BAD
    return replace(rec, d_n=d_n, label=label, validity=Validity.R_INVALID)


def analyse(posed_mesh: TriMesh, side_frame: GridSpec, params: FilterParams, D: float, tag=()) -> GeometryRecord:
    rec = extract_intersection(posed_mesh, side_frame, tag)
    return classify_geometry(replace(rec, d_n=depth_of_interest(rec, D)), params, D)


def inner_block(spec: GridSpec, depth: float) -> OccupancyGrid:
    """Full-footprint block of cells centred less than ``depth`` above ``t = 0``."""
    sel = spec.centers(2) < depth
    cells = np.broadcast_to(sel[None, None, :], spec.shape)
    return OccupancyGrid(spec, cells)


def outer_slab(spec: GridSpec, depth: float) -> OccupancyGrid:
    """Cells centred beyond ``depth`` (the flat pad of a flat contact)."""
    sel = spec.centers(2) > depth
    return OccupancyGrid(spec, np.broadcast_to(sel[None, None, :], spec.shape))


def synthesize_pad(
    records: list[GeometryRecord],
    params: FilterParams,
    spec: SampleBoxSpec,
    mesh: bool = True,
) -> PadGeometry:
    """Pad ``P = S - M`` for one finger from all records of one combination."""
    if not records:
        raise PadError("no geometry records to synthesise a pad from")
    grids = [r.canonical() for r in records]
    gspec = grids[0].spec
    for g in grids[1:]:
        if g.spec != gspec:
            raise PadError("records do not share one sample-box lattice")
    for r in records:
        if r.label is None:
            raise PadError("unclassified record")
    good = [r for r, g in zip(records, grids) if r.label is Label.GOOD]
    full = OccupancyGrid.full(gspec)
    d_b = 0.0
    if len(good) == len(records):
        case = PadCase.ALL_GOOD
        m = union_all([r.canonical() for r in good])
    elif not good:
        case = PadCase.ALL_BAD
        m = grid_bool(full, outer_slab(gspec, spec.D), "subtract")
    else:
        case = PadCase.MIXED
        depths = [r.d_n if r.validity is Validity.R_VALID else spec.D for r in good]
        d_b = min(min(depths) * params.K, spec.D)
        m = union_all([r.canonical() for r in good] + [inner_block(gspec, d_b)])
    p = grid_bool(full, m, "subtract")
    pad_mesh = extract_surface(p) if mesh and not p.is_empty else None
    return PadGeometry(p, pad_mesh, case, d_b, len(records), m)


def settle_layers(pad: OccupancyGrid, part: OccupancyGrid) -> int:
    """Fewest whole layers the pad must back off (+t) to clear the part."""
    p = pad.cells
    q = part.cells
    nk = p.shape[2]
    for s in range(nk + 1):
        if s == 0:
            clash = np.any(p & q)
        else:
            clash = np.any(p[:, :, : nk - s] & q[:, :, s:])
        if not clash:
            return s
    return nk


def count_combinations(counts) -> int:
    counts = [int(c) for c in counts]
    if not counts:
        raise PadError("no poses")
    for m, c in enumerate(counts):
        if c <= 0:
            raise PadError(f"pose {m} has no feasible grasp")
    return math.prod(counts)
