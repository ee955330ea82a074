"""Boolean occupancy grids over a sample-box frame.

A grid covers the box ``[0, L] x [0, W] x [0, T]`` of its frame with cubic
cells of edge ``h``; cell ``(i, j, k)`` is centred at ``((i+.5)h, (j+.5)h,
(k+.5)h)`` in box coordinates. Occupancy is sampled at cell centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage.measure import marching_cubes

from .mesh import Aabb, MeshError, RigidTransform, TriMesh, merge_vertices
from .raycast import SURFACE_TOL, lattice_hits


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    frame: RigidTransform
    extents: tuple[float, float, float]
    h: float

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "h", float(self.h))
        if len(ext) != 3 or min(ext) <= 0:
            raise GridError(f"grid extents must be positive, got {ext}")
        if not self.h > 0:
            raise GridError("grid resolution must be positive")
        if min(self.shape) < 2:
            raise GridError(f"grid needs >= 2 cells per axis, got {self.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        # tolerate extents that are float-noise multiples of h
        return tuple(int(math.ceil(e / self.h - 1e-9)) for e in self.extents)

    @property
    def cell_volume(self) -> float:
        return self.h**3

    def centers(self, axis: int) -> np.ndarray:
        return (np.arange(self.shape[axis]) + 0.5) * self.h

    def with_frame(self, frame: RigidTransform) -> GridSpec:
        return GridSpec(frame, self.extents, self.h)

    def same_lattice(self, other: GridSpec) -> bool:
        return self.extents == other.extents and self.h == other.h


class OccupancyGrid:
    """Dense boolean field; treat as immutable."""

    def __init__(self, spec: GridSpec, cells):
        c = np.asarray(cells, dtype=bool)
        if c.shape != spec.shape:
            raise GridError(f"cell array {c.shape} does not match spec {spec.shape}")
        c = c.copy()
        c.setflags(write=False)
        self.spec = spec
        self.cells = c

    @classmethod
    def empty(cls, spec: GridSpec) -> OccupancyGrid:
        return cls(spec, np.zeros(spec.shape, dtype=bool))

    @classmethod
    def full(cls, spec: GridSpec) -> OccupancyGrid:
        return cls(spec, np.ones(spec.shape, dtype=bool))

    def __repr__(self):
        return f"OccupancyGrid(shape={self.cells.shape}, h={self.spec.h}, occupied={self.count})"

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.cells, other.cells)

    __hash__ = None

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @property
    def is_empty(self) -> bool:
        return not self.cells.any()

    def relabel(self, frame: RigidTransform) -> OccupancyGrid:
        """Same cells expressed in another frame (box coordinates unchanged)."""
        return OccupancyGrid(self.spec.with_frame(frame), self.cells)


def _column_parity(spec: GridSpec, ci, cj, z) -> np.ndarray:
    ni, nj, nk = spec.shape
    h = spec.h
    k0 = np.clip(np.floor(z / h - 0.5).astype(np.int64) + 1, 0, nk)
    delta = np.zeros((ni, nj, nk + 1), dtype=np.int32)
    np.add.at(delta, (ci, cj, k0), 1)
    below = np.cumsum(delta[:, :, :nk], axis=2)
    cells = (below & 1).astype(bool)
    # centres lying on the surface count as inside
    kr = np.rint(z / h - 0.5).astype(np.int64)
    ok = (kr >= 0) & (kr < nk)
    on = ok & (np.abs(z - (kr + 0.5) * h) <= SURFACE_TOL)
    cells[ci[on], cj[on], kr[on]] = True
    return cells


def voxelize(mesh: TriMesh, spec: GridSpec) -> OccupancyGrid:
    """Occupancy of ``mesh`` (world coordinates) at the grid's cell centres."""
    mesh.require_watertight()
    ni, nj, _ = spec.shape
    ci, cj, z = lattice_hits(mesh, spec.frame, spec.h, (ni, nj))
    return OccupancyGrid(spec, _column_parity(spec, ci, cj, z))


def _check_pair(a: OccupancyGrid, b: OccupancyGrid):
    if a.spec != b.spec:
        raise GridError("Boolean operands must share one GridSpec")


def grid_bool(a: OccupancyGrid, b: OccupancyGrid, op: str) -> OccupancyGrid:
    _check_pair(a, b)
    if op == "union":
        cells = a.cells | b.cells
    elif op == "intersect":
        cells = a.cells & b.cells
    elif op == "subtract":
        cells = a.cells & ~b.cells
    else:
        raise ValueError(f"unknown Boolean op {op!r}")
    return OccupancyGrid(a.spec, cells)


def union_all(grids, spec: GridSpec | None = None) -> OccupancyGrid:
    grids = list(grids)
    if not grids:
        if spec is None:
            raise GridError("union of nothing needs a spec")
        return OccupancyGrid.empty(spec)
    out = grids[0].cells.copy()
    for g in grids[1:]:
        _check_pair(grids[0], g)
        out |= g.cells
    return OccupancyGrid(grids[0].spec, out)


def grid_volume(g: OccupancyGrid) -> float:
    return g.count * g.spec.cell_volume


def occupied_aabb(g: OccupancyGrid) -> tuple[Aabb, float]:
    """Tightest cell-boundary box (box frame) around the occupied cells."""
    if g.is_empty:
        raise GridError("occupied_aabb of an empty grid")
    h = g.spec.h
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(g.cells.any(axis=other))
        lo.append(idx[0] * h)
        hi.append((idx[-1] + 1) * h)
    box = Aabb(tuple(lo), tuple(hi))
    return box, box.volume


def occupied_index_box(g: OccupancyGrid) -> tuple[tuple[int, int], ...]:
    """Inclusive-exclusive index ranges of the occupied cells per axis."""
    if g.is_empty:
        raise GridError("empty grid")
    out = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(g.cells.any(axis=other))
        out.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(out)


def extract_surface(g: OccupancyGrid, frame: RigidTransform | None = None) -> TriMesh:
    """Closed isosurface at 0.5 occupancy, in box coordinates by default.

    The field is padded with one empty layer so the surface closes exactly
    on the box faces. The classic case table resolves every ambiguous face
    the same way on a binary field, which keeps edges manifold where voxels
    touch only diagonally. Pass ``frame`` to get world coordinates instead.
    """
    if g.is_empty:
        raise GridError("cannot extract a surface from an empty grid")
    field = np.pad(g.cells.astype(np.float32), 1)
    verts, faces, _, _ = marching_cubes(field, level=0.5, allow_degenerate=False, method="lorensen")
    faces = faces[:, ::-1]
    # on a binary field every vertex is an edge midpoint: weld on the half-cell lattice
    half = np.rint(verts.astype(np.float64) * 2).astype(np.int64)
    if np.all(np.abs(half / 2 - verts) < 1e-4):
        dims = half.max(axis=0) + 1
        key = (half[:, 0] * dims[1] + half[:, 1]) * dims[2] + half[:, 2]
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        f = rank[inv.ravel()][faces]
        keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        mesh = TriMesh((half[first[order]] / 2 - 0.5) * g.spec.h, f[keep])
    else:
        verts = (verts.astype(np.float64) - 0.5) * g.spec.h
        mesh = merge_vertices(verts, faces, tol=1e-9 * g.spec.h)
    if frame is not None:
        mesh = TriMesh(frame.apply(mesh.vertices), mesh.faces)
    return mesh


def grid_to_rle(g: OccupancyGrid) -> str:
    """Text dump: header lines then run lengths of the C-ordered bit field."""
    spec = g.spec
    flat = g.cells.ravel(order="C")
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    r = spec.frame.rotation.ravel()
    t = spec.frame.translation
    lines = [
        "FCSO-GRID 1",
        "dims " + " ".join(str(n) for n in spec.shape),
        f"extents {spec.extents[0]!r} {spec.extents[1]!r} {spec.extents[2]!r}",
        f"h {spec.h!r}",
        "rotation " + " ".join(repr(float(x)) for x in r),
        "translation " + " ".join(repr(float(x)) for x in t),
        f"first {int(flat[0]) if flat.size else 0}",
        "runs " + " ".join(str(int(x)) for x in runs),
    ]
    return "\n".join(lines) + "\n"


def grid_from_rle(text: str) -> OccupancyGrid:
    fields = {}
    for line in text.strip().splitlines():
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    if fields.get("FCSO-GRID") != ["1"]:
        raise GridError("not an FCSO grid dump")
    rot = np.array([float(x) for x in fields["rotation"]]).reshape(3, 3)
    tr = np.array([float(x) for x in fields["translation"]])
    spec = GridSpec(RigidTransform(rot, tr), tuple(float(x) for x in fields["extents"]), float(fields["h"][0]))
    dims = tuple(int(x) for x in fields["dims"])
    if dims != spec.shape:
        raise GridError(f"dims {dims} disagree with extents/h {spec.shape}")
    runs = np.array([int(x) for x in fields["runs"]], dtype=np.int64)
    if runs.sum() != np.prod(dims):
        raise GridError("run lengths do not cover the grid")
    first = int(fields["first"][0])
    values = (np.arange(len(runs)) + first) % 2 == 1
    return OccupancyGrid(spec, np.repeat(values, runs).reshape(dims))


def box_mask(spec: GridSpec, axis: int, lo: float, hi: float) -> np.ndarray:
    """Cells whose centre coordinate along ``axis`` lies in ``[lo, hi)``."""
    c = spec.centers(axis)
    sel = (c >= lo) & (c < hi)
    shape = [1, 1, 1]
    shape[axis] = -1
    return np.broadcast_to(sel.reshape(shape), spec.shape)


def mesh_in_box_frame(mesh: TriMesh, spec: GridSpec) -> TriMesh:
    return TriMesh(spec.frame.inverse().apply(mesh.vertices), mesh.faces)


def require_nonempty(g: OccupancyGrid, what: str = "grid") -> None:
    if g.is_empty:
        raise MeshError(f"{what} is empty")
