"""Paired sample boxes slid over a posed part to find grasp locations.

Frames: for a closing axis ``c`` (horizontal) the box frame of the finger on
the ``+c`` side has axes ``u = z x c`` (lateral, length L), ``v = z``
(vertical, width W) and ``t = c`` (thickness T, pointing away from the
part). The box spans ``[0, L] x [0, W] x [0, T]``; ``t = 0`` is the face
inside the part and the part surface sits at ``t = D``. The opposite finger
uses the same frame turned 180 degrees about the vertical, so both fingers
see their geometry in identical box coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mesh import RigidTransform, TriMesh
from .raycast import lattice_hits
from .voxel import GridSpec, OccupancyGrid, voxelize

UP = np.array([0.0, 0.0, 1.0])
CLOSING_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SampleBoxSpec:
    L: float = 20.0
    W: float = 20.0
    T: float = 5.0
    D: float = 4.0
    stride: float | None = None

    def __post_init__(self):
        if min(self.L, self.W, self.T) <= 0:
            raise SamplerError("sample box extents must be positive")
        if not 0 < self.D < self.T:
            raise SamplerError(f"penetration depth must satisfy 0 < D < T (D={self.D}, T={self.T})")
        if self.stride is None:
            object.__setattr__(self, "stride", self.L / 5.0)
        if self.stride <= 0:
            raise SamplerError("stride must be positive")

    @property
    def extents(self) -> tuple[float, float, float]:
        return (self.L, self.W, self.T)


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 50.0
    # body extents (closing axis, lateral, vertical) above the fingertips
    body_box: tuple[float, float, float] = (90.0, 40.0, 60.0)
    finger_length: float = 60.0
    flat_finger_mesh: TriMesh | None = field(default=None, compare=False)
    min_contact_volume: float = 50.0
    min_contact_footprint: float = 25.0
    max_per_pose: int = 64

    def __post_init__(self):
        if self.max_opening <= 0:
            raise SamplerError("gripper opening must be positive")
        if self.max_per_pose < 1:
            raise SamplerError("max_per_pose must be >= 1")


class Rejection(str, Enum):
    CONTACT = "contact"
    COLLISION = "collision"
    OPENING = "opening"


@dataclass(frozen=True)
class GraspCandidate:
    pose_id: int
    closing_axis: tuple[float, float, float]
    center: tuple[float, float]  # (lateral, height) of the box footprint centre
    side_frames: tuple[GridSpec, GridSpec]
    grasp_width: float
    contact_volume: tuple[float, float] = (0.0, 0.0)

    @property
    def axis_index(self) -> int:
        return int(np.argmax(np.abs(self.closing_axis)))

    @property
    def sort_key(self):
        return (self.axis_index, round(self.center[1], 9), round(self.center[0], 9))


@dataclass(frozen=True)
class Feasibility:
    ok: bool
    reason: Rejection | None = None
    contact_volume: tuple[float, float] = (0.0, 0.0)
    contact_footprint: tuple[float, float] = (0.0, 0.0)

    def __bool__(self):
        return self.ok


def closing_frame(closing_axis) -> np.ndarray:
    """Rotation with columns (lateral, up, closing)."""
    c = np.asarray(closing_axis, dtype=float)
    u = np.cross(UP, c)
    return np.column_stack([u, UP, c])


def side_frames(closing_axis, center, t_max, t_min, spec: SampleBoxSpec, h: float):
    """The two finger box frames for a footprint centre and tangent extremes.

    ``t_max`` / ``t_min`` are the part's extreme coordinates along the
    closing axis inside the footprint; ``center`` is (lateral, height) in the
    closing frame.
    """
    rot = closing_frame(closing_axis)
    u_c, v_c = center
    right_origin = rot @ np.array([u_c - spec.L / 2, v_c - spec.W / 2, t_max - spec.D])
    left_rot = rot @ np.diag([-1.0, 1.0, -1.0])
    left_origin = rot @ np.array([u_c + spec.L / 2, v_c - spec.W / 2, t_min + spec.D])
    ext = spec.extents
    return (
        GridSpec(RigidTransform(rot, right_origin), ext, h),
        GridSpec(RigidTransform(left_rot, left_origin), ext, h),
    )


@dataclass
class _Silhouette:
    """Per-column extremes of the part along one closing axis."""

    u0: float
    h: float
    t_min: np.ndarray  # (nu, nv), nan where the column misses the part
    t_max: np.ndarray

    def window(self, u_lo, u_hi, v_lo, v_hi):
        nu, nv = self.t_min.shape
        i0 = max(int(math.ceil((u_lo - self.u0) / self.h - 0.5)), 0)
        i1 = min(int(math.floor((u_hi - self.u0) / self.h - 0.5)), nu - 1)
        j0 = max(int(math.ceil(v_lo / self.h - 0.5)), 0)
        j1 = min(int(math.floor(v_hi / self.h - 0.5)), nv - 1)
        if i1 < i0 or j1 < j0:
            return None
        lo = self.t_min[i0 : i1 + 1, j0 : j1 + 1]
        hi = self.t_max[i0 : i1 + 1, j0 : j1 + 1]
        if np.all(np.isnan(lo)):
            return None
        return float(np.nanmin(lo)), float(np.nanmax(hi))


def _silhouette(mesh: TriMesh, closing_axis, h: float) -> tuple[_Silhouette, tuple[float, float], float]:
    rot = closing_frame(closing_axis)
    local = mesh.vertices @ rot
    u_min, u_max = local[:, 0].min(), local[:, 0].max()
    v_max = local[:, 1].max()
    origin = rot @ np.array([u_min, 0.0, 0.0])
    nu = int(math.ceil((u_max - u_min) / h)) + 1
    nv = int(math.ceil(max(v_max, h) / h)) + 1
    ci, cj, z = lattice_hits(mesh, RigidTransform(rot, origin), h, (nu, nv))
    t_min = np.full((nu, nv), np.inf)
    t_max = np.full((nu, nv), -np.inf)
    np.minimum.at(t_min, (ci, cj), z)
    np.maximum.at(t_max, (ci, cj), z)
    t_min[np.isinf(t_min)] = np.nan
    t_max[np.isinf(t_max)] = np.nan
    return _Silhouette(u_min, h, t_min, t_max), (u_min, u_max), v_max


def _body_box(candidate: GraspCandidate, spec: SampleBoxSpec, gripper: GripperSpec, h: float) -> GridSpec:
    rot = closing_frame(candidate.closing_axis)
    right, left = candidate.side_frames
    c = np.asarray(candidate.closing_axis)
    t_right = float(right.frame.translation @ c) + spec.T
    t_left = float(left.frame.translation @ c) - spec.T
    bx, by, bz = gripper.body_box
    bx = max(bx, t_right - t_left)
    t_mid = 0.5 * (t_right + t_left)
    u_c, v_c = candidate.center
    v_bottom = v_c - spec.W / 2 + gripper.finger_length
    origin = rot @ np.array([u_c - by / 2, v_bottom, t_mid - bx / 2])
    return GridSpec(RigidTransform(rot, origin), (by, bz, bx), max(h, 1.0))


def _body_collides(posed_mesh: TriMesh, body: GridSpec) -> bool:
    local = body.frame.inverse().apply(posed_mesh.vertices)
    ext = np.asarray(body.extents)
    if np.any(np.all((local >= 0) & (local <= ext), axis=1)):
        return True
    return not voxelize(posed_mesh, body).is_empty


def check_feasibility(
    candidate: GraspCandidate,
    posed_mesh: TriMesh,
    spec: SampleBoxSpec,
    gripper: GripperSpec,
    grids: tuple[OccupancyGrid, OccupancyGrid] | None = None,
) -> Feasibility:
    """Opening, contact and collision checks for one sample pair."""
    if candidate.grasp_width > gripper.max_opening + 1e-9:
        return Feasibility(False, Rejection.OPENING)
    if grids is None:
        grids = tuple(voxelize(posed_mesh, f) for f in candidate.side_frames)
    h = candidate.side_frames[0].h
    vols = tuple(g.count * h**3 for g in grids)
    feet = tuple(float(np.count_nonzero(g.cells.any(axis=2))) * h * h for g in grids)
    for vol, foot in zip(vols, feet):
        if vol < gripper.min_contact_volume or foot < gripper.min_contact_footprint:
            return Feasibility(False, Rejection.CONTACT, vols, feet)
    for f in candidate.side_frames:
        corners = f.frame.apply(np.array([[0, 0, 0], [0, f.extents[1], 0]], dtype=float))
        if corners[:, 2].min() < -1e-9:
            return Feasibility(False, Rejection.COLLISION, vols, feet)
    body = _body_box(candidate, spec, gripper, h)
    if body.frame.translation[2] < -1e-9 or _body_collides(posed_mesh, body):
        return Feasibility(False, Rejection.COLLISION, vols, feet)
    return Feasibility(True, None, vols, feet)


def _lattice(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(max(n, 0))


def sample_grasps(
    posed_mesh: TriMesh,
    spec: SampleBoxSpec,
    gripper: GripperSpec,
    h: float = 0.25,
    pose_id: int = 0,
    rejections: dict | None = None,
) -> list[GraspCandidate]:
    """Feasible sample pairs on a part resting on ``z = 0``.

    Footprint centres lie on a lattice anchored at the part's lateral minimum
    and at ``W / 2`` above the table, with step ``spec.stride``, so halving
    the stride yields a superset of positions. At most
    ``gripper.max_per_pose`` candidates are kept (largest contact volume).
    """
    posed_mesh.require_watertight()
    found: list[GraspCandidate] = []
    for axis in CLOSING_AXES:
        sil, (u_min, u_max), v_max = _silhouette(posed_mesh, axis, h)
        for v_c in _lattice(spec.W / 2, v_max + spec.W / 2, spec.stride):
            for u_c in _lattice(u_min, u_max, spec.stride):
                ext = sil.window(u_c - spec.L / 2, u_c + spec.L / 2, v_c - spec.W / 2, v_c + spec.W / 2)
                if ext is None:
                    continue
                t_min, t_max = ext
                frames = side_frames(axis, (u_c, v_c), t_max, t_min, spec, h)
                cand = GraspCandidate(
                    pose_id=pose_id,
                    closing_axis=tuple(float(x) for x in axis),
                    center=(float(u_c), float(v_c)),
                    side_frames=frames,
                    grasp_width=t_max - t_min,
                )
                res = check_feasibility(cand, posed_mesh, spec, gripper)
                if rejections is not None:
                    key = res.reason.value if res.reason else "ok"
                    rejections[key] = rejections.get(key, 0) + 1
                if res:
                    found.append(
                        GraspCandidate(
                            cand.pose_id, cand.closing_axis, cand.center, frames,
                            cand.grasp_width, res.contact_volume,
                        )
                    )
    if len(found) > gripper.max_per_pose:
        ranked = sorted(found, key=lambda c: (-sum(c.contact_volume), c.sort_key))
        found = ranked[: gripper.max_per_pose]
    found.sort(key=lambda c: c.sort_key)
    return found
