"""Mounting the chosen pad on the flat finger.

Convention for the flat-finger STL: the pad face is the finger's flat face
whose outward normal is +X, and it sits at the finger's maximum x. The pad's
outer face (box ``t = T``) is laid on that face with the pad's object side
pointing +X, its ``v`` axis along +Z and its footprint centred on the face.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, RigidTransform, TriMesh, concatenate, signed_volume
from .voxel import GridSpec, OccupancyGrid, extract_surface, voxelize

EMBED = 0.2  # mm the pad sinks into the finger in shell mode
MAX_EMBED = 0.5
FACE_ANGLE_TOL = 1e-3


class FusionError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class FingerAssembly:
    finger: TriMesh
    pad: TriMesh
    mount: RigidTransform
    fused: TriMesh


def pad_face(finger: TriMesh) -> tuple[float, np.ndarray, np.ndarray]:
    """Plane x and (y, z) bounds of the finger's +X pad face."""
    if finger.is_empty:
        raise FusionError("floating pad: the finger mesh is empty")
    n = finger.face_normals
    x_max = finger.vertices[:, 0].max()
    tri = finger.triangles
    on_face = (n[:, 0] > 1 - FACE_ANGLE_TOL) & np.all(np.abs(tri[:, :, 0] - x_max) < 1e-6, axis=1)
    if not on_face.any():
        raise FusionError("flat finger has no +X pad face at its maximum x")
    pts = tri[on_face].reshape(-1, 3)
    return float(x_max), pts[:, 1:].min(axis=0), pts[:, 1:].max(axis=0)


def default_mount(finger: TriMesh, pad_extents, embed: float = 0.0) -> RigidTransform:
    """Pad box frame -> finger frame, pad centred on the +X face.

    Box axes map as ``u -> -Y``, ``v -> +Z``, ``t -> -X`` so the object
    side (``t = 0``) is outermost.
    """
    x_face, lo, hi = pad_face(finger)
    L, W, T = pad_extents
    centre = 0.5 * (lo + hi)
    rot = np.column_stack([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
    origin = np.array([x_face + T - embed, centre[0] + L / 2, centre[1] - W / 2])
    return RigidTransform(rot, origin)


def _check_mount(finger: TriMesh, pad: TriMesh, mount: RigidTransform) -> None:
    x_face, lo, hi = pad_face(finger)
    placed = mount.apply(pad.vertices)
    base = placed[:, 0].min()
    if base > x_face + 1e-6 or base < x_face - MAX_EMBED - 1e-6:
        raise FusionError(
            f"floating pad: pad base at x={base:.3f} is not on the finger face x={x_face:.3f}"
        )
    p_lo = placed[:, 1:].min(axis=0)
    p_hi = placed[:, 1:].max(axis=0)
    if np.any(p_hi <= lo) or np.any(p_lo >= hi):
        raise FusionError("floating pad: pad footprint misses the finger face")


def fuse_pad(
    finger: TriMesh,
    pad: TriMesh,
    mount: RigidTransform,
    mode: str = "shell",
    h: float = 0.25,
) -> TriMesh:
    """Join pad and finger into one printable body.

    ``shell`` concatenates the two closed shells with the pad sunk ``EMBED``
    into the finger; ``remesh`` voxel-unions both bodies and re-extracts a
    single watertight surface.
    """
    if finger.is_empty:
        raise FusionError("floating pad: the finger mesh is empty")
    if pad.is_empty:
        raise FusionError("empty pad")
    _check_mount(finger, pad, mount)
    placed = TriMesh(mount.apply(pad.vertices), pad.faces)
    if mode == "shell":
        x_face = pad_face(finger)[0]
        sink = EMBED - (x_face - placed.vertices[:, 0].min())
        if sink > 0:
            placed = TriMesh(placed.vertices - [sink, 0.0, 0.0], placed.faces)
        return concatenate([finger, placed])
    if mode == "remesh":
        both = concatenate([finger, placed])
        lo = both.vertices.min(axis=0) - h
        hi = both.vertices.max(axis=0) + h
        spec = GridSpec(RigidTransform(np.eye(3), lo), tuple(hi - lo), h)
        cells = voxelize(finger, spec).cells | voxelize(placed, spec).cells
        return extract_surface(OccupancyGrid(spec, cells), spec.frame)
    raise ValueError(f"unknown fusion mode {mode!r}")


def assemble(finger: TriMesh, pad: TriMesh, pad_extents, mode: str = "shell", h: float = 0.25) -> FingerAssembly:
    mount = default_mount(finger, pad_extents)
    fused = fuse_pad(finger, pad, mount, mode, h)
    if mode == "remesh" and signed_volume(fused) < signed_volume(finger) - 1e-6:
        raise FusionError("fused body lost volume")
    return FingerAssembly(finger, pad, mount, fused)
