"""Resting orientations of a rigid part on a horizontal table.

Quasistatic model: each face of the convex hull (coplanar facets merged)
is a candidate support. A support is stable when the centre of mass
projects inside the support polygon with a margin. Its probability is the
solid angle the support subtends at the centre of mass, renormalised over
the stable supports.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, RigidTransform, TriMesh, apply_transform, center_of_mass, convex_hull

STABILITY_MARGIN = 0.5  # mm
MERGE_ANGLE_DEG = 0.5
MERGE_OFFSET = 1e-3  # mm
APPROACH = np.array([0.0, 0.0, -1.0])


class PoseError(ValueError):
    pass


@dataclass(frozen=True)
class StablePose:
    transform: RigidTransform
    support_facet: tuple[int, ...]
    probability: float
    normal: tuple[float, float, float]
    approach: tuple[float, float, float] = tuple(APPROACH)

    def place(self, mesh: TriMesh) -> TriMesh:
        return apply_transform(mesh, self.transform)


@dataclass(frozen=True)
class PoseSelection:
    poses: tuple[StablePose, ...]
    indices: tuple[int, ...]
    n_p: int
    source: str  # "random(<seed>)" or "manual"


def _solid_angle(tri: np.ndarray, apex: np.ndarray) -> np.ndarray:
    """Signed solid angle of triangles seen from ``apex`` (Van Oosterom-Strackee)."""
    a = tri[:, 0] - apex
    b = tri[:, 1] - apex
    c = tri[:, 2] - apex
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = (
        la * lb * lc
        + np.einsum("ij,ij->i", a, b) * lc
        + np.einsum("ij,ij->i", a, c) * lb
        + np.einsum("ij,ij->i", b, c) * la
    )
    return 2.0 * np.arctan2(num, den)


def _group_facets(hull: TriMesh) -> list[np.ndarray]:
    normals = hull.face_normals
    offsets = np.einsum("ij,ij->i", normals, hull.triangles[:, 0])
    cos_tol = np.cos(np.radians(MERGE_ANGLE_DEG))
    groups: list[list[int]] = []
    reps: list[tuple[np.ndarray, float]] = []
    # largest facets seed groups so merged normals stay representative
    for f in np.argsort(-hull.face_areas, kind="stable"):
        for g, (n, d) in enumerate(reps):
            if np.dot(n, normals[f]) >= cos_tol and abs(d - offsets[f]) < MERGE_OFFSET:
                groups[g].append(int(f))
                break
        else:
            groups.append([int(f)])
            reps.append((normals[f], offsets[f]))
    return [np.sort(np.array(g)) for g in groups]


def _polygon_margin(points2: np.ndarray, q: np.ndarray) -> float:
    """Signed distance from ``q`` to the boundary of the convex hull of points (2D).

    Positive inside.
    """
    pts = np.unique(np.round(points2, 12), axis=0)
    if len(pts) < 3:
        return -np.inf
    # monotone chain
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross2(a, b):
        return a[0] * b[1] - a[1] * b[0]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    ring = np.array(lower[:-1] + upper[:-1])
    if len(ring) < 3:
        return -np.inf
    nxt = np.roll(ring, -1, axis=0)
    edge = nxt - ring
    length = np.linalg.norm(edge, axis=1)
    cross = edge[:, 0] * (q[1] - ring[:, 1]) - edge[:, 1] * (q[0] - ring[:, 0])
    return float(np.min(cross / length))


def enumerate_stable_poses(mesh: TriMesh, margin: float = STABILITY_MARGIN) -> list[StablePose]:
    """Stable resting poses sorted by descending probability."""
    mesh.require_watertight()
    com = center_of_mass(mesh)
    hull = convex_hull(mesh)
    omega = _solid_angle(hull.triangles, com)
    candidates = []
    for group in _group_facets(hull):
        area = hull.face_areas[group]
        n = (hull.face_normals[group] * area[:, None]).sum(axis=0)
        n /= np.linalg.norm(n)
        rot = RigidTransform.aligning(n, APPROACH)
        pts = rot.apply(hull.triangles[group].reshape(-1, 3))
        com_r = rot.apply(com)
        if _polygon_margin(pts[:, :2], com_r[:2]) < margin - 1e-9:
            continue
        candidates.append((float(omega[group].sum()), group, n, rot))
    if not candidates:
        return []
    total = sum(c[0] for c in candidates)
    poses = []
    for w, group, n, rot in candidates:
        placed = rot.apply(mesh.vertices)
        c = rot.apply(com)
        shift = np.array([-c[0], -c[1], -placed[:, 2].min()])
        t = RigidTransform(rot.rotation, rot.translation + shift)
        poses.append(
            StablePose(
                transform=t,
                support_facet=tuple(int(x) for x in group),
                probability=w / total,
                normal=tuple(float(x) for x in n),
            )
        )
    # stable sort keeps hull order among equal probabilities
    order = sorted(range(len(poses)), key=lambda k: -round(poses[k].probability, 12))
    return [poses[k] for k in order]


def select_poses(poses, n_p: int, mode: str = "random", seed: int = 0, indices=None) -> PoseSelection:
    """Choose ``n_p`` poses uniformly at random (seeded) or by 0-based index."""
    poses = list(poses)
    if n_p < 1:
        raise PoseError("number of poses must be >= 1")
    if n_p > len(poses):
        raise PoseError(f"requested {n_p} poses but only {len(poses)} stable pose(s) available")
    if mode == "manual":
        if indices is None:
            raise PoseError("manual pose selection needs indices")
        idx = [int(i) for i in indices]
        if len(set(idx)) != len(idx):
            raise PoseError(f"duplicate pose indices {idx}")
        if len(idx) != n_p:
            raise PoseError(f"manual selection lists {len(idx)} indices, expected {n_p}")
        bad = [i for i in idx if not 0 <= i < len(poses)]
        if bad:
            raise PoseError(f"pose indices {bad} out of range; {len(poses)} available")
        source = "manual"
    elif mode == "random":
        idx = random.Random(seed).sample(range(len(poses)), n_p)
        source = f"random({seed})"
    else:
        raise PoseError(f"unknown pose selection mode {mode!r}")
    return PoseSelection(tuple(poses[i] for i in idx), tuple(idx), n_p, source)


def placed(mesh: TriMesh, pose: StablePose) -> TriMesh:
    out = pose.place(mesh)
    if out.vertices[:, 2].min() < -1e-6:
        raise MeshError("placed mesh dips below the table")
    return out
