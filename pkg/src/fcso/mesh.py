"""Indexed triangle meshes, rigid transforms and mass properties.

All lengths are millimetres. Meshes are immutable once built; every
operation returns a new object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial import QhullError

DEDUP_TOL = 1e-6
ORTHO_TOL = 1e-9


class MeshError(ValueError):
    """Raised for geometry that violates an operation's preconditions."""


class NotWatertightError(MeshError):
    def __init__(self, open_edges: int):
        super().__init__(f"mesh is not watertight: {open_edges} open edge(s)")
        self.open_edges = open_edges


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``x -> R @ x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise MeshError("transform has non-finite entries")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-8 or abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise MeshError("rotation is not orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_axes(cls, x_axis, y_axis, z_axis, origin=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Frame whose local axes are the given world directions (columns)."""
        return cls(np.column_stack([x_axis, y_axis, z_axis]), origin)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        r = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        return cls(r, translation)

    @classmethod
    def aligning(cls, source, target) -> RigidTransform:
        """Minimal rotation taking unit direction ``source`` onto ``target``."""
        a = np.asarray(source, dtype=float)
        b = np.asarray(target, dtype=float)
        a = a / np.linalg.norm(a)
        b = b / np.linalg.norm(b)
        c = float(np.dot(a, b))
        axis = np.cross(a, b)
        s = np.linalg.norm(axis)
        if s < 1e-12:
            if c > 0:
                return cls()
            # antiparallel: rotate pi about any axis orthogonal to a
            helper = np.eye(3)[np.argmin(np.abs(a))]
            return cls.from_axis_angle(np.cross(a, helper), np.pi)
        return cls.from_axis_angle(axis, np.arctan2(s, c))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        """``(a @ b).apply(x) == a.apply(b.apply(x))``."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


@dataclass(frozen=True)
class Aabb:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise MeshError(f"invalid box {self.lo} > {self.hi}")

    @property
    def extents(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))


class TriMesh:
    """Indexed triangle surface.

    Args:
        vertices: ``(n, 3)`` float array in mm.
        faces: ``(m, 3)`` integer array of vertex indices, counter-clockwise
            seen from outside.
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f

    def __repr__(self):
        return f"TriMesh(vertices={len(self.vertices)}, faces={len(self.faces)})"

    def __len__(self):
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def _cross(self) -> np.ndarray:
        t = self.triangles
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals by right-hand winding; zero rows for degenerate faces."""
        c = self._cross
        n = np.linalg.norm(c, axis=1, keepdims=True)
        out = np.zeros_like(c)
        ok = n[:, 0] > 0
        out[ok] = c[ok] / n[ok]
        return out

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], self._cross)
        n = np.linalg.norm(acc, axis=1, keepdims=True)
        n[n == 0] = 1.0
        return acc / n

    @cached_property
    def open_edge_count(self) -> int:
        """Directed edges lacking exactly one oppositely oriented partner."""
        if self.is_empty:
            return 0
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        n = len(self.vertices)
        key = directed[:, 0] * n + directed[:, 1]
        rev = directed[:, 1] * n + directed[:, 0]
        uniq, counts = np.unique(key, return_counts=True)
        dup = int(np.sum(counts[counts > 1]))
        rev_found = np.isin(rev, uniq)
        return dup + int(np.sum(~rev_found))

    @property
    def is_watertight(self) -> bool:
        return not self.is_empty and self.open_edge_count == 0

    @property
    def bounds(self) -> Aabb:
        if len(self.vertices) == 0:
            raise MeshError("empty mesh has no bounds")
        return Aabb(tuple(self.vertices.min(0)), tuple(self.vertices.max(0)))

    def require_watertight(self) -> None:
        if self.is_empty:
            raise MeshError("empty mesh")
        if self.open_edge_count:
            raise NotWatertightError(self.open_edge_count)

    def flipped(self) -> TriMesh:
        return TriMesh(self.vertices, self.faces[:, ::-1])

    def submesh(self, face_mask) -> TriMesh:
        faces = self.faces[np.asarray(face_mask)]
        used, inv = np.unique(faces, return_inverse=True)
        return TriMesh(self.vertices[used], inv.reshape(-1, 3))


def merge_vertices(vertices, faces, tol: float = DEDUP_TOL) -> TriMesh:
    """Weld vertices closer than ``tol`` and drop faces that collapse."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(v) == 0:
        return TriMesh(v, f)
    pairs = cKDTree(v).query_pairs(tol, output_type="ndarray")
    n = len(v)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # representative = first occurrence of each label, keeps file order stable
    _, first = np.unique(labels, return_index=True)
    order = np.sort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[order]] = np.arange(len(order))
    new_faces = remap[labels[f]]
    keep = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 0] != new_faces[:, 2])
    )
    return TriMesh(v[order], new_faces[keep])


def concatenate(meshes) -> TriMesh:
    vs, fs, offset = [], [], 0
    for m in meshes:
        vs.append(m.vertices)
        fs.append(m.faces + offset)
        offset += len(m.vertices)
    if not vs:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(vs), np.concatenate(fs))


def _volume_terms(mesh: TriMesh) -> np.ndarray:
    t = mesh.triangles
    return np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])) / 6.0


def signed_volume(mesh: TriMesh) -> float:
    """Enclosed volume by the divergence theorem; negative if inward wound."""
    mesh.require_watertight()
    return float(_volume_terms(mesh).sum())


def center_of_mass(mesh: TriMesh) -> np.ndarray:
    mesh.require_watertight()
    # shift to a local origin to limit cancellation on far-off meshes
    origin = mesh.vertices.mean(axis=0)
    local = TriMesh(mesh.vertices - origin, mesh.faces)
    w = _volume_terms(local)
    vol = w.sum()
    if vol <= 0:
        raise MeshError("center of mass needs a positive enclosed volume")
    tet_centroids = local.triangles.sum(axis=1) / 4.0
    return origin + (w[:, None] * tet_centroids).sum(axis=0) / vol


def surface_area(mesh: TriMesh) -> float:
    return mesh.area


def convex_hull(mesh_or_points) -> TriMesh:
    """Outward-wound convex hull of a mesh's vertices (or a point array)."""
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriMesh) else np.asarray(mesh_or_points, float)
    if len(pts) < 4:
        raise MeshError("convex hull needs at least 4 points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise MeshError(f"degenerate point set for hull: {exc.args[0].splitlines()[0]}") from None
    used = np.unique(hull.simplices)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    faces = remap[hull.simplices]
    verts = pts[used]
    tri = verts[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", normals, hull.equations[:, :3]) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(verts, faces)


def apply_transform(mesh: TriMesh, t: RigidTransform) -> TriMesh:
    if not isinstance(t, RigidTransform):
        t = RigidTransform(*t)
    return TriMesh(t.apply(mesh.vertices), mesh.faces)


def translate(mesh: TriMesh, offset) -> TriMesh:
    return TriMesh(mesh.vertices + np.asarray(offset, dtype=float), mesh.faces)


def scale(mesh: TriMesh, factor: float) -> TriMesh:
    if factor <= 0:
        raise MeshError("scale factor must be positive")
    return TriMesh(mesh.vertices * factor, mesh.faces)
