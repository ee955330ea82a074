"""Closed primitive meshes used for fixtures, fingers and pads."""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh, merge_vertices


def box(extents=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with its min corner at ``origin``."""
    ex = np.asarray(extents, dtype=float)
    o = np.asarray(origin, dtype=float)
    corners = np.array(
        [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float
    )
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return TriMesh(o + corners * ex, faces)


def tetrahedron(radius: float = 1.0) -> TriMesh:
    """Regular tetrahedron with vertices on a sphere of ``radius``."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= radius / np.sqrt(3.0)
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, faces)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = len(f)
        a, b, c = inv[:m] + len(v), inv[m : 2 * m] + len(v), inv[2 * m :] + len(v)
        v = np.concatenate([v, mids])
        f = np.concatenate(
            [
                np.column_stack([f[:, 0], a, c]),
                np.column_stack([f[:, 1], b, a]),
                np.column_stack([f[:, 2], c, b]),
                np.column_stack([a, b, c]),
            ]
        )
    return TriMesh(v * radius + np.asarray(center, dtype=float), f)


def extrude_polygon(outline, height: float, z0: float = 0.0) -> TriMesh:
    """Prism over a simple polygon in the xy plane, extruded along +z.

    The outline may be concave; it is triangulated by ear clipping.
    """
    pts = np.asarray(outline, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3 or height <= 0:
        raise MeshError("extrusion needs >= 3 outline points and positive height")
    x, y = pts[:, 0], pts[:, 1]
    if np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)) < 0:
        pts = pts[::-1]
    tris = _ear_clip(pts)
    bottom = np.column_stack([pts, np.full(n, z0)])
    top = np.column_stack([pts, np.full(n, z0 + height)])
    faces = [[t[0], t[2], t[1]] for t in tris]
    faces += [[t[0] + n, t[1] + n, t[2] + n] for t in tris]
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, j, j + n], [i, j + n, i + n]]
    return merge_vertices(np.concatenate([bottom, top]), np.array(faces))


def _ear_clip(pts: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(range(len(pts)))
    out = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(pts) ** 2:
            raise MeshError("polygon is not simple")
        for k in range(len(idx)):
            i, j, l = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if cross(pts[i], pts[j], pts[l]) <= 0:
                continue
            if any(
                m not in (i, j, l)
                and cross(pts[i], pts[j], pts[m]) >= 0
                and cross(pts[j], pts[l], pts[m]) >= 0
                and cross(pts[l], pts[i], pts[m]) >= 0
                for m in idx
            ):
                continue
            out.append((i, j, l))
            idx.pop(k)
            break
    out.append(tuple(idx))
    return out
