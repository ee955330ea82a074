"""Binary and ASCII STL reading and writing."""

from __future__ import annotations

import io
import os
import re
import struct

import numpy as np

from .mesh import DEDUP_TOL, MeshError, TriMesh, merge_vertices

_RECORD = np.dtype(
    [("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]
)
_HEADER = 80


class StlParseError(MeshError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def _looks_ascii(data: bytes) -> bool:
    if not data.lstrip().startswith(b"solid"):
        return False
    # some binary exporters also start the header with "solid"
    if len(data) >= _HEADER + 4:
        (n,) = struct.unpack_from("<I", data, _HEADER)
        if len(data) == _HEADER + 4 + n * _RECORD.itemsize:
            return False
    return b"facet" in data[:4096] or b"endsolid" in data


def _parse_binary(data: bytes) -> np.ndarray:
    if len(data) < _HEADER + 4:
        raise StlParseError("truncated header", len(data))
    (n,) = struct.unpack_from("<I", data, _HEADER)
    body = len(data) - _HEADER - 4
    expected = n * _RECORD.itemsize
    if body < expected:
        got = body // _RECORD.itemsize
        raise StlParseError(
            f"facet count mismatch: header declares {n}, file holds {got}",
            _HEADER + 4 + got * _RECORD.itemsize,
        )
    rec = np.frombuffer(data, dtype=_RECORD, count=n, offset=_HEADER + 4)
    tri = rec["v"].astype(np.float64)
    bad = ~np.all(np.isfinite(tri.reshape(n, -1)), axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise StlParseError(f"non-finite coordinate in facet {k}", _HEADER + 4 + k * _RECORD.itemsize + 12)
    return tri


_TOKEN = re.compile(rb"\S+")


def _parse_ascii(data: bytes) -> np.ndarray:
    verts = []
    pos = 0
    for m in _TOKEN.finditer(data):
        if m.group() != b"vertex":
            continue
        pos = m.end()
        fields = data[pos : pos + 200].split(None, 3)[:3]
        try:
            xyz = [float(x) for x in fields]
        except ValueError:
            raise StlParseError("malformed vertex line", m.start()) from None
        if len(xyz) != 3:
            raise StlParseError("truncated vertex line", m.start())
        if not all(np.isfinite(xyz)):
            raise StlParseError("non-finite coordinate", m.start())
        verts.append(xyz)
    if len(verts) % 3:
        raise StlParseError("vertex count is not a multiple of three", pos)
    if b"endsolid" not in data:
        raise StlParseError("missing endsolid", len(data))
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3, 3)


def load_stl(source, scale: float = 1.0, tol: float = DEDUP_TOL) -> TriMesh:
    """Read an STL (binary or ASCII) into a welded :class:`TriMesh`.

    Args:
        source: bytes, a path, or a binary file object.
        scale: multiplier that converts file units to millimetres.
        tol: vertex welding distance in mm.
    """
    data = _read_bytes(source)
    tri = _parse_ascii(data) if _looks_ascii(data) else _parse_binary(data)
    tri = tri * scale
    faces = np.arange(len(tri) * 3).reshape(-1, 3)
    return merge_vertices(tri.reshape(-1, 3), faces, tol)


def save_stl(mesh: TriMesh, fmt: str = "binary", name: str = "fcso") -> bytes:
    if mesh.is_empty:
        raise MeshError("cannot write an empty mesh")
    tri = mesh.triangles
    normals = mesh.face_normals
    if fmt == "binary":
        rec = np.zeros(len(tri), dtype=_RECORD)
        rec["normal"] = normals
        rec["v"] = tri
        header = name.encode("ascii", "replace")[:_HEADER].ljust(_HEADER, b" ")
        return header + struct.pack("<I", len(tri)) + rec.tobytes()
    if fmt == "ascii":
        buf = io.StringIO()
        buf.write(f"solid {name}\n")
        for n, t in zip(normals, tri):
            buf.write(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}\n    outer loop\n")
            for p in t:
                buf.write(f"      vertex {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            buf.write("    endloop\n  endfacet\n")
        buf.write(f"endsolid {name}\n")
        return buf.getvalue().encode("ascii")
    raise ValueError(f"unknown STL format {fmt!r}")


def write_stl(path, mesh: TriMesh, fmt: str = "binary") -> None:
    with open(path, "wb") as fh:
        fh.write(save_stl(mesh, fmt))
