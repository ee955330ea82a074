"""Fingerpad customization: conforming gripper pads from part meshes."""

from .mesh import MeshError, RigidTransform, TriMesh
from .stl import load_stl, save_stl, write_stl

__all__ = ["MeshError", "RigidTransform", "TriMesh", "load_stl", "save_stl", "write_stl"]
__version__ = "0.1.0"
