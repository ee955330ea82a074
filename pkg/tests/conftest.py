from pathlib import Path

import numpy as np
import pytest

from fcso import shapes
from fcso.mesh import RigidTransform, TriMesh, concatenate, merge_vertices
from fcso.stl import write_stl

DATA = Path(__file__).parent / "data"
BUNNY = DATA / "bunny.stl"
REFERENCE_SCORES = DATA / "reference_scores.csv"


def unit_cube() -> TriMesh:
    return shapes.box((1.0, 1.0, 1.0))


def l_shape(arm: float = 30.0, thick: float = 15.0, depth: float = 20.0) -> TriMesh:
    """Extruded L-profile, lying on z = 0."""
    outline = [(0, 0), (arm, 0), (arm, thick), (thick, thick), (thick, arm), (0, arm)]
    return shapes.extrude_polygon(outline, depth)


def write_config(path: Path, entries: dict) -> Path:
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return path


@pytest.fixture
def cube():
    return unit_cube()


@pytest.fixture
def finger_stl(tmp_path):
    """Flat finger block: pad face at x = 0 with outward normal +X."""
    path = tmp_path / "finger.stl"
    write_stl(path, shapes.box((10.0, 30.0, 80.0), (-10.0, -15.0, 0.0)))
    return path


@pytest.fixture
def block_stl(tmp_path):
    """A 30 x 30 x 30 mm block, small enough to grasp along both axes."""
    path = tmp_path / "block.stl"
    write_stl(path, shapes.box((30.0, 30.0, 30.0)))
    return path


@pytest.fixture
def lshape_stl(tmp_path):
    path = tmp_path / "lshape.stl"
    write_stl(path, l_shape())
    return path


def random_rotation(rng) -> RigidTransform:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return RigidTransform(rot, rng.normal(size=3) * 10)


__all__ = ["BUNNY", "REFERENCE_SCORES", "unit_cube", "l_shape", "write_config", "random_rotation", "concatenate", "merge_vertices"]
