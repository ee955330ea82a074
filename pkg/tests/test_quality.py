import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from fcso import shapes
from fcso.mesh import RigidTransform, apply_transform
from fcso.pad import FilterParams, Label, Validity, record_from_grid, synthesize_pad
from fcso.quality import (
    ContactCache,
    QualityError,
    effective_area,
    extract_contact,
    placement_offset,
    rles,
    select_best,
)
from fcso.raycast import SurfaceDistance
from fcso.sampler import SampleBoxSpec
from fcso.voxel import GridSpec, OccupancyGrid

from conftest import random_rotation

TETRA = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / math.sqrt(3.0)


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = math.pi * (3 - math.sqrt(5)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


# about 1 degree between neighbouring centres
ORACLE_CENTRES = fibonacci_sphere(41_253)


def rles_oracle(normals):
    """Max over a dense set of cap centres of the chord to the nearest normal."""
    d, _ = cKDTree(normals).query(ORACLE_CENTRES)
    return float(d.max())


def random_normals(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_identical_normals_give_two():
    assert rles(np.tile([0.0, 0.0, 1.0], (50, 1))) == 2.0
    assert rles([[1.0, 0.0, 0.0]]) == 2.0


def test_tetrahedron():
    assert rles(TETRA) == pytest.approx(math.sqrt(4.0 / 3.0), abs=1e-9)


def test_octahedron():
    octa = np.vstack([np.eye(3), -np.eye(3)])
    # empty cap centred on a face of the octahedron
    assert rles(octa) == pytest.approx(math.sqrt(2 - 2 / math.sqrt(3)), abs=1e-9)


def test_hemisphere_of_normals_leaves_the_other_half_empty():
    rng = np.random.default_rng(5)
    pts = random_normals(rng, 300)
    pts[:, 2] = np.abs(pts[:, 2])
    assert abs(rles(pts) - rles_oracle(pts)) <= 0.02
    assert rles(pts) > math.sqrt(2.0) - 0.05


def test_great_circle_normals():
    a = np.linspace(0, 2 * math.pi, 36, endpoint=False)
    ring = np.column_stack([np.cos(a), np.sin(a), np.zeros_like(a)])
    assert rles(ring) == pytest.approx(math.sqrt(2.0), abs=0.02)


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = random_normals(rng, int(rng.integers(4, 501)))
    assert abs(rles(pts) - rles_oracle(pts)) <= 0.02


def test_input_validation():
    with pytest.raises(QualityError):
        rles(np.zeros((0, 3)))
    with pytest.raises(QualityError):
        rles([[0.0, 0.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bounds_and_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = random_normals(rng, int(rng.integers(4, 60)))
    r = rles(pts)
    assert 0 < r <= 2
    rot = random_rotation(rng).rotation
    assert abs(rles(pts @ rot.T) - r) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adding_a_normal_never_grows_the_cap(seed):
    rng = np.random.default_rng(seed)
    pts = random_normals(rng, int(rng.integers(4, 40)))
    more = np.vstack([pts, random_normals(rng, 1)])
    assert rles(more) <= rles(pts) + 0.02


# -- effective area and selection --------------------------------------------


@pytest.mark.parametrize(
    "r, a, e, rel",
    [(0.4217, 102.0, 242.2, 0.01), (0.4863, 114.8, 236.1, 1e-3), (2.0, 400.0, 200.0, 1e-12)],
)
def test_effective_area(r, a, e, rel):
    assert effective_area(r, a) == pytest.approx(e, rel=rel)


def test_effective_area_rejects_non_positive_rles():
    with pytest.raises(QualityError):
        effective_area(0.0, 10.0)


def test_select_best_single_and_ties():
    assert select_best([[5.0, 1.0]]).best == 1
    res = select_best([[3.0, 4.0], [4.0, 3.0], [1.0, 9.0]])
    assert res.Q == (3.0, 3.0, 1.0) and res.best == 1


def test_select_best_missing_record():
    with pytest.raises(QualityError, match="lacks"):
        select_best({1: {1: 2.0, 2: 3.0}, 2: {1: 4.0}})
    with pytest.raises(QualityError):
        select_best({1: {1: 1.0}, 3: {1: 2.0}})


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.lists(st.floats(0.1, 1e3), min_size=2, max_size=2), min_size=1, max_size=12),
    st.floats(0.01, 100.0),
)
def test_select_best_matches_brute_force_and_scaling(rows, scale):
    res = select_best(rows)
    qs = [min(r) for r in rows]
    best = next(k for k in range(len(qs)) if qs[k] == max(qs))
    assert res.Q == tuple(qs) and res.best == best + 1 and res.Q_max == max(qs)
    scaled = select_best([[scale * x for x in r] for r in rows])
    # argmax invariance, up to ties created by rounding
    assert min(rows[scaled.best - 1]) == pytest.approx(max(qs), rel=1e-12)


def test_select_best_exhaustive_small():
    for rows in itertools.product([1.0, 2.0, 3.0], repeat=4):
        m = [rows[:2], rows[2:]]
        q = [min(r) for r in m]
        assert select_best(m).best == (1 if q[0] >= q[1] else 2)


# -- contact extraction ------------------------------------------------------

H = 0.25
BOX = SampleBoxSpec(20.0, 20.0, 5.0, 4.0)
FRAME = GridSpec(RigidTransform.identity(), BOX.extents, H)


@pytest.fixture(scope="module")
def flat_case():
    t = FRAME.centers(2)[None, None, :]
    wall_cells = np.broadcast_to(t < BOX.D, FRAME.shape)
    rec = record_from_grid(OccupancyGrid(FRAME, wall_cells))
    rec = replace(rec, d_n=0.0, label=Label.BAD, validity=Validity.R_VALID)
    pad = synthesize_pad([rec], FilterParams(), BOX)
    wall = shapes.box((40.0, 40.0, 10.0), (-10.0, -10.0, BOX.D - 10.0))
    return pad, wall


def test_flat_pad_on_wall(flat_case):
    pad, wall = flat_case
    (patch,) = extract_contact(pad.mesh, FRAME, [FRAME.frame], wall, 2 * H)
    assert patch.area == pytest.approx(400.0, rel=0.05)
    assert not patch.degenerate
    assert np.allclose(patch.normals.mean(axis=0), [0, 0, -1], atol=0.05)
    assert rles(patch.normals) > 1.9


def test_hovering_pad_has_no_contact(flat_case):
    pad, wall = flat_case
    eps = 2 * H
    away = placement_offset(FRAME.frame, int(round(10 * eps / H)), H)
    (patch,) = extract_contact(pad.mesh, FRAME, [away], wall, eps)
    assert patch.area == 0.0 and patch.degenerate


def test_contact_cache_matches_direct_query(flat_case):
    pad, wall = flat_case
    tilt = RigidTransform.from_axis_angle((1, 0, 0), 0.02, (0.0, 0.0, 0.1))
    wall = apply_transform(wall, tilt)
    dist = SurfaceDistance(wall)
    cache = ContactCache(H)
    for layers in (0, 1, 2, 3):
        direct = extract_contact(pad.mesh, FRAME, [FRAME.frame], dist, 2 * H, layers=[layers])
        cached = extract_contact(
            pad.mesh, FRAME, [FRAME.frame], dist, 2 * H, cache=cache, cache_keys=["k"], layers=[layers]
        )
        assert np.array_equal(direct[0].faces, cached[0].faces)
