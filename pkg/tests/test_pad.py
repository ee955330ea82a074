import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcso import shapes
from fcso.mesh import RigidTransform, apply_transform
from fcso.pad import (
    FilterParams,
    Label,
    PadCase,
    PadError,
    Validity,
    classify_geometry,
    cluster_normals,
    count_combinations,
    depth_of_interest,
    extract_intersection,
    record_from_grid,
    settle_layers,
    synthesize_pad,
)
from fcso.sampler import SampleBoxSpec
from fcso.voxel import GridSpec, OccupancyGrid, grid_volume

H = 0.25
D = 4.0
BOX = SampleBoxSpec(20.0, 20.0, 5.0, D)
FRAME = GridSpec(RigidTransform.identity(), BOX.extents, H)
PARAMS = FilterParams()
X, Y, T = np.meshgrid(*(FRAME.centers(a) for a in range(3)), indexing="ij")


def profile_part(outline):
    """Part whose (x, t) profile is ``outline``, extruded across the box width."""
    prism = shapes.extrude_polygon(outline, 30.0)
    # (px, py, z) -> (px, 25 - z, py): profile in the x-t plane, spanning y
    to_box = RigidTransform.from_axis_angle((1, 0, 0), math.pi / 2, (0.0, 25.0, 0.0))
    return apply_transform(prism, to_box)


def grid(cells):
    return OccupancyGrid(FRAME, np.asarray(cells, dtype=bool))


def pocket_cells(depth, size=10.0):
    inside = (np.abs(X - 10) < size / 2) & (np.abs(Y - 10) < size / 2) & (T > D - depth)
    return (T < D) & ~inside


def bump_cells(height, size=10.0):
    """Flat base ``height`` below the surface with a square bump reaching ``t = D``."""
    bump = (np.abs(X - 10) < size / 2) & (np.abs(Y - 10) < size / 2)
    return (T < D - height) | (bump & (T < D))


def labelled(cells, label, d_n, validity=Validity.R_VALID):
    rec = record_from_grid(grid(cells))
    return replace(rec, d_n=d_n, label=label, validity=validity)


@pytest.fixture(scope="module")
def wall():
    return extract_intersection(profile_part([(-5, -5), (25, -5), (25, D), (-5, D)]), FRAME)


@pytest.fixture(scope="module")
def slant():
    return extract_intersection(profile_part([(-5, -5), (11, -5), (2, D), (-5, D)]), FRAME)


def test_wall_has_zero_ratio_and_depth(wall):
    assert wall.R == 0.0
    assert wall.V_I == pytest.approx(1600.0)
    assert depth_of_interest(wall, D) == 0.0
    assert classify_geometry(wall, PARAMS, D).label is Label.BAD


def test_pocket_ratio_and_depth():
    rec = record_from_grid(grid(pocket_cells(3.0)))
    assert rec.V_B == pytest.approx(1600.0, rel=0.02)
    assert rec.V_I == pytest.approx(1300.0, rel=0.02)
    assert rec.R == pytest.approx(0.1875, rel=0.02)
    assert abs(depth_of_interest(rec, D) - 3.0) <= H
    out = classify_geometry(rec, PARAMS, D)
    assert out.label is Label.GOOD and out.validity is Validity.R_VALID


def test_slant_goes_through_cluster_path(slant):
    assert slant.R > PARAMS.th
    assert depth_of_interest(slant, D) == D
    clusters = cluster_normals(slant.surface, PARAMS.cluster_tol)
    angle = math.degrees(math.acos(abs(clusters[0].mean[2])))
    assert abs(angle - 45.0) < 1.0
    out = classify_geometry(slant, PARAMS, D)
    assert out.label is Label.GOOD and out.validity is Validity.R_INVALID


def test_low_ratio_flat_is_bad():
    rec = replace(record_from_grid(grid(T < D)), R=0.05, d_n=0.0)
    assert classify_geometry(rec, PARAMS, D).label is Label.BAD


def test_empty_intersection_rejected():
    with pytest.raises(PadError):
        record_from_grid(OccupancyGrid.empty(FRAME))
    far = shapes.box((1.0, 1.0, 1.0), (100.0, 0.0, 0.0))
    with pytest.raises(PadError):
        extract_intersection(far, FRAME)


def test_box_normals_form_six_equal_clusters():
    clusters = cluster_normals(shapes.box((3.0, 3.0, 3.0)), 10.0)
    assert len(clusters) == 6
    assert np.allclose([c.area for c in clusters], 9.0)


def test_wall_cluster_parallel_to_closing_axis(wall):
    top = cluster_normals(wall.surface, 10.0)[0]
    assert abs(top.mean[2]) > math.cos(math.radians(1.0))


def test_hemisphere_has_no_dominant_cluster():
    sphere = shapes.icosphere(10.0, 4)
    cap = sphere.submesh(sphere.triangles.mean(axis=1)[:, 2] > 0)
    clusters = cluster_normals(cap, 10.0)
    assert clusters[0].area / sum(c.area for c in clusters) < 0.5


def test_filter_params_validation():
    with pytest.raises(PadError):
        FilterParams(th=1.5)
    with pytest.raises(PadError):
        FilterParams(K=0.5)


def test_all_good_pad_conforms_to_both_pockets():
    a = labelled(pocket_cells(3.0, 10.0), Label.GOOD, 3.0)
    b = labelled(pocket_cells(2.0, 6.0), Label.GOOD, 2.0)
    pad = synthesize_pad([a, b], PARAMS, BOX)
    assert pad.case is PadCase.ALL_GOOD
    for rec in (a, b):
        assert not (pad.grid.cells & rec.grid.cells).any()
    # the pad reaches into the cavity both pockets share
    assert pad.grid.cells[(np.abs(X - 10) < 3) & (np.abs(Y - 10) < 3) & (T > 2)].all()


def test_mixed_block_depth_uses_k():
    good = labelled(pocket_cells(2.0), Label.GOOD, 2.0)
    bad = labelled(T < D, Label.BAD, 0.0)
    pad = synthesize_pad([good, bad], PARAMS, BOX)
    assert pad.case is PadCase.MIXED
    assert pad.d_B == pytest.approx(3.0)
    assert not pad.grid.cells[T < 3.0].any()


def test_all_bad_gives_thin_slab():
    recs = [labelled(T < D, Label.BAD, 0.0) for _ in range(3)]
    pad = synthesize_pad(recs, PARAMS, BOX)
    assert pad.case is PadCase.ALL_BAD
    assert grid_volume(pad.grid) == pytest.approx(20 * 20 * (BOX.T - D))
    assert pad.mesh is not None and pad.mesh.is_watertight


def test_synthesis_errors():
    with pytest.raises(PadError):
        synthesize_pad([], PARAMS, BOX)
    with pytest.raises(PadError):
        synthesize_pad([record_from_grid(grid(T < D))], PARAMS, BOX)


def test_settle_layers():
    slab = grid(T > D)
    assert settle_layers(slab, grid(T < D)) == 0
    assert settle_layers(slab, grid(T < D + 0.5)) == 2
    assert settle_layers(OccupancyGrid.empty(FRAME), grid(T < 5)) == 0


@pytest.mark.parametrize("counts, expected", [([3, 4], 12), ([3, 3], 9), ([5], 5)])
def test_count_combinations(counts, expected):
    assert count_combinations(counts) == expected


def test_count_combinations_rejects_empty_pose():
    with pytest.raises(PadError, match="no feasible grasp"):
        count_combinations([3, 0])


# -- invariants over random height-field contacts ----------------------------


def random_records(seed, n):
    rng = np.random.default_rng(seed)
    recs = []
    for _ in range(n):
        # coarse random depth map, upsampled to the grid
        coarse = rng.uniform(0.5, D, size=(4, 4))
        top = np.kron(coarse, np.ones((20, 20)))
        cells = T < top[:, :, None]
        label = Label.GOOD if rng.random() < 0.6 else Label.BAD
        recs.append(labelled(cells, label, float(rng.uniform(0.0, D))))
    return recs


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_pad_invariants(seed, n):
    recs = random_records(seed, n)
    pad = synthesize_pad(recs, PARAMS, BOX, mesh=False)
    good = [r for r in recs if r.label is Label.GOOD]
    if good:
        assert pad.case is not PadCase.ALL_BAD
    for r in good:
        assert not (pad.grid.cells & r.grid.cells).any()
    if pad.case is PadCase.MIXED:
        assert not pad.grid.cells[T < pad.d_B].any()
    assert grid_volume(pad.grid) + grid_volume(pad.union) == pytest.approx(BOX.L * BOX.W * BOX.T, abs=1e-9)
    shuffled = [recs[k] for k in np.random.default_rng(seed).permutation(n)]
    assert synthesize_pad(shuffled, PARAMS, BOX, mesh=False).grid == pad.grid


def test_single_bad_geometry_does_not_absorb_pad():
    good = labelled(bump_cells(2.0), Label.GOOD, 2.0)
    bad = labelled(T < D, Label.BAD, 0.0)
    slab = synthesize_pad([bad], PARAMS, BOX).grid
    mixed = synthesize_pad([good, bad], PARAMS, BOX).grid
    alone = synthesize_pad([good], PARAMS, BOX).grid
    assert mixed != slab
    region = (np.abs(X - 10) < 5) & (np.abs(Y - 10) < 5)
    assert np.array_equal(mixed.cells[region], alone.cells[region])


def test_block_reaching_surface_flattens_pad():
    # min(d) * K clamped at D: the block fills the whole conforming zone
    good = labelled(bump_cells(3.0), Label.GOOD, 3.0)
    bad = labelled(T < D, Label.BAD, 0.0)
    pad = synthesize_pad([good, bad], PARAMS, BOX)
    assert pad.d_B == D
    assert pad.grid == synthesize_pad([bad], PARAMS, BOX).grid


def test_larger_k_never_shrinks_material():
    good = labelled(pocket_cells(1.0), Label.GOOD, 1.0)
    bad = labelled(T < D, Label.BAD, 0.0)
    volumes = [
        grid_volume(synthesize_pad([good, bad], FilterParams(K=k), BOX, mesh=False).union)
        for k in (1.0, 1.5, 2.0, 3.0, 5.0)
    ]
    assert volumes == sorted(volumes)
    assert volumes[-1] > volumes[0]
