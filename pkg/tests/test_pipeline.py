import csv
import io

import numpy as np
import pytest
from click.testing import CliRunner

from fcso import config as cfgmod
from fcso import shapes
from fcso.cli import main
from fcso.pipeline import combination_records, run
from fcso.stl import load_stl, write_stl

from conftest import BUNNY, REFERENCE_SCORES, unit_cube, write_config

FAST = {"voxel.h": 0.5, "sample.max_per_pose": 2, "poses.seed": 1}


def make_config(tmp_path, objects, out="out", **extra):
    entries = {f"objects.{name}.stl": path for name, path in objects.items()}
    entries.update({"gripper.finger_stl": extra.pop("finger"), "output.dir": out})
    entries.update(FAST)
    entries.update(extra)
    return write_config(tmp_path / f"{out}.cfg", entries)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def read_report(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


# -- configuration -----------------------------------------------------------


def test_parse_grammar(tmp_path, block_stl, finger_stl):
    text = (
        "# a comment\n"
        f"objects.part.stl = {block_stl.name}   # trailing comment\n"
        "objects.part.scale = cm\n"
        f"gripper.finger_stl = {finger_stl.name}\n"
        "gripper.body_box = 80, 30 50\n"
        "poses.mode = manual\n"
        "poses.indices = 0 2\n"
        "output.pad_stls = yes\n"
    )
    path = tmp_path / "run.cfg"
    path.write_text(text)
    cfg = cfgmod.load(path)
    assert cfg.objects[0].stl == block_stl
    assert cfg.objects[0].scale == 10.0
    assert cfg.gripper.body_box == (80.0, 30.0, 50.0)
    assert cfg.pad_stls is True
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.eps == 2 * cfg.h


def test_violations_reported_together(tmp_path, finger_stl):
    path = write_config(
        tmp_path / "bad.cfg",
        {
            "objects.a.stl": "missing.stl",
            "gripper.finger_stl": finger_stl,
            "filter.th": 1.5,
            "sample.D": 5,
            "bogus.key": 1,
        },
    )
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.load(path)
    text = "\n".join(info.value.violations)
    assert "filter.th out of (0,1)" in text
    assert "missing.stl" in text
    assert "sample.D" in text
    assert "bogus.key" in text


def test_validate_command(tmp_path, block_stl, finger_stl):
    good = make_config(tmp_path, {"part": block_stl}, finger=finger_stl)
    res = invoke("validate", good)
    assert res.exit_code == 0 and res.output.strip() == "ok"
    bad = write_config(tmp_path / "th.cfg", {"objects.a.stl": block_stl, "gripper.finger_stl": finger_stl, "filter.th": 1.5})
    res = invoke("validate", bad)
    assert res.exit_code == 2 and "filter.th out of (0,1)" in res.output


def test_run_rejects_d_not_below_t_before_geometry(tmp_path, finger_stl):
    # config errors surface before any mesh is read
    path = make_config(tmp_path, {"part": tmp_path / "nothing.stl"}, finger=finger_stl, **{"sample.D": 6})
    res = invoke("run", path)
    assert res.exit_code == 2
    assert "sample.D" in res.output


# -- commands ----------------------------------------------------------------


def test_poses_command(tmp_path):
    path = tmp_path / "cube.stl"
    write_stl(path, unit_cube())
    res = invoke("poses", path)
    assert res.exit_code == 0
    rows = res.output.strip().splitlines()
    assert rows[0] == "index,probability,nx,ny,nz" and len(rows) == 7


def test_score_command_table():
    res = invoke("score", REFERENCE_SCORES)
    assert res.exit_code == 0
    assert res.output.strip().splitlines()[-1].startswith("best: i=9 ")


def test_open_mesh_is_geometry_failure(tmp_path, finger_stl):
    cube = shapes.box((30.0, 30.0, 30.0))
    path = tmp_path / "open.stl"
    write_stl(path, cube.submesh(np.arange(12) != 0))
    res = invoke("run", make_config(tmp_path, {"part": path}, finger=finger_stl))
    assert res.exit_code == 3


def test_no_feasible_grasp_exit_code(tmp_path, finger_stl):
    path = tmp_path / "big.stl"
    write_stl(path, shapes.box((80.0, 80.0, 80.0)))
    res = invoke("run", make_config(tmp_path, {"big": path}, finger=finger_stl))
    assert res.exit_code == 4
    assert "no feasible grasp for big pose" in res.output


# -- end to end on small parts ---------------------------------------------


@pytest.fixture(scope="module")
def block_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("block")
    part = tmp / "block.stl"
    finger = tmp / "finger.stl"
    write_stl(part, shapes.box((30.0, 30.0, 30.0)))
    write_stl(finger, shapes.box((10.0, 30.0, 80.0), (-10.0, -15.0, 0.0)))
    cfg = cfgmod.load(make_config(tmp, {"block": part}, finger=finger, **{"output.pad_stls": "true"}))
    return tmp, part, finger, cfg, run(cfg)


def test_block_run_report(block_run):
    _, _, _, cfg, report = block_run
    assert report.C == int(np.prod(report.n_s)) and all(n >= 1 for n in report.n_s)
    rows = read_report(cfg.output_dir / "report.csv")
    assert len(rows) == report.C
    assert sum(int(r["is_best"]) for r in rows) == 1
    q = [float(r["Q"]) for r in rows]
    assert int(next(r["i"] for r in rows if r["is_best"] == "1")) == int(np.argmax(q)) + 1
    fused = load_stl(cfg.output_dir / "finger_best.stl")
    assert len(fused.faces) > 0
    assert (cfg.output_dir / "records.csv").is_file()


def test_reports_are_byte_identical(block_run):
    tmp, part, finger, cfg, _ = block_run
    again = cfgmod.load(make_config(tmp, {"block": part}, out="again", finger=finger, **{"output.pad_stls": "true"}))
    run(again)
    for name in ("report.csv", "records.csv", "finger_best.stl"):
        assert (cfg.output_dir / name).read_bytes() == (again.output_dir / name).read_bytes()


def test_quality_off_writes_the_same_pads(block_run):
    tmp, part, finger, cfg, report = block_run
    off = cfgmod.load(make_config(tmp, {"block": part}, out="off", finger=finger))
    res = invoke("run", off.source, "--no-quality")
    assert res.exit_code == 0, res.output
    pads = sorted((off.output_dir / "pads").iterdir())
    assert len(pads) == report.C
    for p in pads:
        assert p.read_bytes() == (cfg.output_dir / "pads" / p.name).read_bytes()
    assert not (off.output_dir / "report.csv").exists()


def test_worker_pool_gives_the_same_report(block_run):
    tmp, part, finger, cfg, _ = block_run
    par = cfgmod.load(make_config(tmp, {"block": part}, out="par", finger=finger))
    run(par, workers=2)
    assert (par.output_dir / "report.csv").read_bytes() == (cfg.output_dir / "report.csv").read_bytes()


def test_two_objects_give_one_finger_for_eight_geometries(tmp_path, lshape_stl, finger_stl):
    cfg = cfgmod.load(
        make_config(tmp_path, {"bunny": BUNNY, "lshape": lshape_stl}, finger=finger_stl, **{"sample.max_per_pose": 1})
    )
    report = run(cfg)
    assert len(report.slots) == 4 and report.n_s == [1, 1, 1, 1]
    assert report.C == 1 and report.best.i == 1
    assert len(combination_records(report.slots, report.best.choice)) == 8
    assert (cfg.output_dir / "finger_best.stl").is_file()
