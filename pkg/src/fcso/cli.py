"""Command line: ``fcso run|poses|score|validate``.

Exit codes: 0 success, 2 invalid configuration or input, 3 geometry
failure, 4 some pose has no feasible grasp.
"""

from __future__ import annotations

import csv
import logging
import sys
from pathlib import Path

import click

from . import config as cfgmod
from .mesh import MeshError
from .pad import PadError
from .pipeline import NoFeasibleGrasp, run
from .poses import PoseError, enumerate_stable_poses
from .quality import QualityError, effective_area, select_best
from .sampler import SamplerError
from .stl import load_stl
from .voxel import GridError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GEOMETRY = 3
EXIT_NO_GRASP = 4


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Fingerpad customization from part meshes."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--no-quality", is_flag=True, help="Skip scoring; write every candidate pad STL.")
@click.option("--workers", type=int, default=None, help="Scoring processes (default: $FCSO_WORKERS or 1).")
def run_cmd(config_path, no_quality, workers):
    """Run the full pipeline described by CONFIG_PATH."""
    try:
        cfg = cfgmod.load(config_path)
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    except cfgmod.ConfigError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    try:
        report = run(cfg, quality=False if no_quality else None, workers=workers)
    except NoFeasibleGrasp as exc:
        _fail(str(exc), EXIT_NO_GRASP)
    except (MeshError, GridError, PadError, PoseError, SamplerError, QualityError) as exc:
        _fail(str(exc), EXIT_GEOMETRY)
    for slot, n in zip(report.slots, report.n_s):
        click.echo(f"{slot.label}: {n} feasible grasp(s)")
    click.echo(f"combinations: {report.C}" + (" (capped)" if report.capped else ""))
    if report.selection is not None:
        click.echo(f"best: i={report.selection.best} Q={report.selection.Q_max:.6f}")
    for name, path in sorted(report.artifacts.items()):
        click.echo(f"{name}: {path}")


@main.command("poses")
@click.argument("stl_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scale", type=float, default=1.0, help="Unit scale applied on load.")
def poses_cmd(stl_path, scale):
    """List the stable resting poses of a part."""
    try:
        mesh = load_stl(stl_path, scale=scale)
        poses = enumerate_stable_poses(mesh)
    except (MeshError, PoseError) as exc:
        _fail(str(exc), EXIT_GEOMETRY)
    click.echo("index,probability,nx,ny,nz")
    for k, p in enumerate(poses):
        n = p.normal
        click.echo(f"{k},{p.probability:.6f},{n[0]:.6f},{n[1]:.6f},{n[2]:.6f}")


def read_long_records(path) -> dict[int, dict[int, tuple[float, float]]]:
    """``i, pose, RLES, A`` rows -> ``{i: {pose: (RLES, A)}}``."""
    out: dict[int, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = {f.strip().lower(): f for f in reader.fieldnames or []}
        need = ("i", "pose", "rles", "a")
        missing = [n for n in need if n not in fields]
        if missing:
            raise QualityError(f"{path}: missing column(s) {missing}")
        for row in reader:
            i = int(row[fields["i"]])
            m = int(row[fields["pose"]])
            out.setdefault(i, {})[m] = (float(row[fields["rles"]]), float(row[fields["a"]]))
    return out


def score_table(records: dict[int, dict[int, tuple[float, float]]]):
    e = {i: {m: effective_area(r, a) for m, (r, a) in row.items()} for i, row in records.items()}
    return e, select_best(e)


@main.command("score")
@click.argument("records_path", type=click.Path(exists=True, dir_okay=False))
def score_cmd(records_path):
    """Effective areas and min-max selection from (RLES, A) records."""
    try:
        e, sel = score_table(read_long_records(records_path))
    except (QualityError, ValueError) as exc:
        _fail(str(exc), EXIT_VALIDATION)
    poses = sorted({m for row in e.values() for m in row})
    click.echo(",".join(["i"] + [f"E_{m}" for m in poses] + ["Q", "is_best"]))
    for i in sorted(e):
        vals = [f"{e[i][m]:.4f}" for m in poses]
        q = sel.Q[i - 1]
        click.echo(",".join([str(i)] + vals + [f"{q:.4f}", str(int(i == sel.best))]))
    click.echo(f"best: i={sel.best} Q={sel.Q_max:.4f}")


@main.command("validate")
@click.argument("config_path", type=click.Path(dir_okay=False))
def validate_cmd(config_path):
    """Check a configuration file and list every violation."""
    path = Path(config_path)
    if not path.is_file():
        _fail(f"config file not found: {path}", EXIT_VALIDATION)
    raw, errors = cfgmod.parse_text(path.read_text())
    errors = errors + cfgmod.validate(raw, path.parent)
    if errors:
        for e in errors:
            click.echo(e)
        sys.exit(EXIT_VALIDATION)
    click.echo("ok")


if __name__ == "__main__":
    main()
