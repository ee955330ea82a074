"""End-to-end run: poses, grasp sampling, pad synthesis, scoring, fusion.

Every selected (object, pose) pair is a *slot*. A combination picks one
feasible grasp per slot; combinations are enumerated lexicographically over
per-slot candidate indices and numbered from 1. All slots share one pad
design, mounted identically on both fingers.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .finger import assemble
from .mesh import MeshError, TriMesh
from .pad import GeometryRecord, PadGeometry, analyse, synthesize_pad, settle_layers
from .poses import enumerate_stable_poses, placed, select_poses
from .quality import ContactCache, QualityRecord, SelectionResult, effective_area, extract_contact, placement_offset, rles, select_best
from .raycast import SurfaceDistance
from .sampler import GraspCandidate, sample_grasps
from .stl import load_stl, save_stl

log = logging.getLogger(__name__)

WORKERS_ENV = "FCSO_WORKERS"
FLOAT_FMT = "{:.6f}"


class NoFeasibleGrasp(MeshError):
    """A slot has no feasible grasp, so no combination exists."""

    def __init__(self, slots):
        self.slots = list(slots)
        names = ", ".join(f"{name} pose {pose}" for name, pose in self.slots)
        super().__init__(f"no feasible grasp for {names}")


@dataclass(frozen=True, eq=False)
class Slot:
    m: int  # 0-based slot index
    object_name: str
    pose_index: int  # index into the object's stable-pose list
    probability: float
    mesh: TriMesh  # posed, resting on z = 0
    candidates: tuple[GraspCandidate, ...]
    records: tuple[tuple[GeometryRecord, GeometryRecord], ...]  # (right, left) per candidate

    @property
    def label(self) -> str:
        return f"{self.object_name}:{self.pose_index}"


@dataclass(frozen=True)
class CombinationScore:
    i: int
    choice: tuple[int, ...]  # 0-based candidate index per slot
    case: str
    d_B: float
    settle: tuple[tuple[int, int], ...]  # (right, left) layers per slot
    quality: tuple[QualityRecord, ...] = ()


@dataclass
class RunReport:
    slots: list[Slot]
    n_s: list[int]
    C: int
    capped: bool
    combinations: list[CombinationScore]
    selection: SelectionResult | None
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, Path] = field(default_factory=dict)

    @property
    def best(self) -> CombinationScore | None:
        if self.selection is None:
            return None
        return self.combinations[self.selection.best - 1]


# -- stages -----------------------------------------------------------------


def build_slots(config: RunConfig, timings: dict | None = None) -> list[Slot]:
    """Load objects, pick poses and sample/analyse grasps for every slot."""
    timings = {} if timings is None else timings
    slots: list[Slot] = []
    empty = []
    for obj in config.objects:
        t0 = time.perf_counter()
        mesh = load_stl(obj.stl, scale=obj.scale)
        mesh.require_watertight()
        poses = enumerate_stable_poses(mesh)
        count = obj.pose_count or config.poses.count
        indices = obj.pose_indices or config.poses.indices
        sel = select_poses(poses, count, config.poses.mode, config.poses.seed, indices)
        _add(timings, "poses", t0)
        for pose, idx in zip(sel.poses, sel.indices):
            t0 = time.perf_counter()
            posed = placed(mesh, pose)
            cands = sample_grasps(posed, config.sample, config.gripper, config.h, pose_id=idx)
            _add(timings, "sample", t0)
            if not cands:
                empty.append((obj.name, idx))
                continue
            t0 = time.perf_counter()
            recs = []
            for k, cand in enumerate(cands):
                pair = tuple(
                    analyse(posed, frame, config.filter, config.sample.D, tag=(len(slots), k, side))
                    for side, frame in zip(("right", "left"), cand.side_frames)
                )
                recs.append(pair)
            _add(timings, "analyse", t0)
            slots.append(Slot(len(slots), obj.name, idx, pose.probability, posed, tuple(cands), tuple(recs)))
    if empty:
        raise NoFeasibleGrasp(empty)
    return slots


def cap_candidates(slots: list[Slot], cap: int) -> tuple[list[list[int]], bool]:
    """Per-slot kept candidate indices so that the product stays within ``cap``.

    While over the cap, the slot with most candidates drops its candidate of
    smallest total contact volume (ties: the later one).
    """
    keep = [list(range(len(s.candidates))) for s in slots]
    capped = False
    while math.prod(len(k) for k in keep) > cap:
        capped = True
        m = max(range(len(keep)), key=lambda q: (len(keep[q]), -q))
        cands = slots[m].candidates
        worst = min(keep[m], key=lambda k: (sum(cands[k].contact_volume), -k))
        keep[m].remove(worst)
    return keep, capped


def enumerate_combinations(keep: list[list[int]]) -> list[tuple[int, ...]]:
    return list(itertools.product(*keep))


def combination_records(slots: list[Slot], choice) -> list[GeometryRecord]:
    out = []
    for slot, k in zip(slots, choice):
        out.extend(slot.records[k])
    return out


def make_pad(config: RunConfig, slots: list[Slot], choice) -> PadGeometry:
    return synthesize_pad(combination_records(slots, choice), config.filter, config.sample)


def settle_pair(pad: PadGeometry, slot: Slot, k: int) -> tuple[int, int]:
    """Layers each finger backs off along its closing axis to clear the part."""
    return tuple(settle_layers(pad.grid, rec.canonical()) for rec in slot.records[k])


def settled_frames(pad: PadGeometry, slot: Slot, k: int, h: float):
    """Finger frames backed off until the pad clears the part, with layer counts."""
    layers = settle_pair(pad, slot, k)
    frames = [placement_offset(spec.frame, s, h) for spec, s in zip(slot.candidates[k].side_frames, layers)]
    return frames, layers


def score_combination(
    config: RunConfig,
    slots: list[Slot],
    dists,
    i: int,
    choice,
    quality: bool = True,
    cache: ContactCache | None = None,
):
    pad = make_pad(config, slots, choice)
    settle = []
    records = []
    for slot, k, dist in zip(slots, choice, dists):
        layers = settle_pair(pad, slot, k)
        settle.append(layers)
        if not quality:
            continue
        if pad.mesh is None:
            records.append(QualityRecord(i, slot.m, math.nan, 0.0, 0.0, True))
            continue
        frames = [f.frame for f in slot.candidates[k].side_frames]
        keys = [(slot.m, k, side) for side in range(2)]
        patches = extract_contact(pad.mesh, pad.grid.spec, frames, dist, config.eps, cache, keys, layers)
        normals = np.concatenate([p.normals for p in patches])
        area = float(sum(p.area for p in patches))
        if len(normals) == 0:
            records.append(QualityRecord(i, slot.m, math.nan, 0.0, 0.0, True))
            continue
        r = rles(normals)
        records.append(QualityRecord(i, slot.m, r, area, effective_area(r, area), any(p.degenerate for p in patches)))
    score = CombinationScore(i, tuple(choice), pad.case.value, pad.d_B, tuple(settle), tuple(records))
    return score, pad


# worker-process state, set once per process
_CTX: dict = {}


def _init_worker(config, slots, quality):
    _CTX.update(
        config=config,
        slots=slots,
        quality=quality,
        dists=[SurfaceDistance(s.mesh) for s in slots],
        cache=ContactCache(config.h),
    )


def _score_task(args):
    i, choice = args
    score, _ = score_combination(
        _CTX["config"], _CTX["slots"], _CTX["dists"], i, choice, _CTX["quality"], _CTX["cache"]
    )
    return score


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        log.warning("ignoring %s=%r (not an integer)", WORKERS_ENV, raw)
        return 1


# -- reports ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else FLOAT_FMT.format(x)


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = [s.label for s in report.slots]
    header = ["i"] + [f"cand_{x}" for x in labels]
    for name in ("RLES", "A", "E"):
        header += [f"{name}_{x}" for x in labels]
    w.writerow(header + ["case", "d_B", "Q", "is_best"])
    best = report.selection.best if report.selection else None
    for c in report.combinations:
        row = [c.i] + [k + 1 for k in c.choice]
        for attr in ("RLES", "A", "E"):
            row += [_fmt(getattr(q, attr)) for q in c.quality]
        q = min(r.E for r in c.quality) if c.quality else math.nan
        row += [c.case, _fmt(c.d_B), _fmt(q), int(c.i == best)]
        w.writerow(row)
    return buf.getvalue()


def records_csv(slots: list[Slot]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "object", "pose", "candidate", "side", "axis", "u", "v", "grasp_width",
                "V_I", "V_B", "R", "d_n", "label", "validity"])
    for s in slots:
        for k, (cand, pair) in enumerate(zip(s.candidates, s.records)):
            for side, rec in zip(("right", "left"), pair):
                w.writerow([
                    s.m, s.object_name, s.pose_index, k + 1, side, "xy"[cand.axis_index],
                    _fmt(cand.center[0]), _fmt(cand.center[1]), _fmt(cand.grasp_width),
                    _fmt(rec.V_I), _fmt(rec.V_B), _fmt(rec.R), _fmt(rec.d_n),
                    rec.label.value, rec.validity.value,
                ])
    return buf.getvalue()


# -- orchestration ----------------------------------------------------------


def run(config: RunConfig, quality: bool | None = None, workers: int | None = None) -> RunReport:
    """Execute the whole pipeline and write every artifact to ``output.dir``."""
    quality = config.quality_enabled if quality is None else quality
    workers = worker_count() if workers is None else workers
    timings: dict[str, float] = {}
    t_all = time.perf_counter()
    finger = load_stl(config.finger_stl, scale=config.finger_scale)
    slots = build_slots(config, timings)
    n_s = [len(s.candidates) for s in slots]
    keep, capped = cap_candidates(slots, config.max_combinations)
    if capped:
        log.warning(
            "C = %d exceeds max_combinations = %d; keeping %s candidates per slot by contact volume",
            math.prod(n_s), config.max_combinations, [len(k) for k in keep],
        )
    choices = enumerate_combinations(keep)
    tasks = [(i + 1, ch) for i, ch in enumerate(choices)]

    t0 = time.perf_counter()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(config, slots, quality)) as pool:
            scores = list(pool.map(_score_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        _init_worker(config, slots, quality)
        scores = [_score_task(t) for t in tasks]
    timings["score"] = time.perf_counter() - t0

    selection = select_best([[q.E for q in s.quality] for s in scores]) if quality else None
    report = RunReport(slots, n_s, len(choices), capped, scores, selection, timings)

    t0 = time.perf_counter()
    write_artifacts(config, report, finger, quality)
    timings["write"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_all
    (config.output_dir / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return report


def write_artifacts(config: RunConfig, report: RunReport, finger: TriMesh, quality: bool) -> None:
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    slots = report.slots
    arts = report.artifacts
    arts["records"] = out / "records.csv"
    arts["records"].write_text(records_csv(slots))
    if config.pad_stls or not quality:
        pad_dir = out / "pads"
        pad_dir.mkdir(exist_ok=True)
        width = len(str(report.C))
        for c in report.combinations:
            pad = make_pad(config, slots, c.choice)
            if pad.mesh is not None:
                (pad_dir / f"pad_{c.i:0{width}d}.stl").write_bytes(save_stl(pad.mesh))
        arts["pads"] = pad_dir
    if not quality:
        return
    arts["report"] = out / "report.csv"
    arts["report"].write_text(report_csv(report))
    best = make_pad(config, slots, report.best.choice)
    if best.mesh is None:
        raise MeshError(f"best combination {report.best.i} produced an empty pad")
    ext = tuple(np.array(best.grid.spec.shape) * best.grid.spec.h)
    fused = assemble(finger, best.mesh, ext, config.fusion_mode, config.h)
    arts["finger"] = out / "finger_best.stl"
    arts["finger"].write_bytes(save_stl(fused.fused))
    if config.pad_only:
        arts["pad_only"] = out / "pad_only.stl"
        arts["pad_only"].write_bytes(save_stl(best.mesh))


def _add(timings: dict, key: str, t0: float) -> None:
    timings[key] = timings.get(key, 0.0) + time.perf_counter() - t0
