"""Run configuration: a flat ``dotted.key = value`` text file.

Grammar, one entry per line::

    # comment (also allowed after a value)
    section.key = value
    objects.<name>.stl = relative/or/absolute/path.stl

Lists are whitespace- or comma-separated. Booleans accept
true/false/yes/no/1/0. Relative paths resolve against the config file's
directory. Every violation is collected and reported together.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .pad import FilterParams
from .sampler import GripperSpec, SampleBoxSpec

_LINE = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")
_OBJECT_KEY = re.compile(r"^objects\.([A-Za-z0-9_\-]+)\.(stl|scale|poses\.count|poses\.indices)$")

UNITS = {"mm": 1.0, "cm": 10.0, "m": 1000.0, "in": 25.4}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = violations


# key -> (kind, default); kind in float, int, str, bool, floats, ints, path
SCHEMA: dict[str, tuple[str, object]] = {
    "poses.count": ("int", 2),
    "poses.mode": ("str", "random"),
    "poses.seed": ("int", 0),
    "poses.indices": ("ints", None),
    "sample.L": ("float", 20.0),
    "sample.W": ("float", 20.0),
    "sample.T": ("float", 5.0),
    "sample.D": ("float", 4.0),
    "sample.stride": ("float", None),
    "sample.max_per_pose": ("int", 64),
    "gripper.max_opening": ("float", 50.0),
    "gripper.finger_stl": ("path", None),
    "gripper.finger_scale": ("float", 1.0),
    "gripper.body_box": ("floats", (90.0, 40.0, 60.0)),
    "gripper.finger_length": ("float", 60.0),
    "feasibility.min_contact_volume": ("float", 50.0),
    "feasibility.min_contact_footprint": ("float", 25.0),
    "filter.th": ("float", 0.1),
    "filter.K": ("float", 1.5),
    "filter.cluster_tol_deg": ("float", 10.0),
    "filter.perp_tol_deg": ("float", 10.0),
    "voxel.h": ("float", 0.25),
    "quality.eps": ("float", None),
    "quality.enabled": ("bool", True),
    "run.max_combinations": ("int", 4096),
    "output.dir": ("path", "out"),
    "output.fusion_mode": ("str", "shell"),
    "output.pad_stls": ("bool", False),
    "output.pad_only": ("bool", True),
}

OBJECT_SCHEMA = {
    "stl": ("path", None),
    "scale": ("str", "1.0"),
    "poses.count": ("int", None),
    "poses.indices": ("ints", None),
}


@dataclass(frozen=True)
class ObjectConfig:
    name: str
    stl: Path
    scale: float = 1.0
    pose_count: int | None = None
    pose_indices: tuple[int, ...] | None = None


@dataclass(frozen=True)
class PoseSettings:
    count: int = 2
    mode: str = "random"
    seed: int = 0
    indices: tuple[int, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    objects: tuple[ObjectConfig, ...]
    poses: PoseSettings
    sample: SampleBoxSpec
    gripper: GripperSpec
    finger_stl: Path
    finger_scale: float
    filter: FilterParams
    h: float
    eps: float
    quality_enabled: bool
    max_combinations: int
    output_dir: Path
    fusion_mode: str
    pad_stls: bool
    pad_only: bool
    source: Path | None = field(default=None, compare=False)


def parse_text(text: str) -> tuple[dict[str, str], list[str]]:
    """Raw ``key -> value`` map plus syntax violations."""
    raw: dict[str, str] = {}
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        m = _LINE.match(body)
        if not m:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = m.groups()
        if key in raw:
            errors.append(f"{key}: defined more than once (line {lineno})")
        raw[key] = value
    return raw, errors


def _convert(kind: str, text: str, base: Path):
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    if kind == "str":
        return text
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    parts = [p for p in re.split(r"[\s,]+", text) if p]
    if kind == "floats":
        return tuple(float(p) for p in parts)
    if kind == "ints":
        return tuple(int(p) for p in parts)
    if kind == "path":
        p = Path(os.path.expanduser(text))
        return p if p.is_absolute() else (base / p)
    raise AssertionError(kind)


def _scale(text: str) -> float:
    return UNITS[text] if text in UNITS else float(text)


def build(raw: dict[str, str], base_dir: Path | str = ".", check_files: bool = True) -> RunConfig:
    """Typed configuration; raises :class:`ConfigError` listing every violation."""
    base = Path(base_dir)
    errors: list[str] = []
    values: dict[str, object] = {k: d for k, (_, d) in SCHEMA.items()}
    objects: dict[str, dict[str, object]] = {}
    for key, text in raw.items():
        om = _OBJECT_KEY.match(key)
        try:
            if om:
                name, sub = om.groups()
                kind = OBJECT_SCHEMA[sub][0]
                val = _convert(kind, text, base)
                if sub == "scale":
                    val = _scale(val)
                objects.setdefault(name, {})[sub] = val
            elif key in SCHEMA:
                values[key] = _convert(SCHEMA[key][0], text, base)
            else:
                errors.append(f"{key}: unknown key")
        except (ValueError, KeyError):
            errors.append(f"{key}: cannot parse {text!r}")

    def v(key):
        return values[key]

    objs = []
    if not objects:
        errors.append("objects: at least one objects.<name>.stl is required")
    for name in sorted(objects):
        spec = objects[name]
        path = spec.get("stl")
        if path is None:
            errors.append(f"objects.{name}.stl: missing")
            continue
        if check_files and not Path(path).is_file():
            errors.append(f"objects.{name}.stl: file not found: {path}")
        scale = spec.get("scale", 1.0)
        if not scale > 0:
            errors.append(f"objects.{name}.scale: must be positive")
        objs.append(ObjectConfig(name, Path(path), scale, spec.get("poses.count"), spec.get("poses.indices")))

    finger = v("gripper.finger_stl")
    if finger is None:
        errors.append("gripper.finger_stl: missing (flat finger model is required)")
    elif check_files and not Path(finger).is_file():
        errors.append(f"gripper.finger_stl: file not found: {finger}")

    if v("poses.mode") not in ("random", "manual"):
        errors.append("poses.mode: must be 'random' or 'manual'")
    if v("poses.count") < 1:
        errors.append("poses.count: must be >= 1")
    if v("poses.mode") == "manual":
        for o in objs:
            idx = o.pose_indices or v("poses.indices")
            count = o.pose_count or v("poses.count")
            if idx is None:
                errors.append(f"objects.{o.name}.poses.indices: manual mode needs pose indices")
            elif len(idx) != count:
                errors.append(f"objects.{o.name}.poses.indices: lists {len(idx)} indices, count is {count}")
            elif len(set(idx)) != len(idx):
                errors.append(f"objects.{o.name}.poses.indices: duplicate indices")

    L, W, T, D = v("sample.L"), v("sample.W"), v("sample.T"), v("sample.D")
    if min(L, W, T) <= 0:
        errors.append("sample.L/W/T: must be positive")
    if not 0 < D < T:
        errors.append(f"sample.D: must satisfy 0 < D < T (D={D}, T={T})")
    elif T - D < 0.5:
        errors.append(f"sample.T: residual pad thickness T - D = {T - D:g} mm is below 0.5 mm")
    stride = v("sample.stride")
    if stride is not None and stride <= 0:
        errors.append("sample.stride: must be positive")
    if v("sample.max_per_pose") < 1:
        errors.append("sample.max_per_pose: must be >= 1")
    if v("gripper.max_opening") <= 0:
        errors.append("gripper.max_opening: must be positive")
    if len(v("gripper.body_box")) != 3 or min(v("gripper.body_box")) <= 0:
        errors.append("gripper.body_box: needs three positive extents")
    th = v("filter.th")
    if not 0 < th < 1:
        errors.append("filter.th out of (0,1)")
    if v("filter.K") < 1:
        errors.append("filter.K: must be >= 1")
    h = v("voxel.h")
    if not h > 0:
        errors.append("voxel.h: must be positive")
    elif min(L, W, T) > 0 and min(L, W, T) / h < 2:
        errors.append("voxel.h: too coarse for the sample box (need >= 2 cells per axis)")
    eps = v("quality.eps")
    if eps is not None and eps <= 0:
        errors.append("quality.eps: must be positive")
    if v("run.max_combinations") < 1:
        errors.append("run.max_combinations: must be >= 1")
    if v("output.fusion_mode") not in ("shell", "remesh"):
        errors.append("output.fusion_mode: must be 'shell' or 'remesh'")

    if errors:
        raise ConfigError(errors)

    return RunConfig(
        objects=tuple(objs),
        poses=PoseSettings(v("poses.count"), v("poses.mode"), v("poses.seed"), v("poses.indices")),
        sample=SampleBoxSpec(L, W, T, D, stride),
        gripper=GripperSpec(
            max_opening=v("gripper.max_opening"),
            body_box=tuple(v("gripper.body_box")),
            finger_length=v("gripper.finger_length"),
            min_contact_volume=v("feasibility.min_contact_volume"),
            min_contact_footprint=v("feasibility.min_contact_footprint"),
            max_per_pose=v("sample.max_per_pose"),
        ),
        finger_stl=Path(finger),
        finger_scale=v("gripper.finger_scale"),
        filter=FilterParams(th, v("filter.K"), v("filter.cluster_tol_deg"), v("filter.perp_tol_deg")),
        h=h,
        eps=eps if eps is not None else 2 * h,
        quality_enabled=v("quality.enabled"),
        max_combinations=v("run.max_combinations"),
        output_dir=base / Path(v("output.dir")),
        fusion_mode=v("output.fusion_mode"),
        pad_stls=v("output.pad_stls"),
        pad_only=v("output.pad_only"),
    )


def validate(raw: dict[str, str], base_dir: Path | str = ".") -> list[str]:
    """Empty list when the configuration is valid."""
    try:
        build(raw, base_dir)
    except ConfigError as exc:
        return exc.violations
    return []


def load(path) -> RunConfig:
    path = Path(path)
    raw, errors = parse_text(path.read_text())
    if errors:
        raise ConfigError(errors)
    cfg = build(raw, path.parent)
    return RunConfig(**{**cfg.__dict__, "source": path})
