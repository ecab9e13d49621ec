"""Scenario configuration: strict JSON documents mapped onto nested dataclasses.

Unknown keys are errors, every error names the dotted path of the
offending field, and ``from_dict(to_dict(c)) == c``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field

from .exceptions import ValidationError
from .gbg import MODES as BEV_MODES
from .grid import GridSpec
from .scene import SceneParams
from .sisw import INFO_MODES

COLLAB_MODES = ("none", "late", "early", "sisw")
DEPTH_MODES = ("oracle", "uniform")


@dataclass(frozen=True)
class SceneConfig:
    n_instances: int = 24
    area: float = 100.0
    speed_range: tuple = (0.0, 5.0)
    yaw_rate_range: tuple = (-0.15, 0.15)
    truck_fraction: float = 0.2
    car_height: tuple = (1.4, 1.8)
    truck_height: tuple = (3.0, 4.0)
    clearance: float = 1.5


@dataclass(frozen=True)
class RigConfig:
    n_drones: int = 4
    altitude: float = 50.0
    rig_radius: float = 55.0
    image_size: tuple = (480, 224)
    hfov: float = math.pi / 2
    pitch: typing.Optional[float] = None
    # explicit (x, y, yaw, pitch, bev_yaw) per drone; overrides the ring layout
    poses: typing.Optional[tuple] = None


@dataclass(frozen=True)
class GridConfig:
    name: str = "long"  # "long", "short" or "custom"
    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -50.0
    y_max: float = 50.0
    resolution: float = 0.5
    z_min: float = 0.0
    z_max: float = 10.0
    z_resolution: float = 2.5

    def spec(self) -> GridSpec:
        if self.name == "custom":
            return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.resolution,
                            self.z_min, self.z_max, self.z_resolution)
        return GridSpec.named(self.name)


@dataclass(frozen=True)
class GbgConfig:
    mode: str = "ground-prior"
    height_noise: float = 0.0
    depth_mode: str = "uniform"  # depth-bin baseline estimator
    channels: int = 16


@dataclass(frozen=True)
class SiswConfig:
    window: int = 7
    ratio: float = 0.25
    info_mode: str = "literal"
    infill_sigma: float = 1.0
    infill_radius: int = 1
    count_info_maps: bool = True
    wire_roundtrip: bool = False


@dataclass(frozen=True)
class CollaborationConfig:
    mode: str = "sisw"
    budget_bytes: typing.Optional[int] = None


@dataclass(frozen=True)
class DecoderConfig:
    threshold: float = 0.85
    match_gate: float = 3.0
    rule: str = "vehicle-fraction"
    min_cells: int = 6


@dataclass(frozen=True)
class MetricsConfig:
    center_gate: float = 4.0
    iou_gate: float = 0.5
    min_visible_pixels: int = 20
    gamma: float = 0.95
    lambda1: float = 1.0
    lambda2: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    scene: SceneConfig = field(default_factory=SceneConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    gbg: GbgConfig = field(default_factory=GbgConfig)
    sisw: SiswConfig = field(default_factory=SiswConfig)
    collaboration: CollaborationConfig = field(default_factory=CollaborationConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        _check_semantics(self)

    # -- conversions -----------------------------------------------------
    def to_dict(self):
        return _to_plain(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "")

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError("<document>", f"not valid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def replace(self, **sections):
        """Copy with whole sections or dotted ``section__field`` values replaced."""
        updates = {}
        for key, value in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                base = updates.get(sec, getattr(self, sec))
                updates[sec] = dataclasses.replace(base, **{name: value})
            else:
                updates[key] = value
        return dataclasses.replace(self, **updates)

    def scene_params(self) -> SceneParams:
        s, r = self.scene, self.rig
        return SceneParams(
            n_instances=s.n_instances, area=s.area, speed_range=tuple(s.speed_range),
            yaw_rate_range=tuple(s.yaw_rate_range), truck_fraction=s.truck_fraction,
            car_height=tuple(s.car_height), truck_height=tuple(s.truck_height),
            clearance=s.clearance, n_drones=r.n_drones, altitude=r.altitude,
            rig_radius=r.rig_radius, image_size=tuple(r.image_size), hfov=r.hfov, pitch=r.pitch,
            drone_poses=None if r.poses is None else tuple(tuple(p) for p in r.poses))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ValidationError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ValidationError(path, f"expected a string, got {value!r}")
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValidationError(path, f"expected a list, got {value!r}")
        return tuple(_coerce(tuple, v, f"{path}[{i}]") if isinstance(v, (list, tuple))
                     else _scalar(v, f"{path}[{i}]") for i, v in enumerate(value))
    raise TypeError(f"unsupported config type {tp!r}")


def _scalar(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, f"expected a number, got {value!r}")
    return value


def _build(cls, data, prefix):
    where = prefix or "<document>"
    if not isinstance(data, dict):
        raise ValidationError(where, "expected an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        path = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ValidationError(path, f"unknown key; expected one of {sorted(fields)}")
    kwargs = {}
    for name, f in fields.items():
        path = f"{prefix}.{name}" if prefix else name
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ValidationError(path, "required field is missing")
            continue
        kwargs[name] = _coerce(hints[name], data[name], path)
    try:
        return cls(**kwargs)
    except ValidationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ValidationError(where, str(exc)) from None


def _require(cond, path, message):
    if not cond:
        raise ValidationError(path, message)


def _check_range(value, path):
    _require(len(value) == 2 and value[0] <= value[1], path, "expected [low, high] with low <= high")


def _check_semantics(c: ScenarioConfig):
    _require(isinstance(c.seed, int) and not isinstance(c.seed, bool) and c.seed >= 0,
             "seed", "must be a non-negative integer")
    s = c.scene
    _require(s.n_instances >= 0, "scene.n_instances", "must be >= 0")
    _require(s.area > 0, "scene.area", "must be > 0")
    _require(0 <= s.truck_fraction <= 1, "scene.truck_fraction", "must lie in [0, 1]")
    for name in ("speed_range", "yaw_rate_range", "car_height", "truck_height"):
        _check_range(getattr(s, name), f"scene.{name}")
    for name in ("car_height", "truck_height"):
        lo, hi = getattr(s, name)
        _require(0 < lo and hi <= 10.0, f"scene.{name}", "heights must lie in (0, 10] m")
    r = c.rig
    _require(r.n_drones >= 1, "rig.n_drones", "must be >= 1")
    _require(r.altitude > 0, "rig.altitude", "must be > 0")
    _require(len(r.image_size) == 2 and all(int(v) == v and v > 0 for v in r.image_size),
             "rig.image_size", "expected [width, height] in pixels")
    _require(0 < r.hfov < math.pi, "rig.hfov", "must lie in (0, pi)")
    if r.poses is not None:
        _require(len(r.poses) == r.n_drones, "rig.poses", "need one pose per drone")
        for i, p in enumerate(r.poses):
            _require(len(p) == 5, f"rig.poses[{i}]", "expected [x, y, yaw, pitch, bev_yaw]")
    g = c.grid
    _require(g.name in ("long", "short", "custom"), "grid.name",
             "expected 'long', 'short' or 'custom'")
    try:
        g.spec()
    except ValueError as exc:
        raise ValidationError("grid", str(exc)) from None
    _require(c.gbg.mode in BEV_MODES, "gbg.mode", f"expected one of {list(BEV_MODES)}")
    _require(c.gbg.height_noise >= 0, "gbg.height_noise", "must be >= 0")
    _require(c.gbg.depth_mode in DEPTH_MODES, "gbg.depth_mode", f"expected one of {list(DEPTH_MODES)}")
    _require(c.gbg.channels >= 4 and c.gbg.channels % 2 == 0, "gbg.channels",
             "must be an even number >= 4")
    w = c.sisw
    _require(w.window >= 3 and w.window % 2 == 1, "sisw.window", "must be an odd integer >= 3")
    _require(0 < w.ratio <= 1, "sisw.ratio", "must lie in (0, 1]")
    _require(w.info_mode in INFO_MODES, "sisw.info_mode", f"expected one of {list(INFO_MODES)}")
    _require(w.infill_sigma > 0, "sisw.infill_sigma", "must be > 0")
    _require(w.infill_radius >= 1, "sisw.infill_radius", "must be >= 1")
    m = c.collaboration
    _require(m.mode in COLLAB_MODES, "collaboration.mode", f"expected one of {list(COLLAB_MODES)}")
    if m.budget_bytes is not None:
        _require(m.budget_bytes > 0, "collaboration.budget_bytes", "must be > 0 or null")
        _require(m.mode != "early", "collaboration.budget_bytes",
                 "early collaboration exchanges full grids and cannot honour a byte budget")
    d = c.decoder
    _require(0 < d.threshold, "decoder.threshold", "must be > 0")
    _require(d.match_gate > 0, "decoder.match_gate", "must be > 0")
    _require(d.min_cells >= 1, "decoder.min_cells", "must be >= 1")
    _require(d.rule in ("vehicle-fraction", "magnitude"), "decoder.rule",
             "expected 'vehicle-fraction' or 'magnitude'")
    mt = c.metrics
    _require(mt.center_gate > 0, "metrics.center_gate", "must be > 0")
    _require(0 < mt.iou_gate < 1, "metrics.iou_gate", "must lie in (0, 1)")
    _require(mt.min_visible_pixels >= 1, "metrics.min_visible_pixels", "must be >= 1")
    _require(0 < mt.gamma <= 1, "metrics.gamma", "must lie in (0, 1]")
