"""Parameter sets and the JSON parameter file."""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialParams:
    k: float = 1.0
    r_a: float = 1.0
    k1: float = 1.0
    E_max: float = 100.0
    T: float = 1.0
    alpha: float = 0.1
    beta: float = 1.2
    gamma: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ParamError(f"potential.{f.name} must be > 0")
        if self.beta < 1 or self.k1 < 1:
            raise ParamError("potential.beta and potential.k1 must be >= 1")


@dataclass(frozen=True)
class KineticParams:
    t: float = 3.0
    v_min: float = 0.1

    def __post_init__(self):
        if not self.t > 0 or self.v_min < 0:
            raise ParamError("kinetic.t must be > 0 and kinetic.v_min >= 0")


@dataclass(frozen=True)
class StaticParams:
    kappa: float = 2.0

    def __post_init__(self):
        if self.kappa < 1:
            raise ParamError("static.kappa must be >= 1")


@dataclass(frozen=True)
class FieldParams:
    potential: PotentialParams = field(default_factory=PotentialParams)
    kinetic: KineticParams = field(default_factory=KineticParams)
    static: StaticParams = field(default_factory=StaticParams)
    # dynamic objects contribute nothing farther than this from their footprint
    cutoff: float = 50.0
    stiffness: dict = field(default_factory=lambda: {"lane_line": 400.0, "barrier": 1.0e5})

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ParamError("field.cutoff must be > 0")
        if self.stiffness["barrier"] < self.stiffness["lane_line"]:
            raise ParamError("barrier stiffness must be >= lane_line stiffness")

    def __hash__(self):
        return hash((self.potential, self.kinetic, self.static, self.cutoff,
                     tuple(sorted(self.stiffness.items()))))


@dataclass(frozen=True)
class GridParams:
    ahead: float = 100.0
    behind: float = 20.0
    width: float = 40.0
    resolution: float = 0.5


@dataclass(frozen=True)
class PlannerParams:
    n_paths: int = 9
    frames: int = 7
    dt: float = 0.5
    r_free: float = 5.0
    r_stop: float = 60.0
    min_lookahead: float = 20.0
    v_floor: float = 1.0
    sample_spacing: float = 0.25
    a_accel: float = 1.0
    a_brake: float = 1.0
    a_emergency: float = 1.5
    a_lat_max: float = 1.2
    speed_gain: float = 0.5
    ttc_threshold: float = 2.0

    def __post_init__(self):
        if self.n_paths < 1 or self.n_paths % 2 == 0:
            raise ParamError("planner.n_paths must be odd and >= 1")
        if not 0 <= self.r_free < self.r_stop:
            raise ParamError("planner thresholds need 0 <= r_free < r_stop")
        if self.a_emergency > 1.5 or self.a_accel > 1.5 or self.a_brake > 1.5 or self.a_lat_max > 1.2:
            raise ParamError("planner acceleration limits exceed the comfort bounds")


@dataclass(frozen=True)
class PredictorParams:
    horizon: float = 3.5
    feature_spacing: float = 2.0
    yaw_window: int = 5
    heading_tolerance: float = 0.1


@dataclass(frozen=True)
class TrackerParams:
    wheelbase: float = 2.7
    lookahead_time: float = 0.3
    min_lookahead: float = 1.5
    curvature_rate: float = 0.05


@dataclass(frozen=True)
class Params:
    risk: FieldParams = field(default_factory=FieldParams)
    grid: GridParams = field(default_factory=GridParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    predictor: PredictorParams = field(default_factory=PredictorParams)
    tracker: TrackerParams = field(default_factory=TrackerParams)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, doc):
    kwargs = {}
    for f in fields(cls):
        if f.name not in doc:
            continue
        val = doc[f.name]
        sub = f.default_factory() if f.default_factory is not MISSING else None
        if is_dataclass(sub):
            kwargs[f.name] = _build(type(sub), val)
        elif isinstance(sub, dict):
            kwargs[f.name] = {**sub, **val}
        else:
            kwargs[f.name] = val
    unknown = set(doc) - {f.name for f in fields(cls)}
    if unknown:
        raise ParamError(f"unknown parameter(s) {sorted(unknown)} in {cls.__name__}")
    return cls(**kwargs)


def params_from_dict(doc: dict) -> Params:
    return _build(Params, doc)


def default_params_path():
    return resources.files("riskplan") / "data" / "params.json"


def load_params(path=None) -> Params:
    """Read a parameter file; omitted keys fall back to the packaged defaults."""
    base = json.loads(default_params_path().read_text())
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParamError(f"{path}: {exc}") from None
        base = _merge(base, user)
    return params_from_dict(base)


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(a[k], v) if isinstance(v, dict) and isinstance(a.get(k), dict) else v
    return out
