"""Trajectory prediction for surrounding objects.

Map-following and kinematic (constant turn rate and speed) predictors, the
dispatcher that chooses between them, and the 3x3 surrounding-risk features a
learned sequence model would consume.  No learned model ships; one can be
registered with `register_learned_predictor`.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .geometry import Pose2, wrap_angle
from .params import FieldParams
from .riskfield import Scene, total_energy_at
from .scenario import TICK, DynamicObject, LaneGraph

DT = 0.5
HORIZONS = (2.0, 3.5, 6.0)
HISTORY_CAPACITY = 30
MIN_YAW_RATE = 1e-3


class PredictionError(ValueError):
    pass


class InsufficientHistory(PredictionError):
    pass


class NotOnLane(PredictionError):
    pass


@dataclass(frozen=True)
class HistoryBuffer:
    object_id: str
    frames: tuple  # (time, Pose2, speed), newest last

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) > HISTORY_CAPACITY:
            raise ValueError(f"history holds at most {HISTORY_CAPACITY} frames")
        times = [f[0] for f in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("history times must increase strictly")
        if len(times) > 2 and not np.allclose(np.diff(times), TICK, atol=1e-6):
            raise ValueError(f"history frames must be {TICK} s apart")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    @property
    def full(self) -> bool:
        return len(self.frames) == HISTORY_CAPACITY

    @property
    def time(self) -> float:
        return self.frames[-1][0]


class HistoryRecorder:
    """Rolling per-object history kept by the simulator."""

    def __init__(self):
        self._frames: dict[str, deque] = {}

    def record(self, t: float, obj: DynamicObject) -> None:
        buf = self._frames.setdefault(obj.id, deque(maxlen=HISTORY_CAPACITY))
        buf.append((t, obj.pose, obj.speed))

    def buffer(self, object_id: str) -> HistoryBuffer:
        return HistoryBuffer(object_id, tuple(self._frames.get(object_id, ())))


@dataclass(frozen=True)
class PredictedTrajectory:
    object_id: str
    start_time: float
    states: tuple  # (Pose2, speed) at start_time + (k + 1) * dt
    horizon: float
    dt: float = DT

    def __post_init__(self):
        n = int(round(self.horizon / self.dt))
        if len(self.states) != n:
            raise ValueError(f"expected {n} states for a {self.horizon} s horizon, got {len(self.states)}")

    def to_record(self) -> dict:
        return {"id": self.object_id, "start_time": self.start_time, "horizon": self.horizon,
                "states": [[p.x, p.y, p.heading, v] for p, v in self.states]}


def _check_horizon(horizon: float) -> int:
    if not any(abs(horizon - h) < 1e-9 for h in HORIZONS):
        raise ValueError(f"horizon must be one of {HORIZONS}")
    return int(round(horizon / DT))


def predict_kinematic(h: HistoryBuffer, horizon: float = 3.5, window: int = 5) -> PredictedTrajectory:
    """Constant-turn-rate-and-speed extrapolation from the newest frame.

    Speed and yaw rate are least-squares fits over the last `window` frames
    (a constant and a slope respectively).
    """
    n = _check_horizon(horizon)
    if len(h) < 2:
        raise InsufficientHistory(f"{h.object_id}: need >= 2 history frames, have {len(h)}")
    recent = h.frames[-window:]
    t = np.array([f[0] for f in recent])
    heading = np.unwrap([f[1].heading for f in recent])
    speed = float(np.mean([f[2] for f in recent]))
    tc = t - t.mean()
    yaw_rate = float(np.dot(tc, heading - heading.mean()) / np.dot(tc, tc))
    t0, p0, _ = h.frames[-1]
    states = []
    for k in range(1, n + 1):
        dt = k * DT
        if abs(yaw_rate) < MIN_YAW_RATE:
            x = p0.x + speed * dt * math.cos(p0.heading)
            y = p0.y + speed * dt * math.sin(p0.heading)
            hd = p0.heading
        else:
            hd = p0.heading + yaw_rate * dt
            r = speed / yaw_rate
            x = p0.x + r * (math.sin(hd) - math.sin(p0.heading))
            y = p0.y - r * (math.cos(hd) - math.cos(p0.heading))
        states.append((Pose2(x, y, hd), speed))
    return PredictedTrajectory(h.object_id, t0, tuple(states), horizon)


def lane_position(obj: DynamicObject, lanes: LaneGraph, threshold: float | None = None):
    """(lane, arc length, lateral offset) if obj lies within one lane width of a centerline."""
    hit = lanes.nearest(obj.pose.x, obj.pose.y)
    if hit is None:
        return None
    lane, s, d = hit
    limit = lane.width if threshold is None else threshold
    if lane.polyline.distance(obj.pose.x, obj.pose.y) > limit:
        return None
    return lane, s, d


def on_lane(obj: DynamicObject, lanes: LaneGraph, heading_tolerance: float = 0.1) -> bool:
    """Inside a lane's half width and travelling along it."""
    hit = lane_position(obj, lanes)
    if hit is None:
        return False
    lane, s, d = hit
    if abs(d) > lane.width / 2:
        return False
    if obj.speed <= 0.0:
        return True
    return abs(wrap_angle(obj.pose.heading - lane.polyline.heading_at(s))) <= heading_tolerance


def predict_map_following(obj: DynamicObject, lanes: LaneGraph, horizon: float = 3.5,
                          start_time: float = 0.0) -> PredictedTrajectory:
    """Advance along the nearest centerline at constant speed, keeping the lateral offset."""
    n = _check_horizon(horizon)
    hit = lane_position(obj, lanes)
    if hit is None:
        raise NotOnLane(f"{obj.id}: no lane within one lane width")
    lane, s0, d = hit
    path = lanes.chain(lane, s0 + obj.speed * horizon + 1.0)
    states = []
    for k in range(1, n + 1):
        pose = path.offset_point(s0 + obj.speed * k * DT, d)
        states.append((pose, obj.speed))
    return PredictedTrajectory(obj.id, start_time, tuple(states), horizon)


@dataclass(frozen=True)
class RiskFeatureVector:
    energies: tuple  # 9 values, row-major from front-left to rear-right
    position: tuple  # (x, y)

    def as_array(self) -> np.ndarray:
        return np.array(self.energies + self.position)


def feature_points(obj: DynamicObject, spacing: float = 2.0) -> np.ndarray:
    """World coordinates of the 3x3 neighbourhood, rows front to rear, columns left to right."""
    local = [(lo, la) for lo in (spacing, 0.0, -spacing) for la in (spacing, 0.0, -spacing)]
    return obj.pose.to_world(np.array(local))


def extract_risk_features(obj: DynamicObject, others, fp: FieldParams, spacing: float = 2.0,
                          ego: DynamicObject | None = None) -> RiskFeatureVector:
    scene = Scene(tuple(o for o in others if o.id != obj.id and isinstance(o, DynamicObject)),
                  tuple(o for o in others if not isinstance(o, DynamicObject)))
    energies = tuple(total_energy_at(tuple(p), scene, fp, ego=ego, exclude=obj.id)
                     for p in feature_points(obj, spacing))
    return RiskFeatureVector(energies, (obj.pose.x, obj.pose.y))


class LearnedPredictor(Protocol):
    def __call__(self, history: HistoryBuffer, features: list, horizon: float) -> PredictedTrajectory:
        ...


_learned: LearnedPredictor | None = None


def register_learned_predictor(model: LearnedPredictor | None) -> None:
    """Install (or with None, remove) the sequence model used for off-lane objects."""
    global _learned
    _learned = model


def learned_predictor() -> LearnedPredictor | None:
    return _learned


def predict(obj: DynamicObject, h: HistoryBuffer, lanes: LaneGraph, horizon: float = 3.5,
            features: list | None = None, model: LearnedPredictor | None = None,
            heading_tolerance: float = 0.1) -> PredictedTrajectory:
    """Dispatch: learned model for off-lane objects with full history, then map, then kinematics."""
    model = model if model is not None else _learned
    lane_ok = on_lane(obj, lanes, heading_tolerance)
    if model is not None and not lane_ok and h.full:
        return model(h, features or [], horizon)
    if lane_ok:
        return predict_map_following(obj, lanes, horizon, start_time=h.time if len(h) else 0.0)
    return predict_kinematic(h, horizon)


def constant_velocity(obj: DynamicObject, horizon: float = 3.5, start_time: float = 0.0) -> PredictedTrajectory:
    """Straight-line fallback for objects seen only once."""
    n = _check_horizon(horizon)
    c, s = math.cos(obj.pose.heading), math.sin(obj.pose.heading)
    states = tuple((Pose2(obj.pose.x + obj.speed * k * DT * c, obj.pose.y + obj.speed * k * DT * s,
                          obj.pose.heading), obj.speed) for k in range(1, n + 1))
    return PredictedTrajectory(obj.id, start_time, states, horizon)


def dump_predictions(preds, path, cycle_time: float) -> None:
    """Append one JSON line per object for this planning cycle."""
    with open(path, "a") as fh:
        for p in preds:
            fh.write(json.dumps({"cycle": cycle_time, **p.to_record()}) + "\n")

