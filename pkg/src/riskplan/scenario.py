"""Scenario data model and the JSON scenario-file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Polyline, Pose2, ccw, is_convex, polygon_area, polygon_distance, rectangle, wrap_angle

TICK = 0.1

DYNAMIC_KINDS = ("vehicle", "pedestrian", "truck")
STATIC_KINDS = ("lane_line", "barrier")

DEFAULT_MASS = {"vehicle": 1500.0, "pedestrian": 70.0, "truck": 15000.0}
DEFAULT_STIFFNESS = {"lane_line": 400.0, "barrier": 1.0e5}


class ScenarioError(ValueError):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _check(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ScenarioValidationError(field, message)


@dataclass(frozen=True)
class DynamicObject:
    id: str
    kind: str
    mass: float
    pose: Pose2
    speed: float
    footprint: tuple  # object-frame CCW vertices
    width: float

    def __post_init__(self):
        _check(self.kind in DYNAMIC_KINDS, f"{self.id}.kind", f"unknown kind {self.kind!r}")
        _check(self.mass > 0, f"{self.id}.mass", "must be > 0")
        _check(self.speed >= 0, f"{self.id}.speed", "must be >= 0")
        _check(self.width > 0, f"{self.id}.width", "must be > 0")
        poly = np.asarray(self.footprint, dtype=float)
        _check(poly.ndim == 2 and poly.shape[1] == 2 and len(poly) >= 3,
               f"{self.id}.footprint", "needs >= 3 (x, y) vertices")
        _check(abs(polygon_area(poly)) > 1e-12, f"{self.id}.footprint", "degenerate polygon (zero area)")
        _check(is_convex(poly), f"{self.id}.footprint", "must be convex")
        poly = ccw(poly)
        _check(polygon_distance(0.0, 0.0, poly) == 0.0, f"{self.id}.footprint", "must contain the origin")
        object.__setattr__(self, "footprint", tuple((float(x), float(y)) for x, y in poly))

    @classmethod
    def box(cls, id, kind, pose, speed, length, width, mass=None):
        return cls(id, kind, DEFAULT_MASS[kind] if mass is None else mass,
                   pose, speed, tuple(map(tuple, rectangle(length, width))), width)

    @cached_property
    def local_polygon(self) -> np.ndarray:
        return np.array(self.footprint)

    def polygon(self) -> np.ndarray:
        """Footprint in the world frame, CCW."""
        return self.pose.to_world(self.local_polygon)

    @property
    def front(self) -> float:
        return float(self.local_polygon[:, 0].max())

    @property
    def rear(self) -> float:
        return float(-self.local_polygon[:, 0].min())

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.pose.heading), math.sin(self.pose.heading)])

    def moved(self, pose: Pose2, speed: float) -> "DynamicObject":
        """Same object at a new state; the footprint was validated once already."""
        _check(speed >= 0, f"{self.id}.speed", "must be >= 0")
        out = object.__new__(DynamicObject)
        out.__dict__.update(self.__dict__)
        out.__dict__["pose"] = pose
        out.__dict__["speed"] = float(speed)
        return out


@dataclass(frozen=True)
class StaticObject:
    id: str
    kind: str
    geometry: tuple
    width: float
    stiffness: float

    def __post_init__(self):
        _check(self.kind in STATIC_KINDS, f"{self.id}.kind", f"unknown kind {self.kind!r}")
        _check(len(self.geometry) >= 2, f"{self.id}.geometry", "needs >= 2 points")
        _check(self.width > 0, f"{self.id}.width", "must be > 0")
        _check(self.stiffness >= 0, f"{self.id}.stiffness", "must be >= 0")
        object.__setattr__(self, "geometry", tuple((float(x), float(y)) for x, y in self.geometry))

    @cached_property
    def points(self) -> np.ndarray:
        return np.array(self.geometry)


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple
    width: float
    successors: tuple = ()

    def __post_init__(self):
        _check(self.width > 0, f"{self.id}.width", "must be > 0")
        pts = np.asarray(self.centerline, dtype=float)
        _check(pts.ndim == 2 and len(pts) >= 2, f"{self.id}.centerline", "needs >= 2 points")
        _check(bool(np.all(np.hypot(*np.diff(pts, axis=0).T) > 0)),
               f"{self.id}.centerline", "arc length must increase strictly")
        object.__setattr__(self, "centerline", tuple((float(x), float(y)) for x, y in pts))
        object.__setattr__(self, "successors", tuple(self.successors))

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(np.array(self.centerline))


@dataclass(frozen=True)
class LaneGraph:
    lanes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        ids = {ln.id for ln in self.lanes}
        _check(len(ids) == len(self.lanes), "map.lanes", "duplicate lane id")
        for ln in self.lanes:
            for s in ln.successors:
                _check(s in ids, f"{ln.id}.successors", f"unknown lane {s!r}")

    def __getitem__(self, lane_id: str) -> Lane:
        for ln in self.lanes:
            if ln.id == lane_id:
                return ln
        raise KeyError(lane_id)

    def nearest(self, x: float, y: float):
        """Closest lane as (lane, arc length, lateral offset); None for an empty map."""
        best = None
        for ln in self.lanes:
            s, d = ln.polyline.project(x, y)
            dist = ln.polyline.distance(x, y)
            if best is None or dist < best[0]:
                best = (dist, ln, s, d)
        return None if best is None else best[1:]

    def chain(self, lane: Lane, length: float) -> Polyline:
        """The lane's centerline extended through first successors up to `length` meters."""
        pts = [np.array(lane.centerline)]
        total = lane.polyline.length
        seen = {lane.id}
        cur = lane
        while total < length and cur.successors and cur.successors[0] not in seen:
            cur = self[cur.successors[0]]
            seen.add(cur.id)
            nxt = np.array(cur.centerline)
            if np.allclose(nxt[0], pts[-1][-1]):
                nxt = nxt[1:]
            if len(nxt):
                pts.append(nxt)
                total = Polyline(np.concatenate(pts)).length
        return Polyline(np.concatenate(pts))


@dataclass(frozen=True)
class AgentScript:
    """A dynamic object plus its timed motion, sampled on the uniform tick."""

    obj: DynamicObject
    times: tuple
    poses: tuple
    speeds: tuple

    def state_at(self, t: float) -> DynamicObject:
        times = self.times
        if t <= times[0]:
            k, u = 0, 0.0
        elif t >= times[-1]:
            k, u = len(times) - 1, 0.0
        else:
            k = int(np.searchsorted(times, t, side="right")) - 1
            u = (t - times[k]) / (times[k + 1] - times[k])
        p0, v0 = self.poses[k], self.speeds[k]
        if u == 0.0:
            return self.obj.moved(p0, v0)
        p1, v1 = self.poses[k + 1], self.speeds[k + 1]
        pose = Pose2(p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y),
                     p0.heading + u * wrap_angle(p1.heading - p0.heading))
        return self.obj.moved(pose, v0 + u * (v1 - v0))


@dataclass(frozen=True)
class Scenario:
    lanes: LaneGraph
    statics: tuple
    ego: DynamicObject
    agents: tuple
    target: Pose2
    speed_limit: float
    duration: float
    name: str = field(default="scenario", compare=False)

    def __post_init__(self):
        _check(self.duration > 0, "duration", "must be > 0")
        _check(self.speed_limit > 0, "speed_limit", "must be > 0")
        ids = [self.ego.id] + [a.obj.id for a in self.agents] + [s.id for s in self.statics]
        _check(len(set(ids)) == len(ids), "ids", "object ids must be unique")
        for a in self.agents:
            _check(a.times[0] <= 1e-9 and a.times[-1] >= self.duration - 1e-9,
                   f"agents.{a.obj.id}.motion", f"must cover [0, {self.duration}] s")

    def agents_at(self, t: float) -> list[DynamicObject]:
        return [a.state_at(t) for a in self.agents]


def distance_to_object(p, obj: DynamicObject) -> float:
    """Distance from a world point to the object's footprint; 0 inside or on the boundary."""
    x, y = (p.x, p.y) if isinstance(p, Pose2) else p
    return float(polygon_distance(x, y, obj.polygon()))


def frenet_offsets(p, obj: DynamicObject) -> tuple[float, float]:
    """Signed (longitudinal, lateral) displacement of p in the object's heading frame."""
    x, y = (p.x, p.y) if isinstance(p, Pose2) else p
    lo, la = obj.pose.to_local(x, y)
    return float(lo), float(la)


# --- file format ---------------------------------------------------------


def _pose(d, where) -> Pose2:
    try:
        return Pose2(float(d["x"]), float(d["y"]), float(d.get("heading", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{where}: bad pose ({exc})") from None


def _pose_json(p: Pose2) -> dict:
    return {"x": p.x, "y": p.y, "heading": p.heading}


def _dynamic(d, where) -> DynamicObject:
    try:
        kind = d.get("kind", "vehicle")
        oid = str(d["id"])
        pose = _pose(d["pose"], f"{where}.pose")
        speed = float(d.get("speed", 0.0))
        mass = float(d.get("mass", DEFAULT_MASS.get(kind, 1.0)))
        if "footprint" in d:
            fp = tuple(tuple(map(float, v)) for v in d["footprint"])
            width = float(d.get("width", np.ptp(np.array(fp)[:, 1])))
        else:
            width = float(d["width"])
            fp = tuple(map(tuple, rectangle(float(d.get("length", width)), width)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{where}: {exc!r}") from None
    return DynamicObject(oid, kind, mass, pose, speed, fp, width)


def _dynamic_json(o: DynamicObject) -> dict:
    return {"id": o.id, "kind": o.kind, "mass": o.mass, "pose": _pose_json(o.pose),
            "speed": o.speed, "footprint": [list(v) for v in o.footprint], "width": o.width}


def resample(times, poses, speeds, duration: float, tick: float = TICK):
    """Resample keyframes onto t = i * tick for i = 0..round(duration / tick).

    Missing speeds (None) are filled from the resampled displacement.
    """
    order = np.argsort(times, kind="stable")
    times = [float(times[i]) for i in order]
    poses = [poses[i] for i in order]
    speeds = [speeds[i] for i in order]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScenarioValidationError("motion", "keyframe times must be strictly increasing")
    n = int(round(duration / tick)) + 1
    has_speed = all(v is not None for v in speeds)
    tmp = AgentScript(None, tuple(times), tuple(poses), tuple(speeds if has_speed else [0.0] * len(times)))
    out_t, out_p, out_v = [], [], []
    for i in range(n):
        t = i * tick
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(max(k, 0), len(times) - 1)
        if times[k] == t or t <= times[0] or t >= times[-1]:
            j = 0 if t <= times[0] else (len(times) - 1 if t >= times[-1] else k)
            p, v = poses[j], tmp.speeds[j]
        else:
            u = (t - times[k]) / (times[k + 1] - times[k])
            p0, p1 = poses[k], poses[k + 1]
            p = Pose2(p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y),
                      p0.heading + u * wrap_angle(p1.heading - p0.heading))
            v = tmp.speeds[k] + u * (tmp.speeds[k + 1] - tmp.speeds[k])
        out_t.append(t)
        out_p.append(p)
        out_v.append(v)
    if not has_speed:
        xy = np.array([[p.x, p.y] for p in out_p])
        step = np.hypot(*np.diff(xy, axis=0).T) / tick if n > 1 else np.zeros(0)
        out_v = [float(v) for v in np.append(step, step[-1] if len(step) else 0.0)]
    return tuple(out_t), tuple(out_p), tuple(out_v)


def scenario_from_dict(doc: dict, stiffness: dict | None = None, name: str = "scenario") -> Scenario:
    stiffness = {**DEFAULT_STIFFNESS, **(stiffness or {})}
    for key in ("map", "ego", "agents", "target", "speed_limit", "duration"):
        if key not in doc:
            raise ScenarioParseError(f"missing top-level key {key!r}")
    try:
        duration = float(doc["duration"])
        m = doc["map"]
        lanes = LaneGraph(tuple(
            Lane(str(ln["id"]), tuple(map(tuple, ln["centerline"])), float(ln["width"]),
                 tuple(ln.get("successors", ())))
            for ln in m.get("lanes", [])))
        statics = tuple(
            StaticObject(str(s["id"]), s["kind"], tuple(map(tuple, s["geometry"])), float(s["width"]),
                         float(s["stiffness"]) if "stiffness" in s else stiffness[s["kind"]])
            for s in m.get("static_objects", []))
    except (KeyError, TypeError) as exc:
        raise ScenarioParseError(f"map: {exc!r}") from None
    ego = _dynamic(doc["ego"], "ego")
    agents = []
    for i, a in enumerate(doc["agents"]):
        where = f"agents[{i}]"
        motion = a.get("motion")
        if not motion:
            raise ScenarioParseError(f"{where}: missing motion")
        first = motion[0]
        obj_doc = {**a, "pose": a.get("pose", first), "speed": a.get("speed", first.get("speed", 0.0))}
        obj = _dynamic(obj_doc, where)
        try:
            times = [float(k["t"]) for k in motion]
            poses = [_pose(k, f"{where}.motion") for k in motion]
            speeds = [float(k["speed"]) if "speed" in k else None for k in motion]
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"{where}.motion: {exc!r}") from None
        _check(min(times) <= 1e-9 and max(times) >= duration - 1e-9,
               f"agents.{obj.id}.motion", f"must cover [0, {duration}] s")
        t, p, v = resample(times, poses, speeds, duration)
        agents.append(AgentScript(obj.moved(p[0], v[0]), t, p, v))
    return Scenario(lanes, statics, ego, tuple(agents), _pose(doc["target"], "target"),
                    float(doc["speed_limit"]), duration, name)


def load_scenario(path, stiffness: dict | None = None) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: top level must be an object")
    return scenario_from_dict(doc, stiffness, name=path.stem)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "map": {
            "lanes": [{"id": ln.id, "centerline": [list(p) for p in ln.centerline], "width": ln.width,
                       "successors": list(ln.successors)} for ln in sc.lanes.lanes],
            "static_objects": [{"id": s.id, "kind": s.kind, "geometry": [list(p) for p in s.geometry],
                                "width": s.width, "stiffness": s.stiffness} for s in sc.statics],
        },
        "ego": _dynamic_json(sc.ego),
        "agents": [{**{k: v for k, v in _dynamic_json(a.obj).items() if k not in ("pose", "speed")},
                    "motion": [{"t": t, **_pose_json(p), "speed": v}
                               for t, p, v in zip(a.times, a.poses, a.speeds)]}
                   for a in sc.agents],
        "target": _pose_json(sc.target),
        "speed_limit": sc.speed_limit,
        "duration": sc.duration,
    }


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1))


def fixture_names() -> list[str]:
    """Names of the scenarios shipped with the package."""
    root = resources.files("riskplan") / "data" / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> Path:
    """A path to a scenario file, or the name of a shipped fixture."""
    p = Path(ref)
    if p.exists():
        return p
    fx = resources.files("riskplan") / "data" / "scenarios" / f"{ref}.json"
    if fx.is_file():
        return Path(str(fx))
    raise FileNotFoundError(f"no scenario file or fixture named {ref!r}")
