"""Slice-and-select trajectory planning over a risk stack.

Candidate cubic Bezier paths are cut into time slices according to the ego
speed; slice j is scored only against risk frame j.  Each path gets the lowest
slice speed, and the path with the highest speed wins.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, wrap_angle
from .params import PlannerParams
from .riskfield import RiskGrid, RiskStack
from .scenario import DynamicObject, LaneGraph

TICK = 0.1
JERK = 2.0
EXTEND_MARGIN = 1.1
EXTEND_STEPS = 6
STOP_MARGIN = 1.0
EMERGENCY_JERK = 10.0
SNAP = 1e-3  # m/s; the first-order ramp would otherwise only approach its target


class PlanningError(ValueError):
    pass


def bezier(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)[:, None]
    w = 1.0 - u
    return w ** 3 * ctrl[0] + 3 * w * w * u * ctrl[1] + 3 * w * u * u * ctrl[2] + u ** 3 * ctrl[3]


def bezier_derivatives(ctrl: np.ndarray, u: np.ndarray):
    u = np.asarray(u, dtype=float)[:, None]
    w = 1.0 - u
    d1 = 3 * (w * w * (ctrl[1] - ctrl[0]) + 2 * w * u * (ctrl[2] - ctrl[1]) + u * u * (ctrl[3] - ctrl[2]))
    d2 = 6 * (w * (ctrl[2] - 2 * ctrl[1] + ctrl[0]) + u * (ctrl[3] - 2 * ctrl[2] + ctrl[1]))
    return d1, d2


@dataclass(frozen=True, eq=False)
class CandidatePath:
    index: int
    offset: float
    control: np.ndarray  # (4, 2)
    s: np.ndarray  # arc length of each sample
    points: np.ndarray  # (N, 2)
    headings: np.ndarray
    curvature: np.ndarray  # signed, 1/m

    @classmethod
    def from_control(cls, index: int, offset: float, control, spacing: float = 0.25) -> "CandidatePath":
        control = np.asarray(control, dtype=float)
        dense_u = np.linspace(0.0, 1.0, 4001)
        dense = bezier(control, dense_u)
        cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
        total = cum[-1]
        n = max(1, int(math.ceil(total / spacing - 1e-9)))
        s = np.linspace(0.0, total, n + 1)
        u = np.interp(s, cum, dense_u)
        pts = bezier(control, u)
        pts[0] = control[0]
        d1, d2 = bezier_derivatives(control, u)
        speed = np.hypot(d1[:, 0], d1[:, 1])
        kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.maximum(speed, 1e-12) ** 3
        return cls(index, offset, control, s, pts, np.arctan2(d1[:, 1], d1[:, 0]), kappa)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def pose_at(self, s: float) -> Pose2:
        s = min(max(s, 0.0), self.length)
        k = min(int(np.searchsorted(self.s, s, side="right")) - 1, len(self.s) - 2)
        u = (s - self.s[k]) / (self.s[k + 1] - self.s[k])
        p = self.points[k] + u * (self.points[k + 1] - self.points[k])
        h = self.headings[k] + u * wrap_angle(self.headings[k + 1] - self.headings[k])
        return Pose2(p[0], p[1], h)

    def curvature_at(self, s: float) -> float:
        return float(np.interp(min(max(s, 0.0), self.length), self.s, self.curvature))


@dataclass(frozen=True)
class PathSlice:
    parent: int
    index: int
    indices: np.ndarray  # sample indices into the parent path
    points: np.ndarray

    def __eq__(self, other):
        return (self.parent, self.index) == (other.parent, other.index) and np.array_equal(self.indices, other.indices)


@dataclass(frozen=True)
class RoadFrame:
    """Reference centerline under the ego plus the drivable lateral interval around it."""

    lane_id: str
    path: object  # Polyline
    s: float
    lateral: float
    left: float
    right: float

    @property
    def width(self) -> float:
        return self.left - self.right


def road_frame(pose: Pose2, lanes: LaneGraph, length: float = 200.0) -> RoadFrame:
    hit = lanes.nearest(pose.x, pose.y)
    if hit is None:
        raise PlanningError("map has no lanes")
    ref, s, d = hit
    ref_heading = ref.polyline.heading_at(s)
    # lateral intervals of same-direction lanes, in the reference lane's frame
    intervals = []
    for ln in lanes.lanes:
        ls, ld = ln.polyline.project(pose.x, pose.y)
        if ln.id != ref.id:
            if not -1e-6 <= ls <= ln.polyline.length + 1e-6:
                continue
            if abs(wrap_angle(ln.polyline.heading_at(ls) - ref_heading)) > math.pi / 4:
                continue
        c = d - ld
        intervals.append((c - ln.width / 2, c + ln.width / 2))
    intervals.sort()
    right, left = -ref.width / 2, ref.width / 2
    grown = True
    while grown:
        grown = False
        for lo, hi in intervals:
            if lo <= left + 1e-6 and hi >= right - 1e-6 and (lo < right or hi > left):
                right, left = min(right, lo), max(left, hi)
                grown = True
    if not right - 1e-9 <= d <= left + 1e-9:
        raise PlanningError(f"ego is off the road (lateral {d:.2f} m from lane {ref.id})")
    return RoadFrame(ref.id, lanes.chain(ref, s + length), s, d, left, right)


def path_offsets(n: int, drivable_width: float, ego_width: float) -> np.ndarray:
    """n endpoint offsets spread uniformly over +-(drivable_width - ego_width) / 2, right to left."""
    half = max(0.0, drivable_width / 2 - ego_width / 2)
    if n == 1:
        return np.zeros(1)
    return np.linspace(-half, half, n)


def lookahead(speed: float, pp: PlannerParams) -> float:
    return max(pp.min_lookahead, speed * pp.frames * pp.dt)


def sample_paths(ego: DynamicObject, lanes: LaneGraph, target: Pose2 | None = None,
                 pp: PlannerParams = PlannerParams(), n: int | None = None) -> list[CandidatePath]:
    """Cubic Beziers from the ego pose to laterally offset points on the reference centerline."""
    n = pp.n_paths if n is None else n
    if n < 1 or n % 2 == 0:
        raise PlanningError("path count must be odd and >= 1")
    L = lookahead(ego.speed, pp)
    frame = road_frame(ego.pose, lanes, 2.0 * L + 10.0)
    total_width = frame.left - frame.right
    offsets = path_offsets(n, total_width, ego.width)
    p0 = np.array([ego.pose.x, ego.pose.y])
    h0 = ego.pose.heading
    u0 = np.array([math.cos(h0), math.sin(h0)])
    v2 = ego.speed * ego.speed
    paths = []
    for i, d in enumerate(offsets):
        # stretch wide swerves until they fit the lateral-acceleration bound at the current speed
        reach = math.sqrt(6.0 * abs(float(d) - frame.lateral) * v2 / pp.a_lat_max) * EXTEND_MARGIN
        li = max(L, reach)
        for _ in range(EXTEND_STEPS):
            end = frame.path.offset_point(frame.s + li, float(d))
            p3 = np.array([end.x, end.y])
            p2 = p3 - li / 3 * np.array([math.cos(end.heading), math.sin(end.heading)])
            path = CandidatePath.from_control(i, float(d), np.array([p0, p0 + li / 3 * u0, p2, p3]),
                                              pp.sample_spacing)
            if v2 * float(np.abs(path.curvature).max()) <= pp.a_lat_max:
                break
            li *= EXTEND_MARGIN
        paths.append(path)
    return paths


def slice_path(path: CandidatePath, speed: float, dt: float = 0.5, m: int = 7, v_floor: float = 1.0) -> list[PathSlice]:
    if m < 1:
        raise ValueError("need at least one slice")
    bounds = max(speed, v_floor) * dt * np.arange(1, m)
    which = np.minimum(np.searchsorted(bounds, path.s, side="right"), m - 1)
    slices = []
    for j in range(m):
        idx = np.flatnonzero(which == j)
        slices.append(PathSlice(path.index, j, idx, path.points[idx]))
    return slices


def max_risk(sl: PathSlice, grid: RiskGrid, half_width: float, outside: float = 100.0) -> float:
    """Largest cell energy within half_width + one cell of any slice point.

    Corridor cells outside the grid count as `outside` (unknown space is unsafe).
    """
    if len(sl.points) == 0:
        return 0.0
    spec = grid.spec
    res = spec.resolution
    r = half_width + res
    r2 = r * r
    px, py = sl.points[:, 0], sl.points[:, 1]
    i0 = int(math.floor((px.min() - r - spec.origin.x) / res)) - 1
    i1 = int(math.floor((px.max() + r - spec.origin.x) / res)) + 2
    j0 = int(math.floor((py.min() - r - spec.origin.y) / res)) - 1
    j1 = int(math.floor((py.max() + r - spec.origin.y) / res)) + 2
    ci = np.arange(i0, i1)
    cj = np.arange(j0, j1)
    cx = spec.origin.x + (ci + 0.5) * res
    cy = spec.origin.y + (cj + 0.5) * res
    dx = cx[:, None, None] - px[None, None, :]
    dy = cy[None, :, None] - py[None, None, :]
    hit = ((dx * dx + dy * dy) <= r2).any(axis=2)
    if not hit.any():
        return 0.0
    ii, jj = np.nonzero(hit)
    ii, jj = ci[ii], cj[jj]
    inside = (ii >= 0) & (ii < spec.nx) & (jj >= 0) & (jj < spec.ny)
    if not inside.all():
        return float(outside)
    return float(grid.energies[ii, jj].max())


def speed_from_risk(r: float, s_max: float, r_free: float = 5.0, r_stop: float = 60.0) -> float:
    """Piecewise-linear risk-to-speed map: s_max up to r_free, 0 from r_stop."""
    if r <= r_free:
        return s_max
    if r >= r_stop:
        return 0.0
    return s_max * (r_stop - r) / (r_stop - r_free)


@dataclass(frozen=True)
class PathScore:
    index: int
    offset: float
    speed: float
    slice_speeds: tuple
    slice_risks: tuple
    feasible: bool


@dataclass(frozen=True, eq=False)
class PlannedTrajectory:
    path: CandidatePath
    desired_speed: float
    slice_speeds: tuple
    times: np.ndarray
    poses: tuple
    speeds: np.ndarray
    a_lon: np.ndarray
    a_lat: np.ndarray
    emergency: bool = False
    scores: tuple = field(default=(), repr=False)
    start_time: float = 0.0

    @property
    def index(self) -> int:
        return self.path.index

    def to_record(self) -> dict:
        return {
            "time": self.start_time,
            "path_index": self.path.index,
            "offset": self.path.offset,
            "desired_speed": self.desired_speed,
            "emergency": self.emergency,
            "control_points": self.path.control.tolist(),
            "states": [[float(t), p.x, p.y, p.heading, float(v), float(al), float(at)]
                       for t, p, v, al, at in zip(self.times, self.poses, self.speeds, self.a_lon, self.a_lat)],
        }


def score_path(path: CandidatePath, stack: RiskStack, speed: float, s_max: float, half_width: float,
               pp: PlannerParams, e_max: float = 100.0) -> PathScore:
    m = len(stack)
    slices = slice_path(path, speed, stack.dt, m, pp.v_floor)
    speeds, risks = [], []
    for sl in slices:
        r = max_risk(sl, stack[sl.index], half_width, outside=e_max)
        v = min(speed_from_risk(r, s_max, pp.r_free, pp.r_stop), s_max)
        if len(sl.indices):
            kmax = float(np.abs(path.curvature[sl.indices]).max())
            if kmax > 0:
                v = min(v, math.sqrt(pp.a_lat_max / kmax))
        speeds.append(v)
        risks.append(r)
    kmax_path = float(np.abs(path.curvature).max())
    # the ego cannot follow this path at its current speed without exceeding the lateral bound
    feasible = speed * speed * kmax_path <= pp.a_lat_max + 1e-9
    best = min(speeds) if feasible else 0.0
    return PathScore(path.index, path.offset, best, tuple(speeds), tuple(risks), feasible)


def select(scores) -> int:
    """argmax of path speed; ties go to the smallest |offset|, then the lowest index."""
    return min(scores, key=lambda sc: (-sc.speed, abs(sc.offset), sc.index)).index


def speed_profile(v0: float, a0: float, target: float, duration: float, pp: PlannerParams,
                  emergency: bool = False, brake: float | None = None):
    """Jerk-limited first-order ramp from (v0, a0) toward `target`; returns (v, a) per tick.

    In an emergency the ramp brakes at `brake` (default a_emergency) down to a stop.
    """
    n = int(round(duration / TICK))
    v = np.empty(n + 1)
    a = np.empty(n + 1)
    v[0], a[0] = v0, a0
    if emergency:
        lo = -min(pp.a_emergency if brake is None else brake, pp.a_emergency)
    else:
        lo = -pp.a_brake
    jerk = EMERGENCY_JERK if emergency else JERK
    for k in range(n):
        if emergency:
            want = lo
        else:
            want = min(max(pp.speed_gain * (target - v[k]), lo), pp.a_accel)
        ak = a[k] + min(max(want - a[k], -jerk * TICK), jerk * TICK)
        ak = min(max(ak, -pp.a_emergency), pp.a_accel)
        vk = v[k] + ak * TICK
        if vk < 0.0:
            vk, ak = 0.0, -v[k] / TICK
        if not emergency and vk != target and ((v[k] - target) * (vk - target) <= 0 or abs(vk - target) < SNAP):
            vk = target
            ak = (vk - v[k]) / TICK
        a[k + 1] = ak
        v[k + 1] = vk
    a[0] = a[1] if n else a0
    return v, a


def generate_trajectory(path: CandidatePath, v0: float, a0: float, target: float, pp: PlannerParams,
                        emergency: bool = False, start_time: float = 0.0, scores=(), slice_speeds=(),
                        brake: float | None = None):
    horizon = pp.frames * pp.dt
    if emergency:
        # run the stop to completion even when it outlasts the stack horizon
        decel = min(pp.a_emergency if brake is None else brake, pp.a_emergency)
        horizon = max(horizon, math.ceil((v0 / decel + 1.0) / TICK) * TICK)
    v, a = speed_profile(v0, a0, target, horizon, pp, emergency, brake)
    s = np.concatenate([[0.0], np.cumsum(0.5 * (v[:-1] + v[1:]) * TICK)])
    poses = tuple(path.pose_at(x) for x in s)
    kappa = np.array([path.curvature_at(x) for x in s])
    times = start_time + TICK * np.arange(len(v))
    return PlannedTrajectory(path, target, tuple(slice_speeds), times, poses, v, a, v * v * kappa,
                             emergency, tuple(scores), start_time)


def plan(ego: DynamicObject, stack: RiskStack, lanes: LaneGraph, target: Pose2 | None, s_max: float,
         pp: PlannerParams = PlannerParams(), n: int | None = None, accel: float = 0.0,
         start_time: float = 0.0, workers: int = 1, e_max: float = 100.0) -> PlannedTrajectory:
    """Score every candidate path against the stack and return the fastest safe one."""
    paths = sample_paths(ego, lanes, target, pp, n)
    half_width = ego.width / 2
    run = lambda p: score_path(p, stack, ego.speed, s_max, half_width, pp, e_max)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            scores = list(ex.map(run, paths))
    else:
        scores = [run(p) for p in paths]
    best = select(scores)
    if scores[best].speed <= 0.0:
        lat = _lateral(ego, lanes)
        current = min(paths, key=lambda p: (not scores[p.index].feasible, abs(p.offset - lat), p.index))
        return generate_trajectory(current, ego.speed, accel, 0.0, pp, emergency=True, start_time=start_time,
                                   scores=scores, brake=stopping_decel(ego.speed, scores[current.index], pp))
    sc = scores[best]
    return generate_trajectory(paths[best], ego.speed, accel, sc.speed, pp, start_time=start_time,
                               scores=scores, slice_speeds=sc.slice_speeds)


def stopping_decel(speed: float, score: PathScore, pp: PlannerParams) -> float:
    """Gentlest braking in [a_brake, a_emergency] that stops STOP_MARGIN short of the first blocked slice."""
    blocked = [j for j, v in enumerate(score.slice_speeds) if v <= 0.0]
    if not blocked:
        return pp.a_emergency
    room = max(speed, pp.v_floor) * pp.dt * blocked[0] - STOP_MARGIN
    if room <= 0.0:
        return pp.a_emergency
    need = speed * speed / (2.0 * room)
    return min(max(need, pp.a_brake), pp.a_emergency)


def _lateral(ego: DynamicObject, lanes: LaneGraph) -> float:
    hit = lanes.nearest(ego.pose.x, ego.pose.y)
    return 0.0 if hit is None else hit[2]


def ttc_baseline(ego: DynamicObject, objects, lanes: LaneGraph):
    """Time to collision with the nearest same-lane lead object, or None without closing speed."""
    hit = lanes.nearest(ego.pose.x, ego.pose.y)
    if hit is None:
        return None
    lane, s_ego, _ = hit
    best = None
    for obj in objects:
        s, d = lane.polyline.project(obj.pose.x, obj.pose.y)
        if abs(d) > lane.width / 2 or s <= s_ego:
            continue
        if best is None or s < best[0]:
            best = (s, obj)
    if best is None:
        return None
    s, obj = best
    along = lane.polyline.heading_at(s)
    closing = ego.speed * math.cos(wrap_angle(ego.pose.heading - along)) - obj.speed * math.cos(
        wrap_angle(obj.pose.heading - along))
    if closing <= 0:
        return None
    gap = max(0.0, (s - s_ego) - ego.front - obj.rear)
    return gap / closing


def write_trajectories(trajs, path) -> None:
    with open(path, "w") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_record()) + "\n")
