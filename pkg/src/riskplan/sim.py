"""Closed-loop scenario simulation, metrics, and the TTC comparison harness."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Pose2, convex_intersect, polygon_distance
from .params import Params, load_params
from .planner import PlannedTrajectory, PlanningError, generate_trajectory, plan, sample_paths, ttc_baseline
from .predictor import (HistoryRecorder, InsufficientHistory, constant_velocity, dump_predictions,
                        extract_risk_features, learned_predictor, predict)
from .riskfield import GridSpec, build_risk_stack, write_grid, write_grid_csv
from .scenario import DynamicObject, Scenario

DECEL_EPS = 0.1  # m/s^2; smaller braking is treated as noise when timing the first deceleration


class SimulationError(RuntimeError):
    def __init__(self, t: float, cause: Exception):
        super().__init__(f"t={t:.1f} s: {cause}")
        self.time = t
        self.cause = cause


@dataclass(frozen=True)
class SimConfig:
    tick: float = 0.1
    replan: float = 0.5
    params_path: str | None = None
    workers: int = 1
    out_dir: str | None = None
    dump_grids: bool = False
    policy: str = "risk"  # or "ttc"

    def __post_init__(self):
        ratio = self.replan / self.tick
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("replan period must be an integer multiple of the tick")
        if self.policy not in ("risk", "ttc"):
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass
class WorldState:
    time: float
    ego: DynamicObject
    agents: list
    accel: float = 0.0
    curvature: float = 0.0
    a_lat: float = 0.0
    trajectory: PlannedTrajectory | None = None


@dataclass
class RunMetrics:
    scenario: str
    policy: str
    min_distance: float = math.inf
    max_abs_a_lon: float = 0.0
    max_abs_a_lat: float = 0.0
    completion_time: float = 0.0
    reached_target: bool = False
    collision: bool = False
    first_deceleration: float | None = None
    emergency_stops: int = 0
    timings_ms: dict = field(default_factory=lambda: {"predict": [], "stack": [], "plan": []})
    series: dict = field(default_factory=lambda: {k: [] for k in SERIES_KEYS})
    agent_series: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("timings_ms", "series", "agent_series")}
        out["min_speed"] = min(self.series["speed"]) if self.series["speed"] else None
        out["max_speed"] = max(self.series["speed"]) if self.series["speed"] else None
        out["max_abs_lateral"] = max(map(abs, self.series["lateral"])) if self.series["lateral"] else None
        # strict JSON: no inf/nan, plain floats
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else
                    float(v) if isinstance(v, float) else v) for k, v in out.items()}

    def timing_summary(self) -> dict:
        return {k: {"median": float(np.median(v)) if v else None, "p95": float(np.percentile(v, 95)) if v else None,
                    "count": len(v)} for k, v in self.timings_ms.items()}


SERIES_KEYS = ("t", "x", "y", "heading", "speed", "a_lon", "a_lat", "lateral", "station", "path_index",
               "desired_speed", "ttc")


def _lane_coords(ego: DynamicObject, sc: Scenario):
    hit = sc.lanes.nearest(ego.pose.x, ego.pose.y)
    if hit is None:
        return 0.0, 0.0
    lane, s, d = hit
    return s, d


def polygon_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between two convex polygons; 0 when they touch or overlap."""
    if convex_intersect(a, b):
        return 0.0
    return float(min(polygon_distance(a[:, 0], a[:, 1], b).min(), polygon_distance(b[:, 0], b[:, 1], a).min()))


def initial_state(sc: Scenario) -> WorldState:
    return WorldState(0.0, sc.ego, sc.agents_at(0.0))


def _track(state: WorldState, traj: PlannedTrajectory, tick: float, params: Params):
    """Pure-pursuit steering on the planned path with a kinematic bicycle; returns (v, curvature)."""
    ego = state.ego
    k = int(round((state.time + tick - traj.start_time) / tick))
    v_new = float(traj.speeds[min(max(k, 0), len(traj.speeds) - 1)])
    path = traj.path
    tp = params.tracker
    d2 = (path.points[:, 0] - ego.pose.x) ** 2 + (path.points[:, 1] - ego.pose.y) ** 2
    s_here = float(path.s[int(np.argmin(d2))])
    ld = max(tp.min_lookahead, ego.speed * tp.lookahead_time)
    aim = path.pose_at(s_here + ld)
    lo, la = ego.pose.to_local(aim.x, aim.y)
    dist2 = lo * lo + la * la
    if s_here + ld > path.length:
        # past the path end, keep aiming along the final tangent
        extra = s_here + ld - path.length
        ax = aim.x + extra * math.cos(aim.heading)
        ay = aim.y + extra * math.sin(aim.heading)
        lo, la = ego.pose.to_local(ax, ay)
        dist2 = lo * lo + la * la
    kappa = 2.0 * la / dist2 if dist2 > 1e-9 else 0.0
    max_k = math.tan(math.radians(35)) / tp.wheelbase
    v_ref = max(v_new, ego.speed)
    if v_ref > 0:
        max_k = min(max_k, params.planner.a_lat_max / (v_ref * v_ref))
    kappa = min(max(kappa, -max_k), max_k)
    dk = tp.curvature_rate
    kappa = min(max(kappa, state.curvature - dk), state.curvature + dk)
    kappa = min(max(kappa, -max_k), max_k)
    return v_new, kappa


def _advance(pose: Pose2, v0: float, v1: float, kappa: float, tick: float) -> Pose2:
    """Exact constant-curvature motion over one tick at the mean speed."""
    ds = 0.5 * (v0 + v1) * tick
    h = pose.heading
    if abs(kappa) < 1e-12:
        return Pose2(pose.x + ds * math.cos(h), pose.y + ds * math.sin(h), h)
    dh = kappa * ds
    return Pose2(pose.x + (math.sin(h + dh) - math.sin(h)) / kappa,
                 pose.y - (math.cos(h + dh) - math.cos(h)) / kappa, h + dh)


def step(state: WorldState, sc: Scenario, params: Params, tick: float = 0.1) -> WorldState:
    """Advance agents along their scripts and the ego along its current trajectory by one tick."""
    t1 = state.time + tick
    agents = sc.agents_at(t1)
    ego = state.ego
    if state.trajectory is None:
        return replace(state, time=t1, agents=agents, accel=0.0, a_lat=0.0)
    v1, kappa = _track(state, state.trajectory, tick, params)
    pose = _advance(ego.pose, ego.speed, v1, kappa, tick)
    return replace(state, time=t1, agents=agents, ego=ego.moved(pose, v1), accel=(v1 - ego.speed) / tick,
                   curvature=kappa, a_lat=v1 * v1 * kappa)


def _ttc_trajectory(state: WorldState, sc: Scenario, params: Params, braking: bool) -> PlannedTrajectory:
    """Lane-keeping path with a reactive TTC braking rule for the longitudinal profile."""
    pp = params.planner
    path = sample_paths(state.ego, sc.lanes, sc.target, pp, n=1)[0]
    if braking:
        return generate_trajectory(path, state.ego.speed, state.accel, 0.0, pp, emergency=True,
                                   start_time=state.time)
    return generate_trajectory(path, state.ego.speed, state.accel, sc.speed_limit, pp, start_time=state.time)


def _target_reached(ego: DynamicObject, target: Pose2) -> bool:
    dx, dy = ego.pose.x - target.x, ego.pose.y - target.y
    return dx * math.cos(target.heading) + dy * math.sin(target.heading) >= 0.0


class Simulator:
    def __init__(self, sc: Scenario, config: SimConfig = SimConfig(), params: Params | None = None):
        self.sc = sc
        self.config = config
        self.params = params if params is not None else load_params(config.params_path)
        self.history = HistoryRecorder()
        self.state = initial_state(sc)
        self.metrics = RunMetrics(sc.name, config.policy)
        self.trajectories: list[PlannedTrajectory] = []
        self.predictions: list = []
        self.stacks: list = []
        self.first_stack = None
        self._ttc_braking = False

    def _predict(self, t: float):
        hp = self.params.predictor
        model = learned_predictor()
        preds = {}
        for obj in self.state.agents:
            h = self.history.buffer(obj.id)
            feats = None
            if model is not None:
                feats = [extract_risk_features(obj, self.state.agents + list(self.sc.statics), self.params.risk,
                                               hp.feature_spacing)]
            try:
                preds[obj.id] = predict(obj, h, self.sc.lanes, hp.horizon, feats,
                                        heading_tolerance=hp.heading_tolerance)
            except InsufficientHistory:
                preds[obj.id] = constant_velocity(obj, hp.horizon, t)
        return preds

    def _replan(self):
        st = self.state
        p = self.params
        pp = p.planner
        m = self.metrics
        t0 = time.perf_counter()
        preds = self._predict(st.time)
        t1 = time.perf_counter()
        spec = GridSpec.around(st.ego.pose, p.grid)
        stack = build_risk_stack(st.agents, self.sc.statics, preds, st.ego, spec, p.risk, pp.frames, pp.dt,
                                 self.config.workers)
        t2 = time.perf_counter()
        traj = plan(st.ego, stack, self.sc.lanes, self.sc.target, self.sc.speed_limit, pp, accel=st.accel,
                    start_time=st.time, workers=self.config.workers, e_max=p.risk.potential.E_max)
        t3 = time.perf_counter()
        m.timings_ms["predict"].append(1e3 * (t1 - t0))
        m.timings_ms["stack"].append(1e3 * (t2 - t1))
        m.timings_ms["plan"].append(1e3 * (t3 - t2))
        m.emergency_stops += int(traj.emergency)
        self.predictions.append((st.time, list(preds.values())))
        if self.first_stack is None:
            self.first_stack = (st.time, stack)
        if self.config.dump_grids:
            self.stacks.append((st.time, stack))
        return traj

    def _log(self):
        st, m, sc = self.state, self.metrics, self.sc
        ego_poly = st.ego.polygon()
        for a in st.agents:
            gap = polygon_gap(ego_poly, a.polygon())
            m.min_distance = min(m.min_distance, gap)
            if gap == 0.0:
                m.collision = True
            m.agent_series.setdefault(a.id, []).append((st.time, a.pose.x, a.pose.y, a.pose.heading, a.speed))
        s, d = _lane_coords(st.ego, sc)
        traj = st.trajectory
        ttc = ttc_baseline(st.ego, st.agents, sc.lanes)
        row = (st.time, st.ego.pose.x, st.ego.pose.y, st.ego.pose.heading, st.ego.speed, st.accel, st.a_lat, d, s,
               -1 if traj is None else traj.index, math.nan if traj is None else traj.desired_speed,
               math.nan if ttc is None else ttc)
        for k, v in zip(SERIES_KEYS, row):
            m.series[k].append(v)
        m.max_abs_a_lon = max(m.max_abs_a_lon, abs(st.accel))
        m.max_abs_a_lat = max(m.max_abs_a_lat, abs(st.a_lat))
        if m.first_deceleration is None and st.accel < -DECEL_EPS:
            m.first_deceleration = st.time

    def run(self) -> RunMetrics:
        cfg, sc = self.config, self.sc
        every = int(round(cfg.replan / cfg.tick))
        n_ticks = int(round(sc.duration / cfg.tick))
        for a in self.state.agents:
            self.history.record(0.0, a)
        self._log()
        for k in range(n_ticks):
            st = self.state
            try:
                if cfg.policy == "risk":
                    if k % every == 0:
                        st.trajectory = self._replan()
                        self.trajectories.append(st.trajectory)
                else:
                    ttc = ttc_baseline(st.ego, st.agents, sc.lanes)
                    braking = ttc is not None and ttc < self.params.planner.ttc_threshold
                    if k % every == 0 or braking != self._ttc_braking:
                        st.trajectory = _ttc_trajectory(st, sc, self.params, braking)
                        self.trajectories.append(st.trajectory)
                        self._ttc_braking = braking
                self.state = step(st, sc, self.params, cfg.tick)
            except (PlanningError, ValueError) as exc:
                raise SimulationError(st.time, exc) from exc
            self.state.time = round(self.state.time, 10)
            for a in self.state.agents:
                self.history.record(self.state.time, a)
            self._log()
            if _target_reached(self.state.ego, sc.target):
                self.metrics.reached_target = True
                break
        self.metrics.completion_time = self.state.time
        if cfg.out_dir:
            self.write(Path(cfg.out_dir))
        return self.metrics

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        m = self.metrics
        (out / "metrics.json").write_text(json.dumps(m.summary(), indent=1, sort_keys=True))
        (out / "timings.json").write_text(json.dumps(m.timing_summary(), indent=1, sort_keys=True))
        with open(out / "timeseries.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_KEYS)
            for row in zip(*(m.series[k] for k in SERIES_KEYS)):
                w.writerow([repr(float(v)) for v in row])
        with open(out / "trajectories.jsonl", "w") as fh:
            for traj in self.trajectories:
                fh.write(json.dumps(traj.to_record()) + "\n")
        pred_path = out / "predictions.jsonl"
        pred_path.unlink(missing_ok=True)
        for t, preds in self.predictions:
            dump_predictions(preds, pred_path, t)
        if self.stacks:
            gdir = out / "grids"
            gdir.mkdir(exist_ok=True)
            for t, stack in self.stacks:
                for j, grid in enumerate(stack.frames):
                    write_grid(grid, gdir / f"cycle_{t:07.2f}_frame_{j}.rskg")
            t0, first = self.stacks[0]
            for j, grid in enumerate(first.frames):
                write_grid_csv(grid, gdir / f"cycle_{t0:07.2f}_frame_{j}.csv")


def run_scenario(sc: Scenario, config: SimConfig = SimConfig(), params: Params | None = None) -> RunMetrics:
    return Simulator(sc, config, params).run()


def first_deceleration(metrics: RunMetrics, eps: float = DECEL_EPS):
    for t, a in zip(metrics.series["t"], metrics.series["a_lon"]):
        if a < -eps:
            return t
    return None


def compare_ttc(sc: Scenario, config: SimConfig = SimConfig(), params: Params | None = None) -> dict:
    """Run the scenario under the risk planner and under the TTC braking policy."""
    params = params if params is not None else load_params(config.params_path)
    report = {"scenario": sc.name}
    for policy in ("risk", "ttc"):
        cfg = replace(config, policy=policy, out_dir=None if config.out_dir is None else str(Path(config.out_dir) / policy))
        m = run_scenario(sc, cfg, params)
        report[policy] = {
            "first_deceleration": first_deceleration(m),
            "min_gap": m.min_distance if math.isfinite(m.min_distance) else None,  # no object ever seen
            "collision": m.collision,
            "peak_abs_a_lon": m.max_abs_a_lon,
            "min_speed": min(m.series["speed"]),
        }
    r, t = report["risk"]["first_deceleration"], report["ttc"]["first_deceleration"]
    report["lead_time"] = None if r is None or t is None else t - r
    return report
