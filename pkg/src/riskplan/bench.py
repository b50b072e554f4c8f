"""Wall-clock benchmark for stack building and planning on a synthetic scene."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2, rectangle
from .params import Params, load_params
from .planner import plan
from .predictor import constant_velocity
from .riskfield import GridSpec, build_risk_stack
from .scenario import DynamicObject, load_scenario, resolve_scenario

STACK_BUDGET_MS = 100.0
PLAN_BUDGET_MS = 30.0
SCALING_LIMIT = 2.5


@dataclass(frozen=True)
class Timing:
    median: float
    p95: float
    n: int

    @classmethod
    def of(cls, samples_ms) -> "Timing":
        a = np.asarray(samples_ms)
        return cls(float(np.median(a)), float(np.percentile(a, 95)), len(a))


@dataclass(frozen=True)
class BenchRow:
    nx: int
    ny: int
    objects: int
    workers: int
    stack: Timing
    plan: Timing
    equal: bool  # stack identical to the single-worker build


def _ego(speed: float = 10.0) -> DynamicObject:
    return DynamicObject("ego", "vehicle", 1500.0, Pose2(0.0, 0.0, 0.0), speed, tuple(map(tuple, rectangle(4.5, 1.8))), 1.8)


def synthetic_objects(n: int, seed: int = 7) -> list[DynamicObject]:
    """n vehicles scattered over both lanes ahead of and beside the ego."""
    rng = np.random.default_rng(seed)
    box = tuple(map(tuple, rectangle(4.5, 1.8)))
    objs = []
    for i in range(n):
        lane_y = 0.0 if rng.random() < 0.5 else 3.5
        pose = Pose2(float(rng.uniform(8.0, 95.0)), lane_y + float(rng.uniform(-0.4, 0.4)), 0.0)
        objs.append(DynamicObject(f"veh{i:02d}", "vehicle", 1500.0, pose, float(rng.uniform(0.0, 12.0)), box, 1.8))
    return objs


class Workload:
    """A fixed scene on the shipped two-lane map; grid size and object count vary."""

    def __init__(self, nx: int, ny: int, n_objects: int, params: Params | None = None):
        self.params = params if params is not None else load_params()
        base = load_scenario(resolve_scenario("free_drive"))
        self.lanes, self.statics, self.speed_limit = base.lanes, base.statics, base.speed_limit
        self.ego = _ego()
        self.objects = synthetic_objects(n_objects)
        h = self.params.predictor.horizon
        self.preds = {o.id: constant_velocity(o, h) for o in self.objects}
        res = self.params.grid.resolution
        self.spec = GridSpec(Pose2(-0.2 * nx * res, -0.5 * ny * res + 1.75, 0.0), nx, ny, res)

    def stack(self, workers: int = 1):
        pp = self.params.planner
        return build_risk_stack(self.objects, self.statics, self.preds, self.ego, self.spec, self.params.risk,
                                pp.frames, pp.dt, workers)

    def plan(self, stack):
        return plan(self.ego, stack, self.lanes, None, self.speed_limit, self.params.planner,
                    e_max=self.params.risk.potential.E_max)


def _time(fn, iterations: int):
    out = []
    result = None
    for _ in range(iterations):
        t0 = time.perf_counter()
        result = fn()
        out.append(1e3 * (time.perf_counter() - t0))
    return Timing.of(out), result


def bench_config(nx: int, ny: int, n_objects: int, workers: int = 1, iterations: int = 50,
                 params: Params | None = None) -> BenchRow:
    w = Workload(nx, ny, n_objects, params)
    reference = w.stack(1)
    st, stack = _time(lambda: w.stack(workers), iterations)
    pt, _ = _time(lambda: w.plan(stack), iterations)
    equal = all(a == b for a, b in zip(reference.frames, stack.frames))
    return BenchRow(nx, ny, n_objects, workers, st, pt, equal)


def bench(grids=((240, 80),), objects=(10,), workers=(1,), iterations: int = 50,
          params: Params | None = None) -> list[BenchRow]:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    return [bench_config(nx, ny, n, k, iterations, params)
            for nx, ny in grids for n in objects for k in workers]


def scaling_ratio(nx: int, ny: int, n_objects: int = 10, iterations: int = 50) -> float:
    """Median stack time at twice the cells divided by the median at the base size."""
    base = bench_config(nx, ny, n_objects, 1, iterations).stack.median
    doubled = bench_config(2 * nx, ny, n_objects, 1, iterations).stack.median
    return doubled / base


def budget_warnings(rows) -> list[str]:
    out = []
    for r in rows:
        if (r.nx, r.ny) != (240, 80) or r.objects != 10:
            continue
        if r.stack.median > STACK_BUDGET_MS:
            out.append(f"stack median {r.stack.median:.1f} ms exceeds {STACK_BUDGET_MS:.0f} ms ({r.workers} workers)")
        if r.plan.median > PLAN_BUDGET_MS:
            out.append(f"plan median {r.plan.median:.1f} ms exceeds {PLAN_BUDGET_MS:.0f} ms ({r.workers} workers)")
    return out


def format_table(rows) -> str:
    head = f"{'grid':>9} {'objs':>4} {'wrk':>3} {'stack med':>9} {'stack p95':>9} {'plan med':>8} {'plan p95':>8} {'n':>4}  equal"
    lines = [head]
    for r in rows:
        lines.append(f"{r.nx:>4}x{r.ny:<4} {r.objects:>4} {r.workers:>3} {r.stack.median:>9.2f} {r.stack.p95:>9.2f} "
                     f"{r.plan.median:>8.2f} {r.plan.p95:>8.2f} {r.stack.n:>4}  {'yes' if r.equal else 'NO'}")
    return "\n".join(lines)
