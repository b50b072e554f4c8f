"""Driving-risk field: point equations, grid rasterization, and the risk stack.

Every point-wise quantity goes through the same elementwise numpy kernel,
whether it is asked for one point or a whole grid block.  That is what makes
grid cells bit-identical to `total_energy_at` and rasterization independent of
how the grid is split across workers.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose2, polygon_distance, polyline_distance
from .params import FieldParams, GridParams, KineticParams, PotentialParams, StaticParams
from .scenario import DynamicObject, StaticObject

DT = 0.5
UNBOUNDED = math.inf

GRID_MAGIC = b"RSKG"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sIIIdddd")


class HorizonError(ValueError):
    pass


# --- scalar equations ----------------------------------------------------


def virtual_mass(obj: DynamicObject, p: PotentialParams) -> float:
    return obj.mass * p.T * (p.alpha * obj.speed ** p.beta + p.gamma)


def smooth(raw, e_max: float):
    """Bounded saturation applied to the raw kinetic energy: increasing, s(0)=0, sup = e_max."""
    return -e_max * np.expm1(-np.divide(raw, e_max))


def weighted_distance(d_lo: float, d_la: float, w: float) -> float:
    """Elliptic longitudinal distance; `UNBOUNDED` where |d_la| >= w."""
    if abs(d_la) >= w:
        return UNBOUNDED
    return math.sqrt(d_lo * d_lo / (1.0 - (d_la / w) ** 2))


def relative_speed(obj: DynamicObject, ego: DynamicObject | None) -> float:
    """Closing speed of obj relative to ego, projected on obj's heading, clamped at 0."""
    ux, uy = math.cos(obj.pose.heading), math.sin(obj.pose.heading)
    vx, vy = obj.speed * ux, obj.speed * uy
    if ego is not None:
        h = ego.pose.heading
        vx -= ego.speed * math.cos(h)
        vy -= ego.speed * math.sin(h)
    return max(0.0, vx * ux + vy * uy)


def _potential(dist, kmv: float, p: PotentialParams):
    dk = dist if p.k1 == 1.0 else np.power(dist, p.k1)
    with np.errstate(divide="ignore"):
        val = kmv / (dk + kmv / p.E_max)
    return np.where(dist == 0.0, p.E_max, val)


def _kinetic(px, py, obj: DynamicObject, v_r: float, mv: float, pp: PotentialParams, kp: KineticParams):
    if v_r <= kp.v_min:
        return np.zeros(np.broadcast(px, py).shape)
    lo, la = obj.pose.to_local(px, py)
    w = obj.width
    reach = v_r * kp.t
    ok = (lo > 0.0) & (np.abs(la) < w)
    with np.errstate(divide="ignore", invalid="ignore"):
        dw = np.sqrt(lo * lo / (1.0 - (la / w) ** 2))
        ok &= dw < reach
        raw = v_r * v_r / (2.0 * mv * dw * (1.0 - dw / reach))
    return np.where(ok, smooth(np.where(ok, raw, 0.0), pp.E_max), 0.0)


def _dynamic_energy(px, py, obj: DynamicObject, ego, fp: FieldParams):
    pp = fp.potential
    mv = virtual_mass(obj, pp)
    dist = polygon_distance(px, py, obj.polygon())
    e = _potential(dist, pp.k * pp.r_a * mv, pp) + _kinetic(px, py, obj, relative_speed(obj, ego), mv, pp, fp.kinetic)
    return np.where(dist > fp.cutoff, 0.0, e)


def _static_energy(px, py, sobj: StaticObject, sp: StaticParams):
    half = sp.kappa * sobj.width / 2.0
    dis = polyline_distance(px, py, sobj.points)
    return sobj.stiffness * (half - np.minimum(half, dis)) ** 2


def potential_energy(obj: DynamicObject, point, p: PotentialParams) -> float:
    x, y = point
    mv = virtual_mass(obj, p)
    return float(_potential(polygon_distance(x, y, obj.polygon()), p.k * p.r_a * mv, p))


def kinetic_energy(obj: DynamicObject, ego: DynamicObject | None, point,
                   pp: PotentialParams, kp: KineticParams) -> float:
    x, y = point
    return float(_kinetic(x, y, obj, relative_speed(obj, ego), virtual_mass(obj, pp), pp, kp))


def kinetic_raw(v_r: float, mv: float, d_w: float, t: float) -> float:
    """The unsmoothed kinetic energy expression (diverges at d_w = v_r * t)."""
    return v_r * v_r / (2.0 * mv * d_w * (1.0 - d_w / (v_r * t)))


def static_energy(sobj: StaticObject, point, sp: StaticParams) -> float:
    x, y = point
    return float(_static_energy(x, y, sobj, sp))


# --- scene evaluation ----------------------------------------------------


@dataclass(frozen=True)
class Scene:
    """Objects present at one instant.  Evaluation order is canonical (by id)."""

    dynamics: tuple = ()
    statics: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "dynamics", tuple(sorted(self.dynamics, key=lambda o: o.id)))
        object.__setattr__(self, "statics", tuple(sorted(self.statics, key=lambda o: o.id)))


def _scene_energy(px, py, scene: Scene, ego, fp: FieldParams, exclude=None):
    acc = np.zeros(np.broadcast(px, py).shape)
    for obj in scene.dynamics:
        if obj.id != exclude:
            acc = acc + _dynamic_energy(px, py, obj, ego, fp)
    for sobj in scene.statics:
        acc = acc + _static_energy(px, py, sobj, fp.static)
    return np.minimum(fp.potential.E_max, acc)


def total_energy_at(point, scene: Scene, fp: FieldParams, ego: DynamicObject | None = None,
                    exclude: str | None = None) -> float:
    x, y = point
    return float(_scene_energy(np.array([x], float), np.array([y], float), scene, ego, fp, exclude)[0])


# --- grids ----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    origin: Pose2
    nx: int
    ny: int
    resolution: float

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0 or not self.resolution > 0:
            raise ValueError("grid needs nx, ny > 0 and resolution > 0")

    @property
    def xs(self) -> np.ndarray:
        return self.origin.x + (np.arange(self.nx) + 0.5) * self.resolution

    @property
    def ys(self) -> np.ndarray:
        return self.origin.y + (np.arange(self.ny) + 0.5) * self.resolution

    def centers(self):
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def index(self, x, y):
        """Integer cell indices (may fall outside [0, n))."""
        i = np.floor((np.asarray(x) - self.origin.x) / self.resolution).astype(int)
        j = np.floor((np.asarray(y) - self.origin.y) / self.resolution).astype(int)
        return i, j

    @classmethod
    def around(cls, pose: Pose2, gp: GridParams = GridParams()) -> "GridSpec":
        """World-aligned window around `pose`, longer along the dominant heading axis."""
        c, s = math.cos(pose.heading), math.sin(pose.heading)
        mid = 0.5 * (gp.ahead - gp.behind)
        length = gp.ahead + gp.behind
        if abs(c) >= abs(s):
            cx, cy = pose.x + mid * math.copysign(1.0, c), pose.y
            wx, wy = length, gp.width
        else:
            cx, cy = pose.x, pose.y + mid * math.copysign(1.0, s)
            wx, wy = gp.width, length
        res = gp.resolution
        nx, ny = int(round(wx / res)), int(round(wy / res))
        ox = math.floor((cx - 0.5 * wx) / res) * res
        oy = math.floor((cy - 0.5 * wy) / res) * res
        return cls(Pose2(ox, oy, 0.0), nx, ny, res)


@dataclass(frozen=True, eq=False)
class RiskGrid:
    spec: GridSpec
    time: float
    energies: np.ndarray  # shape (nx, ny); [i, j] is the cell at xs[i], ys[j]

    def __eq__(self, other):
        return (isinstance(other, RiskGrid) and self.spec == other.spec and self.time == other.time
                and np.array_equal(self.energies, other.energies))

    def value_at(self, x: float, y: float, outside: float) -> float:
        i, j = self.spec.index(x, y)
        if 0 <= i < self.spec.nx and 0 <= j < self.spec.ny:
            return float(self.energies[i, j])
        return outside


@dataclass(frozen=True)
class RiskStack:
    frames: tuple
    dt: float = DT

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        specs = {f.spec for f in self.frames}
        if len(specs) > 1:
            raise ValueError("all stack frames must share one GridSpec")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, j) -> RiskGrid:
        return self.frames[j]


def _cells_within(axis: np.ndarray, lo: float, hi: float) -> tuple[int, int]:
    return int(np.searchsorted(axis, lo, side="left")), int(np.searchsorted(axis, hi, side="right"))


def _rasterize_rows(i0: int, i1: int, spec: GridSpec, scene: Scene, ego, fp: FieldParams) -> np.ndarray:
    xs, ys = spec.xs, spec.ys
    acc = np.zeros((i1 - i0, spec.ny))
    # Cells outside an object's reach are skipped; there the kernel returns exactly 0.
    for obj in scene.dynamics:
        poly = obj.polygon()
        reach = fp.cutoff
        a0, a1 = _cells_within(xs[i0:i1], poly[:, 0].min() - reach, poly[:, 0].max() + reach)
        b0, b1 = _cells_within(ys, poly[:, 1].min() - reach, poly[:, 1].max() + reach)
        if a0 < a1 and b0 < b1:
            gx, gy = np.meshgrid(xs[i0 + a0:i0 + a1], ys[b0:b1], indexing="ij")
            acc[a0:a1, b0:b1] = acc[a0:a1, b0:b1] + _dynamic_energy(gx, gy, obj, ego, fp)
    for sobj in scene.statics:
        pts = sobj.points
        half = fp.static.kappa * sobj.width / 2.0
        a0, a1 = _cells_within(xs[i0:i1], pts[:, 0].min() - half, pts[:, 0].max() + half)
        b0, b1 = _cells_within(ys, pts[:, 1].min() - half, pts[:, 1].max() + half)
        if a0 < a1 and b0 < b1:
            gx, gy = np.meshgrid(xs[i0 + a0:i0 + a1], ys[b0:b1], indexing="ij")
            acc[a0:a1, b0:b1] = acc[a0:a1, b0:b1] + _static_energy(gx, gy, sobj, fp.static)
    return np.minimum(fp.potential.E_max, acc)


def _partition(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def rasterize_frame(scene: Scene, ego: DynamicObject | None, spec: GridSpec, fp: FieldParams,
                    time: float = 0.0, workers: int = 1, pool: ThreadPoolExecutor | None = None) -> RiskGrid:
    """Total risk energy at every cell center of `spec`."""
    chunks = _partition(spec.nx, workers)
    if len(chunks) == 1:
        energies = _rasterize_rows(0, spec.nx, spec, scene, ego, fp)
    else:
        run = lambda c: _rasterize_rows(c[0], c[1], spec, scene, ego, fp)  # noqa: E731
        if pool is None:
            with ThreadPoolExecutor(workers) as ex:
                blocks = list(ex.map(run, chunks))
        else:
            blocks = list(pool.map(run, chunks))
        energies = np.concatenate(blocks, axis=0)
    return RiskGrid(spec, time, energies)


def frame_scenes(objects, statics, predictions: dict, m: int, dt: float = DT) -> list[Scene]:
    """Scene snapshots at 0, dt, ..., (m-1)dt: dynamic objects moved to their predicted states."""
    scenes = []
    for j in range(m):
        moved = []
        for obj in objects:
            if j == 0:
                moved.append(obj)
                continue
            pred = predictions[obj.id]
            if len(pred.states) < j:
                raise HorizonError(f"prediction for {obj.id!r} covers {pred.horizon} s, "
                                   f"stack needs {(m - 1) * dt} s")
            pose, speed = pred.states[j - 1]
            moved.append(obj.moved(pose, speed))
        scenes.append(Scene(tuple(moved), tuple(statics)))
    return scenes


def build_risk_stack(objects, statics, predictions: dict, ego: DynamicObject | None, spec: GridSpec,
                     fp: FieldParams, m: int = 7, dt: float = DT, workers: int = 1) -> RiskStack:
    """One risk grid per future frame; the ego is never part of `objects`."""
    objects = [o for o in objects if ego is None or o.id != ego.id]
    scenes = frame_scenes(objects, statics, predictions, m, dt)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            frames = [rasterize_frame(sc, ego, spec, fp, j * dt, workers, ex) for j, sc in enumerate(scenes)]
    else:
        frames = [rasterize_frame(sc, ego, spec, fp, j * dt) for j, sc in enumerate(scenes)]
    return RiskStack(tuple(frames), dt)


# --- dump formats -----------------------------------------------------------


def write_grid(grid: RiskGrid, path) -> None:
    spec = grid.spec
    buf = io.BytesIO()
    buf.write(_HEADER.pack(GRID_MAGIC, GRID_VERSION, spec.nx, spec.ny, spec.resolution,
                           spec.origin.x, spec.origin.y, grid.time))
    buf.write(np.ascontiguousarray(grid.energies, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_grid(path) -> RiskGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated grid header")
    magic, version, nx, ny, res, ox, oy, t = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    body = data[_HEADER.size:]
    if len(body) != nx * ny * 8:
        raise ValueError(f"{path}: expected {nx * ny} cells, got {len(body) // 8}")
    energies = np.frombuffer(body, dtype="<f8").reshape(nx, ny).astype(float)
    return RiskGrid(GridSpec(Pose2(ox, oy, 0.0), nx, ny, res), t, energies)


def write_grid_csv(grid: RiskGrid, path) -> None:
    gx, gy = grid.spec.centers()
    table = np.column_stack([gx.ravel(), gy.ravel(), grid.energies.ravel()])
    np.savetxt(path, table, delimiter=",", header="x,y,energy", comments="", fmt="%.6f")
