import math
import struct

import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon

from riskplan.geometry import Pose2
from riskplan.params import KineticParams, PotentialParams, StaticParams
from riskplan.predictor import constant_velocity
from riskplan.riskfield import (UNBOUNDED, GridSpec, HorizonError, Scene, build_risk_stack, kinetic_energy,
                                kinetic_raw, potential_energy, rasterize_frame, read_grid, relative_speed, smooth,
                                static_energy, total_energy_at, virtual_mass, weighted_distance, write_grid,
                                write_grid_csv)
from riskplan.scenario import StaticObject

from conftest import car, two_lanes

REL = 1e-9


# --- plain-math oracles, written from the equations only ---------------------

def oracle_mv(m, v, T=1.0, a=0.1, b=1.2, g=1.0):
    return m * T * (a * v ** b + g)


def oracle_pe(D, mv, k=1.0, ra=1.0, k1=1.0, emax=100.0):
    return k * ra * mv / (D ** k1 + k * ra * mv / emax)


def oracle_ke(obj, ego_v, ego_h, px, py, emax=100.0, t=3.0, vmin=0.1):
    h = obj.pose.heading
    ux, uy = math.cos(h), math.sin(h)
    rvx = obj.speed * ux - ego_v * math.cos(ego_h)
    rvy = obj.speed * uy - ego_v * math.sin(ego_h)
    vr = max(0.0, rvx * ux + rvy * uy)
    dx, dy = px - obj.pose.x, py - obj.pose.y
    lo = dx * ux + dy * uy
    la = -dx * uy + dy * ux
    w = obj.width
    if vr <= vmin or lo <= 0 or abs(la) >= w:
        return 0.0, None
    dw = math.sqrt(lo * lo / (1 - (la / w) ** 2))
    if dw >= vr * t:
        return 0.0, None
    mv = oracle_mv(obj.mass, obj.speed)
    raw = vr * vr / (2 * mv * dw * (1 - dw / (vr * t)))
    return emax * (1 - math.exp(-raw / emax)), raw


def rel(a, b):
    return abs(a - b) <= REL * max(abs(a), abs(b), 1e-300)


# --- scalar examples -----------------------------------------------------------

def test_virtual_mass_examples():
    p = PotentialParams()
    assert virtual_mass(car(mass=1500.0), p) == 1500.0
    assert rel(virtual_mass(car(mass=1000.0, speed=10.0), PotentialParams(beta=1.0)), 2000.0)
    p2 = PotentialParams(beta=2.0)
    term = lambda v: virtual_mass(car(mass=1.0, speed=v), p2) - p2.T * p2.gamma  # noqa: E731
    assert rel(term(6.0), 4 * term(3.0))


def test_potential_example():
    # M_v = 2000 from m = 1000, v = 10, beta = 1; point 100 m ahead of the front bumper
    obj = car(mass=1000.0, speed=10.0)
    p = PotentialParams(beta=1.0)
    e = potential_energy(obj, (obj.front + 100.0, 0.0), p)
    assert rel(e, 2000.0 / 120.0)
    assert rel(e, oracle_pe(100.0, 2000.0))


def test_potential_inside_is_emax():
    p = PotentialParams()
    rng = np.random.default_rng(0)
    obj = car(x=5, y=2, heading=0.6, speed=7.0)
    shp = Polygon(obj.polygon())
    n = 0
    while n < 500:
        q = rng.uniform(-3, 3, 2) + (5, 2)
        if shp.contains(Point(q)):
            assert abs(potential_energy(obj, tuple(q), p) - p.E_max) <= 1e-9
            n += 1


def test_weighted_distance_examples():
    assert weighted_distance(7.0, 0.0, 2.0) == 7.0
    assert rel(weighted_distance(10.0, 1.0, 2.0), 10.0 / math.sqrt(0.75))
    assert rel(weighted_distance(10.0, 1.0, 2.0), 11.547005383792516)
    assert weighted_distance(10.0, 2.0, 2.0) == UNBOUNDED
    assert weighted_distance(10.0, -3.0, 2.0) == UNBOUNDED


def test_kinetic_example():
    raw = kinetic_raw(10.0, 2000.0, 10.0, 3.0)
    assert rel(raw, 0.00375)
    s = float(smooth(raw, 100.0))
    assert rel(s, 100.0 * (1 - math.exp(-0.00375 / 100.0)))
    assert s == pytest.approx(0.00375, rel=1e-4)


def test_kinetic_example_through_object():
    # stationary ego, object moving at 10 m/s with M_v = 2000; point 10 m ahead on its axis
    obj = car(mass=1000.0, speed=10.0)
    pp = PotentialParams(beta=1.0)
    e = kinetic_energy(obj, None, (10.0, 0.0), pp, KineticParams())
    assert rel(e, 100.0 * (1 - math.exp(-0.00375 / 100.0)))


def test_kinetic_receding_is_zero():
    obj = car(speed=5.0)
    ego = car("ego", x=-20.0, speed=12.0)
    assert relative_speed(obj, ego) == 0.0
    for x in np.linspace(1, 40, 50):
        assert kinetic_energy(obj, ego, (x, 0.0), PotentialParams(), KineticParams()) == 0.0


def test_kinetic_cap_near_reach():
    obj = car(speed=10.0)
    reach = 30.0
    e = kinetic_energy(obj, None, (reach - 1e-9, 0.0), PotentialParams(), KineticParams())
    assert e == pytest.approx(100.0, abs=1e-6)
    assert kinetic_energy(obj, None, (reach, 0.0), PotentialParams(), KineticParams()) == 0.0


def lane_line(width=0.15, ks=400.0):
    return StaticObject("line", "lane_line", ((0.0, 0.0), (50.0, 0.0)), width, ks)


def test_static_examples():
    sp = StaticParams()
    s = lane_line()
    assert rel(static_energy(s, (10.0, 0.0), sp), 9.0)
    half = 2.0 * 0.15 / 2
    assert static_energy(s, (10.0, half), sp) == 0.0
    assert static_energy(s, (10.0, 1.0), sp) == 0.0
    assert rel(static_energy(s, (10.0, half / 2), sp), 400.0 * (2.0 * 0.15 / 4) ** 2)


def test_static_continuous_at_junction():
    sp = StaticParams()
    s = lane_line()
    half = 0.15
    for eps in (1e-3, 1e-6, 1e-9):
        assert static_energy(s, (10.0, half - eps), sp) <= 400.0 * eps * eps * (1 + 1e-6)
        assert static_energy(s, (10.0, half + eps), sp) == 0.0


# --- randomized properties (>= 10^4 cases each) ------------------------------------

N = 10_000


def templates(rng, k=50):
    # building a validated footprint is the slow part; reuse a few and move them
    return [car(f"t{i}", mass=rng.uniform(60, 20000), length=rng.uniform(0.5, 12), width=rng.uniform(0.5, 2.6))
            for i in range(k)]


def test_potential_matches_oracle_and_is_monotone_in_distance():
    rng = np.random.default_rng(11)
    p = PotentialParams()
    pool = templates(rng)
    for n in range(N):
        obj = pool[n % len(pool)].moved(Pose2(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-3, 3)),
                                       rng.uniform(0, 20))
        shp = Polygon(obj.polygon())
        mv = oracle_mv(obj.mass, obj.speed)
        # two points along one ray from the centroid, so D never decreases
        ang = rng.uniform(-math.pi, math.pi)
        r1 = rng.uniform(0.0, 60.0)
        r2 = r1 + rng.uniform(0.01, 30.0)
        pts = [(obj.pose.x + r * math.cos(ang), obj.pose.y + r * math.sin(ang)) for r in (r1, r2)]
        e = [potential_energy(obj, q, p) for q in pts]
        d = [shp.exterior.distance(Point(q)) if not shp.contains(Point(q)) else 0.0 for q in pts]
        for ei, di in zip(e, d):
            assert abs(ei - oracle_pe(di, mv)) <= 1e-9 * oracle_pe(di, mv) + 1e-12 * abs(di)
            assert 0.0 < ei <= p.E_max
        if d[1] > d[0] + 1e-9:
            assert e[1] < e[0]
        else:
            assert e[1] <= e[0]


def test_potential_increases_with_speed():
    rng = np.random.default_rng(12)
    p = PotentialParams()
    pool = templates(rng)
    for n in range(N):
        base = pool[n % len(pool)]
        v1 = rng.uniform(0, 30)
        v2 = v1 + rng.uniform(0.01, 10)
        q = (base.front + rng.uniform(0.01, 50), rng.uniform(-20, 20))  # D > 0
        assert potential_energy(base.moved(base.pose, v2), q, p) > potential_energy(base.moved(base.pose, v1), q, p)


def test_weighted_distance_properties():
    rng = np.random.default_rng(13)
    for _ in range(N):
        lo, w = rng.uniform(-50, 50), rng.uniform(0.3, 3)
        la = rng.uniform(-1.5 * w, 1.5 * w) if rng.random() > 0.1 else 0.0
        dw = weighted_distance(lo, la, w)
        if abs(la) >= w:
            assert dw == UNBOUNDED
        elif la == 0.0:
            assert dw == abs(lo)
        else:
            assert rel(dw, math.sqrt(lo * lo / (1 - (la / w) ** 2)))
            assert dw >= abs(lo)
            if lo != 0:
                assert dw > abs(lo)


def test_kinetic_zero_region_and_bounds():
    rng = np.random.default_rng(14)
    pp, kp = PotentialParams(), KineticParams()
    pool = templates(rng)
    ego0 = car("ego")
    zero = live = 0
    for n in range(N):
        obj = pool[n % len(pool)].moved(Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3)),
                                       rng.uniform(0, 15))
        ego_v, ego_h = rng.uniform(0, 15), rng.uniform(-3, 3)
        ego = ego0.moved(Pose2(-30.0, 0.0, ego_h), ego_v)
        h = obj.pose.heading
        # bias sample points toward the lobe so both branches are exercised
        lo, la = rng.uniform(-10, 50), rng.uniform(-3, 3)
        px = obj.pose.x + lo * math.cos(h) - la * math.sin(h)
        py = obj.pose.y + lo * math.sin(h) + la * math.cos(h)
        got = kinetic_energy(obj, ego, (px, py), pp, kp)
        want, raw = oracle_ke(obj, ego_v, ego_h, px, py)
        if raw is None:
            assert got == 0.0
            zero += 1
        else:
            assert abs(got - want) <= REL * want + 1e-300
            if raw <= 10 * pp.E_max:
                assert 0.0 < got < pp.E_max
            live += 1
    assert zero > 1000 and live > 1000


def test_smoothing_properties():
    e = 100.0
    raw = np.sort(np.random.default_rng(15).uniform(0, 10 * e, N))
    s = smooth(raw, e)
    assert smooth(0.0, e) == 0.0
    assert np.all(np.diff(s)[np.diff(raw) > 0] > 0)
    assert np.all(s < e)
    assert smooth(1e6, e) == pytest.approx(e)
    small = np.array([1e-6, 1e-3, 0.1])
    assert smooth(small, e) == pytest.approx(small, rel=1e-3)


# --- scene totals ------------------------------------------------------------------

def test_empty_scene_is_zero(spec_field):
    assert total_energy_at((1.0, 2.0), Scene(), spec_field) == 0.0


def test_stationary_object_total_is_potential(spec_field):
    obj = car(x=3.0)
    q = (20.0, 1.0)
    assert total_energy_at(q, Scene((obj,)), spec_field) == potential_energy(obj, q, spec_field.potential)


def test_superposition(spec_field):
    a = car("a", x=-10.0, mass=100.0)
    b = car("b", x=10.0, mass=100.0)
    q = (0.0, 0.0)
    one = total_energy_at(q, Scene((a,)), spec_field)
    assert 2 * one < spec_field.potential.E_max
    assert rel(total_energy_at(q, Scene((a, b)), spec_field), 2 * one)
    a2 = car("a", y=-10.0, heading=math.pi / 2, mass=100.0)
    b2 = car("b", y=10.0, heading=-math.pi / 2, mass=100.0)
    assert rel(total_energy_at(q, Scene((a2, b2)), spec_field), 2 * total_energy_at(q, Scene((a2,)), spec_field))


def test_total_bounds_and_permutation(spec_field):
    rng = np.random.default_rng(16)
    lanes, statics = two_lanes()
    objs = [car(f"o{k}", x=rng.uniform(0, 60), y=rng.uniform(-2, 5), heading=rng.uniform(-0.3, 0.3),
                speed=rng.uniform(0, 12)) for k in range(6)]
    ego = car("ego", speed=8.0)
    fwd = Scene(tuple(objs), statics)
    rev = Scene(tuple(objs[::-1]), statics[::-1])
    for q in rng.uniform((-10, -5), (80, 8), (500, 2)):
        e = total_energy_at(tuple(q), fwd, spec_field, ego)
        assert 0.0 <= e <= spec_field.potential.E_max
        assert e == total_energy_at(tuple(q), rev, spec_field, ego)


def test_exclude(spec_field):
    a, b = car("a"), car("b", x=30.0)
    q = (15.0, 0.0)
    assert total_energy_at(q, Scene((a, b)), spec_field, exclude="a") == total_energy_at(q, Scene((b,)), spec_field)


# --- grids -------------------------------------------------------------------------

def small_spec(nx=80, ny=40, ox=-10.0, oy=-8.0):
    return GridSpec(Pose2(ox, oy), nx, ny, 0.5)


def busy_scene():
    _, statics = two_lanes()
    objs = (car("a", x=8.0, speed=6.0), car("b", x=20.0, y=3.5, heading=0.05, speed=9.0),
            car("p", x=14.0, y=-1.0, speed=1.0, kind="pedestrian", length=0.5, width=0.5))
    return Scene(objs, statics)


def test_empty_grid(spec_field):
    g = rasterize_frame(Scene(), None, small_spec(), spec_field)
    assert not g.energies.any()


def test_grid_matches_point_evaluation(spec_field):
    spec = small_spec()
    ego = car("ego", x=-5.0, speed=8.0)
    g = rasterize_frame(busy_scene(), ego, spec, spec_field)
    rng = np.random.default_rng(17)
    for i, j in zip(rng.integers(0, spec.nx, 400), rng.integers(0, spec.ny, 400)):
        assert g.energies[i, j] == total_energy_at((spec.xs[i], spec.ys[j]), busy_scene(), spec_field, ego)


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_grid_independent_of_workers(spec_field, workers):
    spec = small_spec(91, 37)
    ego = car("ego", x=-5.0, speed=8.0)
    one = rasterize_frame(busy_scene(), ego, spec, spec_field)
    many = rasterize_frame(busy_scene(), ego, spec, spec_field, workers=workers)
    assert np.array_equal(one.energies, many.energies)


def test_moving_vehicle_max_inside_footprint(spec_field):
    # one moving vehicle between two lane lines
    lines = (StaticObject("l0", "lane_line", ((-20, -1.75), (60, -1.75)), 0.15, 400.0),
             StaticObject("l1", "lane_line", ((-20, 1.75), (60, 1.75)), 0.15, 400.0))
    veh = car("v", x=10.0, speed=8.0)
    spec = small_spec(120, 16, -10.0, -4.0)
    g = rasterize_frame(Scene((veh,), lines), car("ego", x=-8.0, speed=5.0), spec, spec_field)
    top = g.energies.max()
    assert top == spec_field.potential.E_max
    # the clamp makes ties; every cell inside the footprint attains the maximum
    shp = Polygon(veh.polygon())
    gx, gy = spec.centers()
    inside = np.array([shp.covers(Point(x, y)) for x, y in zip(gx.ravel(), gy.ravel())]).reshape(gx.shape)
    assert inside.sum() > 20
    assert np.all(g.energies[inside] == top)


def test_grid_spec_rejects_bad_shape():
    with pytest.raises(ValueError):
        GridSpec(Pose2(0, 0), 0, 5, 0.5)


# --- stacks ----------------------------------------------------------------------

def test_stationary_stack_frames_identical(spec_field):
    objs = [car("a", x=10.0), car("b", x=25.0, y=3.5)]
    preds = {o.id: constant_velocity(o, 3.5) for o in objs}
    _, statics = two_lanes()
    st = build_risk_stack(objs, statics, preds, car("ego", speed=5.0), small_spec(), spec_field)
    assert len(st) == 7
    assert [f.time for f in st.frames] == [0.5 * j for j in range(7)]
    for f in st.frames[1:]:
        assert np.array_equal(f.energies, st[0].energies)


def test_constant_velocity_stack_translates(spec_field):
    # 4 m/s over 0.5 s = 2 m = 4 cells per frame
    obj = car("a", x=2.0, y=0.25, speed=4.0)
    ego = car("ego", x=-30.0, speed=0.0)
    spec = small_spec(120, 24, -10.0, -6.0)
    st = build_risk_stack([obj], (), {"a": constant_velocity(obj, 3.5)}, ego, spec, spec_field)
    for j in range(1, 7):
        shifted = car("a", x=2.0 + 2.0 * j, y=0.25, speed=4.0)
        oracle = rasterize_frame(Scene((shifted,)), ego, spec, spec_field)
        assert np.array_equal(st[j].energies, oracle.energies)
        # interior columns are the frame-0 field moved by 4j cells
        k = 4 * j
        assert np.allclose(st[j].energies[k + 20:100, :], st[0].energies[20:100 - k, :], rtol=0, atol=1e-12)


def test_stack_excludes_ego(spec_field):
    ego = car("ego", speed=5.0)
    st = build_risk_stack([ego], (), {"ego": constant_velocity(ego, 3.5)}, ego, small_spec(), spec_field)
    assert all(not f.energies.any() for f in st.frames)


def test_short_prediction_is_horizon_error(spec_field):
    obj = car("a", x=10.0, speed=3.0)
    with pytest.raises(HorizonError):
        build_risk_stack([obj], (), {"a": constant_velocity(obj, 2.0)}, None, small_spec(), spec_field)


def test_stack_workers_identical(spec_field):
    objs = [car("a", x=8.0, speed=6.0), car("b", x=20.0, y=3.5, speed=9.0)]
    preds = {o.id: constant_velocity(o, 3.5) for o in objs}
    ego = car("ego", speed=7.0)
    one = build_risk_stack(objs, (), preds, ego, small_spec(), spec_field)
    four = build_risk_stack(objs, (), preds, ego, small_spec(), spec_field, workers=4)
    assert one == four


# --- dump formats --------------------------------------------------------------------

def test_grid_binary_round_trip(tmp_path, spec_field):
    g = rasterize_frame(busy_scene(), None, small_spec(30, 12), spec_field, time=1.5)
    p = tmp_path / "g.rskg"
    write_grid(g, p)
    data = p.read_bytes()
    magic, ver, nx, ny, res, ox, oy, t = struct.unpack_from("<4sIIIdddd", data)
    assert (magic, ver, nx, ny, res, ox, oy, t) == (b"RSKG", 1, 30, 12, 0.5, -10.0, -8.0, 1.5)
    assert len(data) == struct.calcsize("<4sIIIdddd") + 30 * 12 * 8
    # row-major over (nx, ny)
    first = struct.unpack_from("<2d", data, struct.calcsize("<4sIIIdddd"))
    assert first == (g.energies[0, 0], g.energies[0, 1])
    assert read_grid(p) == g


@pytest.mark.parametrize("corrupt", [lambda b: b"XXXX" + b[4:], lambda b: b[:20], lambda b: b[:-8]])
def test_grid_reader_rejects_bad_files(tmp_path, corrupt, spec_field):
    g = rasterize_frame(Scene(), None, small_spec(4, 4), spec_field)
    p = tmp_path / "g.rskg"
    write_grid(g, p)
    p.write_bytes(corrupt(p.read_bytes()))
    with pytest.raises(ValueError):
        read_grid(p)


def test_grid_csv(tmp_path, spec_field):
    g = rasterize_frame(busy_scene(), None, small_spec(6, 5), spec_field)
    p = tmp_path / "g.csv"
    write_grid_csv(g, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "x,y,energy"
    assert len(rows) == 31
    x, y, e = map(float, rows[1].split(","))
    assert (x, y) == (-9.75, -7.75)
    assert e == pytest.approx(g.energies[0, 0], abs=1e-6)


def test_static_line_via_shapely(spec_field):
    s = StaticObject("diag", "barrier", ((0, 0), (10, 10), (20, 0)), 1.0, 1e5)
    rng = np.random.default_rng(18)
    ls = LineString(s.geometry)
    for q in rng.uniform(-2, 22, (300, 2)):
        dis = ls.distance(Point(q))
        want = 1e5 * (1.0 - min(1.0, dis)) ** 2
        assert static_energy(s, tuple(q), StaticParams()) == pytest.approx(want, rel=1e-9, abs=1e-6)
