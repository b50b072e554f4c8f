from __future__ import annotations

import functools

import pytest

from riskplan.geometry import Pose2
from riskplan.params import FieldParams, load_params
from riskplan.scenario import DynamicObject, Lane, LaneGraph, StaticObject, load_scenario, resolve_scenario
from riskplan.sim import SimConfig, Simulator


def car(oid="car", x=0.0, y=0.0, heading=0.0, speed=0.0, length=4.5, width=1.8, kind="vehicle", mass=None):
    return DynamicObject.box(oid, kind, Pose2(x, y, heading), speed, length, width, mass)


def two_lanes(length=400.0):
    lanes = LaneGraph((Lane("right", ((-50.0, 0.0), (length, 0.0)), 3.5),
                       Lane("left", ((-50.0, 3.5), (length, 3.5)), 3.5)))
    statics = (StaticObject("line_right", "lane_line", ((-50.0, -1.75), (length, -1.75)), 0.15, 400.0),
               StaticObject("line_center", "lane_line", ((-50.0, 1.75), (length, 1.75)), 0.15, 400.0),
               StaticObject("line_left", "lane_line", ((-50.0, 5.25), (length, 5.25)), 0.15, 400.0))
    return lanes, statics


@pytest.fixture
def spec_field():
    """The field-equation reference set: k = 1 and friends (dataclass defaults)."""
    return FieldParams()


@pytest.fixture(scope="session")
def params():
    return load_params()


@functools.lru_cache(maxsize=None)
def fixture(name: str):
    return load_scenario(resolve_scenario(name))


@functools.lru_cache(maxsize=None)
def fixture_run(name: str, workers: int = 1, policy: str = "risk"):
    """One closed-loop run per (fixture, workers, policy), shared across test modules."""
    sim = Simulator(fixture(name), SimConfig(workers=workers, policy=policy))
    sim.run()
    return sim
