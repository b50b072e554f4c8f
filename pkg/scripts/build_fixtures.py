"""Regenerate the packaged scenario fixtures (src/riskplan/data/scenarios)."""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "riskplan" / "data" / "scenarios"
LANE_W = 3.5
ROAD_END = 800.0


def two_lane_map():
    lanes = [
        {"id": "right", "centerline": [[-50.0, 0.0], [ROAD_END, 0.0]], "width": LANE_W, "successors": []},
        {"id": "left", "centerline": [[-50.0, LANE_W], [ROAD_END, LANE_W]], "width": LANE_W, "successors": []},
    ]
    statics = [
        {"id": "line_right", "kind": "lane_line", "geometry": [[-50.0, -1.75], [ROAD_END, -1.75]], "width": 0.15},
        {"id": "line_center", "kind": "lane_line", "geometry": [[-50.0, 1.75], [ROAD_END, 1.75]], "width": 0.15},
        {"id": "line_left", "kind": "lane_line", "geometry": [[-50.0, 5.25], [ROAD_END, 5.25]], "width": 0.15},
        {"id": "barrier_right", "kind": "barrier", "geometry": [[-50.0, -2.5], [ROAD_END, -2.5]], "width": 0.3},
        {"id": "barrier_left", "kind": "barrier", "geometry": [[-50.0, 6.0], [ROAD_END, 6.0]], "width": 0.3},
    ]
    return {"lanes": lanes, "static_objects": statics}


def ego(speed, x=0.0, y=0.0):
    return {"id": "ego", "kind": "vehicle", "mass": 1500.0, "pose": {"x": x, "y": y, "heading": 0.0},
            "speed": speed, "length": 4.5, "width": 1.8}


def straight(obj, x0, y, v, duration, heading=0.0):
    """Keyframes for constant speed along +x."""
    return {**obj, "motion": [{"t": 0.0, "x": x0, "y": y, "heading": heading, "speed": v},
                              {"t": duration, "x": x0 + v * duration, "y": y, "heading": heading, "speed": v}]}


def scenario(agents, speed_limit, duration, ego_speed, target_x):
    return {"map": two_lane_map(), "ego": ego(ego_speed), "agents": agents,
            "target": {"x": target_x, "y": 0.0, "heading": 0.0}, "speed_limit": speed_limit,
            "duration": duration}


def ped(i):
    return {"id": f"ped{i}", "kind": "pedestrian", "mass": 70.0, "length": 0.5, "width": 0.5}


def lane_change(obj, x0, v, y0, y1, t0, t1, duration, dt=0.25):
    """Smooth (cosine-blended) lane change from y0 to y1 between t0 and t1 at constant speed."""
    motion = []
    t = 0.0
    while t <= duration + 1e-9:
        if t <= t0:
            y, dy = y0, 0.0
        elif t >= t1:
            y, dy = y1, 0.0
        else:
            u = (t - t0) / (t1 - t0)
            y = y0 + (y1 - y0) * 0.5 * (1 - math.cos(math.pi * u))
            dy = (y1 - y0) * 0.5 * math.pi * math.sin(math.pi * u) / (t1 - t0)
        motion.append({"t": round(t, 6), "x": x0 + v * t, "y": y, "heading": math.atan2(dy, v), "speed": v})
        t += dt
    return {**obj, "motion": motion}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    car = {"kind": "vehicle", "mass": 1500.0, "length": 4.5, "width": 1.8}
    fixtures = {
        "free_drive": scenario([], 10.0, 30.0, 0.0, 220.0),
        "pedestrian_overtake": scenario(
            [straight(ped(1), 70.0, -0.5, 1.0, 25.0), straight(ped(2), 73.0, -0.6, 1.0, 25.0)],
            10.0, 25.0, 8.0, 200.0),
        "adjacent_truck": scenario(
            [straight({"id": "truck", "kind": "truck", "mass": 15000.0, "length": 12.0, "width": 2.5},
                      60.0, LANE_W, 5.0, 25.0)],
            10.0, 25.0, 10.0, 200.0),
        "cut_in": scenario(
            [lane_change({"id": "cutter", **car}, 30.0, 7.0, LANE_W, 0.0, 2.0, 5.0, 25.0)],
            10.0, 25.0, 10.0, 200.0),
        "blocked_center": scenario(
            [straight({"id": "stopped_car", **car}, 70.0, 0.0, 0.0, 30.0)], 5.0, 30.0, 5.0, 120.0),
        "all_blocked": scenario(
            [straight({"id": "block_right", **car}, 60.0, 0.0, 0.0, 20.0),
             straight({"id": "block_left", **car}, 60.0, LANE_W, 0.0, 20.0)], 5.0, 20.0, 5.0, 150.0),
        "single_vehicle": scenario(
            [straight({"id": "lead", **car}, 30.0, 0.0, 8.0, 5.0)], 10.0, 5.0, 0.0, 200.0),
    }
    for name, doc in fixtures.items():
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
