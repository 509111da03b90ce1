"""Versioned scenario files for the benchmark experiments.

A scenario bundles everything one batch run needs: the system model, the
initial-state description, the uncertain obstacles (either a fixed list
or a seeded scene generator), the goal, the ranking objective, and the
risk-budget inputs.  Fixture files for the two shipped experiments live
in the package data directory:

- ``underwater_clustered``: static clustered discs, path-tracking
  objective, goal disc at (5.5, 2) with radius 0.09, risk 0.2 over at
  most 100 cycles.  The obstacle layout approximates the published
  figure; no coordinate table exists for it.
- ``lane_change``: 20 generated scenes of three moving elliptical
  vehicles, terminal lane-change objective, risk 0.3 over at most 200
  cycles, quadratic outer approximation of the contours enabled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import contours as ct
from . import dynamics as dyn
from . import planner as pl
from . import tubes
from . import uncertainty as unc

SCENARIO_FORMAT_VERSION = 1


@dataclass
class LaneChangeGoal:
    """Reached when the lane and heading are settled."""

    target_y: float = 1.0
    y_tol: float = 0.1
    heading_tol: float = 0.15

    def __call__(self, pose):
        return abs(pose[1] - self.target_y) <= self.y_tol \
            and abs(pose[3]) <= self.heading_tol


@dataclass
class Scenario:
    name: str
    model: dyn.SystemModel
    initial: dict                   # initial-state description
    goal: tuple
    goal_radius: float
    objective_spec: dict
    delta: float
    cycles_cap: int
    delta_tube: float = 0.001
    replan_stride: int = 2
    outer_approximation: bool = False
    road_frame: bool = False
    obstacles: list = field(default_factory=list)
    scene_generator: dict | None = None
    _scenes: list | None = None

    @property
    def n_scenes(self):
        if self.scene_generator is None:
            return 1
        return int(self.scene_generator["count"])

    def scenes(self):
        """Obstacle list per scene; generated scenes are deterministic."""
        if self.scene_generator is None:
            return [list(self.obstacles)]
        if self._scenes is None:
            self._scenes = generate_lane_change_scenes(self.scene_generator)
        return self._scenes

    def contour_set(self, scene=0):
        cset = ct.build_contour_set(self.scenes()[scene], self.delta_o)
        if self.outer_approximation:
            cset = ct.outer_contour_set(cset)
        return cset

    @property
    def delta_o(self):
        return self.budget().delta_o

    def budget(self):
        return pl.allocate_risk(self.delta, self.cycles_cap,
                                self.delta_tube)

    def objective(self):
        spec = self.objective_spec
        if spec["kind"] == "path":
            return pl.PathTrackingObjective(
                spec["waypoints"], goal=self.goal,
                goal_weight=spec.get("goal_weight", 1.0))
        if spec["kind"] == "terminal":
            return pl.TerminalCostObjective(
                target_y=spec.get("target_y", 1.0),
                heading_weight=spec.get("heading_weight", 10.0),
                heading_limit=spec.get("heading_limit", np.pi / 6.0),
                penalty=spec.get("penalty", 1e7))
        raise ValueError(f"unknown objective kind {spec['kind']!r}")

    def goal_test(self):
        if self.objective_spec["kind"] == "terminal":
            return LaneChangeGoal(
                target_y=self.objective_spec.get("target_y", 1.0))
        return None

    def make_task(self, scene=0, options=None):
        if options is None:
            options = pl.PlannerOptions(road_frame=self.road_frame)
        return pl.PlanningTask(self.contour_set(scene), tuple(self.goal),
                               self.goal_radius, self.objective(),
                               self.replan_stride, options,
                               self.goal_test())

    def sample_initial_poses(self, runs, seed=0):
        """Deterministic initial poses for a batch of runs."""
        rng = np.random.default_rng(seed)
        init = self.initial
        poses = []
        for _ in range(runs):
            if init["kind"] == "uniform-square":
                cx, cy = init["center"]
                half = 0.5 * init["side"]
                poses.append((cx + rng.uniform(-half, half),
                              cy + rng.uniform(-half, half),
                              float(init.get("heading", 0.0))))
            elif init["kind"] == "fixed":
                poses.append(tuple(float(v) for v in init["state"]))
            else:
                raise ValueError(
                    f"unknown initial-state kind {init['kind']!r}")
        return poses

    def build_library(self, **kwargs):
        if self.model.kind == "underwater":
            return tubes.build_library(
                self.model, tubes.default_underwater_specs(), **kwargs)
        return tubes.build_library(self.model,
                                   lane_change_specs(self.model),
                                   method="state-tracking", **kwargs)


def lane_change_specs(model, horizon=5, speed=1.0,
                      peaks=(0.6, 0.3, 0.0, -0.3, -0.6)):
    """Lane-change maneuver primitives: heading swings out and returns to
    zero within the horizon, so each primitive gains lateral offset while
    ending straight (which the terminal objective rewards).  The targets
    compensate the known mean of the heading noise, keeping the expected
    headings on the designed profile.
    """
    offset = -model.dt * unc.raw_moment(model.noise_theta, 1)
    shape = (0.5, 1.0, 1.0, 0.5, 0.0)
    return [{"targets": [(speed, p * shape[k] + offset)
                         for k in range(horizon)],
             "start": (speed, 0.0)} for p in peaks]


def generate_lane_change_scenes(cfg):
    """Three moving elliptical vehicles per scene, two on the target lane
    and one ahead on the start lane; positions and speeds drawn from the
    configured ranges with a fixed seed."""
    rng = np.random.default_rng(int(cfg["seed"]))
    r = cfg["ranges"]
    w = unc.uniform(*cfg.get("radius_range", (0.3, 0.4)))
    scenes = []
    for _ in range(int(cfg["count"])):
        lead_x = rng.uniform(*r["top_lead_x"])
        gap = rng.uniform(*r["top_gap"])
        v_top = rng.uniform(*r["top_speed"])
        bottom_x = rng.uniform(*r["bottom_x"])
        v_bottom = rng.uniform(*r["bottom_speed"])
        y_scale = cfg.get("y_scale", 4.0)
        scenes.append([
            ct.ellipse_obstacle((lead_x, 1.0), w, y_scale, (v_top, 0.0)),
            ct.ellipse_obstacle((lead_x + gap, 1.0), w, y_scale,
                                (v_top, 0.0)),
            ct.ellipse_obstacle((bottom_x, 0.0), w, y_scale,
                                (v_bottom, 0.0)),
        ])
    return scenes


def scenario_to_json(s):
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "name": s.name,
        "model": s.model.to_json(),
        "initial": s.initial,
        "goal": list(s.goal),
        "goal_radius": s.goal_radius,
        "objective": s.objective_spec,
        "risk": {"delta": s.delta, "cycles_cap": s.cycles_cap,
                 "delta_tube": s.delta_tube},
        "replan_stride": s.replan_stride,
        "outer_approximation": s.outer_approximation,
        "road_frame": s.road_frame,
        "obstacles": [ct.obstacle_to_json(o) for o in s.obstacles],
        "scene_generator": s.scene_generator,
    }


def scenario_from_json(d):
    version = d.get("format_version")
    if version != SCENARIO_FORMAT_VERSION:
        raise ValueError(f"unsupported scenario format version {version!r}")
    risk = d["risk"]
    return Scenario(
        name=d["name"],
        model=dyn.SystemModel.from_json(d["model"]),
        initial=d["initial"],
        goal=tuple(d["goal"]),
        goal_radius=float(d["goal_radius"]),
        objective_spec=d["objective"],
        delta=float(risk["delta"]),
        cycles_cap=int(risk["cycles_cap"]),
        delta_tube=float(risk.get("delta_tube", 0.001)),
        replan_stride=int(d.get("replan_stride", 2)),
        outer_approximation=bool(d.get("outer_approximation", False)),
        road_frame=bool(d.get("road_frame", False)),
        obstacles=[ct.obstacle_from_json(o) for o in d.get("obstacles", [])],
        scene_generator=d.get("scene_generator"),
    )


def load_scenario(path):
    with open(path) as fh:
        return scenario_from_json(json.load(fh))


BUILTIN_SCENARIOS = ("underwater_clustered", "lane_change")


def load_builtin(name):
    if name not in BUILTIN_SCENARIOS:
        raise ValueError(f"unknown builtin scenario {name!r}; "
                         f"available: {', '.join(BUILTIN_SCENARIOS)}")
    blob = resources.files("tubeplan.data").joinpath(f"{name}.json")
    return scenario_from_json(json.loads(blob.read_text()))
