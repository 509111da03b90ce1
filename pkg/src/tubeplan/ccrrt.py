"""Chance-constrained RRT baseline for a linear-Gaussian point model.

The baseline plans for the noisy double integrator

    x_{t+1} = x_t + dt * v_{x,t} + w_x,   y analogous,

with i.i.d. zero-mean Gaussian noise per axis (std 0.02 by default), so
the position covariance k steps after a measurement is k * std^2 * I.
Obstacles are discs with deterministic radii; a tree node k steps deep is
declared safe against an obstacle when its mean clears the disc by the
radial Gaussian quantile

    q_k = std * sqrt(2 k ln(1 / delta_o)),

which makes the per-node collision probability of the isotropic Gaussian
position exactly the Rayleigh tail exp(-q^2 / (2 k std^2)) = delta_o at
the inflated boundary.  Planning is MPC style: each cycle grows a tree
from the measured state (zero covariance at the root), prunes unsafe
nodes, ranks safe leaves by distance to a reference path plus a weighted
distance to the goal, and executes the first control of the best branch.

Unlike the tube planner, safety is only checked at the discrete node
means, the model must be linear-Gaussian, and obstacles must be convex
discs; the comparison report calls out these limitations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .planner import PlanningCycleLog

COMPARISON_NOTES = (
    "tube planner bounds risk over the continuous state space; the "
    "baseline checks safety only at discrete sampled points",
    "tube planner handles nonlinear dynamics; the baseline requires a "
    "linear model",
    "tube planner handles general (non-Gaussian) distributions; the "
    "baseline requires Gaussian noise",
    "tube planner handles nonconvex polynomial obstacles; the baseline "
    "requires convex discs",
)


class CcrrtStuckError(RuntimeError):
    """No safe branch found within the node budget."""


@dataclass(frozen=True)
class LinearGaussianModel:
    dt: float = 0.1
    std: float = 0.02               # per-axis noise standard deviation

    def __post_init__(self):
        if not (self.dt > 0 and self.std > 0):
            raise ValueError("dt and noise std must be > 0")

    def step_cov(self, k):
        """Position covariance k steps after a measurement."""
        return k * self.std ** 2 * np.eye(2)


@dataclass(frozen=True)
class DiscObstacle:
    center: tuple
    radius: float
    velocity: tuple = (0.0, 0.0)

    def center_at(self, t):
        return (self.center[0] + self.velocity[0] * t,
                self.center[1] + self.velocity[1] * t)


def radial_quantile(sigma, delta):
    """q with P(|N(0, sigma^2 I_2)| > q) = delta (Rayleigh tail)."""
    if not 0.0 < delta < 1.0:
        raise ValueError("tail probability must be in (0, 1)")
    return float(sigma * np.sqrt(2.0 * np.log(1.0 / delta)))


def radial_tail(sigma, q):
    """P(|N(0, sigma^2 I_2)| > q): the Rayleigh survival function."""
    if sigma == 0.0:
        return 0.0 if q > 0 else 1.0
    return float(np.exp(-q * q / (2.0 * sigma * sigma)))


def node_clearance(model, k, delta_o):
    """Required clearance beyond the obstacle radius at tree depth k."""
    if k == 0:
        return 0.0
    return radial_quantile(model.std * np.sqrt(k), delta_o)


@dataclass(frozen=True)
class RrtParams:
    step_length: float = 0.15
    goal_bias: float = 0.2
    node_budget: int = 300
    delta_o: float = 0.1
    sample_lo: tuple = (-1.0, -1.0)  # sampling window corners
    sample_hi: tuple = (7.0, 5.0)
    goal_weight: float = 0.5

    def __post_init__(self):
        if self.step_length <= 0 or self.node_budget < 1:
            raise ValueError("step length and node budget must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal bias must be in [0, 1]")


@dataclass
class RrtNode:
    mean: np.ndarray
    depth: int                      # steps since the measured root
    parent: int                     # index into the tree, -1 for the root
    control: tuple | None           # control that produced this node


@dataclass
class RrtTree:
    nodes: list = field(default_factory=list)

    def add(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def first_control(self, leaf):
        """Walk back to the root's child and return its control."""
        node = self.nodes[leaf]
        while self.nodes[node.parent].parent != -1:
            node = self.nodes[node.parent]
        return node.control


def node_is_safe(model, mean, depth, obstacles, delta_o, t):
    for obs in obstacles:
        clear = obs.radius + node_clearance(model, depth, delta_o)
        if np.linalg.norm(mean - np.asarray(obs.center_at(t))) < clear:
            return False
    return True


@dataclass(frozen=True)
class CcrrtObjective:
    """Distance to the reference path plus a weighted goal distance."""

    waypoints: tuple
    goal: tuple
    goal_weight: float = 0.5

    def score(self, point):
        pts = np.asarray(self.waypoints, dtype=float)
        point = np.asarray(point, dtype=float)
        best = np.inf
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            denom = float(ab @ ab)
            s = np.clip((point - a) @ ab / denom, 0.0, 1.0) if denom > 0 \
                else 0.0
            best = min(best, float(np.linalg.norm(point - (a + s * ab))))
        return best + self.goal_weight * float(
            np.linalg.norm(point - np.asarray(self.goal)))


def ccrrt_plan_cycle(model, state, obstacles, objective, params, rng,
                     t_now=0.0):
    """One planning cycle: grow, prune, rank, return the best first control.

    Returns (control, tree, best_leaf).  Raises CcrrtStuckError when no
    safe branch exists within the node budget.
    """
    state = np.asarray(state, dtype=float)
    tree = RrtTree()
    tree.add(RrtNode(state, 0, -1, None))
    goal = np.asarray(objective.goal, dtype=float)
    lo = np.asarray(params.sample_lo, dtype=float)
    hi = np.asarray(params.sample_hi, dtype=float)
    leaves = set()
    for _ in range(params.node_budget):
        target = goal if rng.uniform() < params.goal_bias \
            else rng.uniform(lo, hi)
        means = np.array([n.mean for n in tree.nodes])
        near = int(np.argmin(np.sum((means - target) ** 2, axis=1)))
        node = tree.nodes[near]
        direction = target - node.mean
        dist = float(np.linalg.norm(direction))
        if dist < 1e-12:
            continue
        step = min(params.step_length, dist)
        mean = node.mean + direction / dist * step
        depth = node.depth + 1
        t = t_now + depth * model.dt
        if not node_is_safe(model, mean, depth, obstacles, params.delta_o,
                            t):
            continue  # pruned
        control = tuple((mean - node.mean) / model.dt)
        idx = tree.add(RrtNode(mean, depth, near, control))
        leaves.discard(near)
        leaves.add(idx)
    if not leaves:
        raise CcrrtStuckError("no safe branch within the node budget")
    best_leaf = min(leaves, key=lambda i: (objective.score(
        tree.nodes[i].mean), i))
    return tree.first_control(best_leaf), tree, best_leaf


def execute(model, state, control, rng):
    """One noisy step of the point model."""
    state = np.asarray(state, dtype=float)
    noise = rng.normal(0.0, model.std, 2)
    return tuple(state + model.dt * np.asarray(control) + noise)


@dataclass
class CcrrtRunResult:
    status: str                     # goal-reached | planner-stuck |
                                    # budget-violated
    poses: list
    logs: list
    report: dict


def run_to_goal(model, state, obstacles, objective, params, goal_radius,
                rng, max_cycles=200):
    """MPC loop: replan each cycle, execute one step; same cycle-log
    format as the tube planner for side-by-side reports."""
    poses = [tuple(float(v) for v in state)]
    logs = []
    n = 0
    status = "goal-reached"
    goal = np.asarray(objective.goal, dtype=float)
    state = np.asarray(state, dtype=float)
    while True:
        if np.linalg.norm(state - goal) <= goal_radius:
            break
        if n >= max_cycles:
            status = "budget-violated"
            break
        t_now = n * model.dt
        try:
            control, tree, best = ccrrt_plan_cycle(
                model, state, obstacles, objective, params, rng, t_now)
        except CcrrtStuckError:
            status = "planner-stuck"
            break
        score = objective.score(tree.nodes[best].mean)
        state = np.asarray(execute(model, state, control, rng))
        n += 1
        logs.append(PlanningCycleLog(n, list(poses[-1]), [best], best,
                                     {best: score}, {}, 0.0, 0.0))
        poses.append(tuple(float(v) for v in state))
    report = {"status": status, "cycles": n,
              "goal_reached": status == "goal-reached"}
    return CcrrtRunResult(status, poses, logs, report)


def collision_rate(poses, obstacles, dt):
    """Fraction of visited states inside any obstacle disc."""
    if not poses:
        return 0.0
    hits = 0
    for k, pose in enumerate(poses):
        p = np.asarray(pose[:2], dtype=float)
        t = k * dt
        if any(np.linalg.norm(p - np.asarray(o.center_at(t))) < o.radius
               for o in obstacles):
            hits += 1
    return hits / len(poses)
