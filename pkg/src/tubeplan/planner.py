"""Online risk-bounded planning loop.

Each cycle recenters a body-frame primitive library at the current pose,
certifies the recentred tubes against the risk contours, picks the
certified primitive with the lowest objective score (ties to the lowest
index), executes its first step(s), and accounts cumulative risk.  After N
cycles the collision probability is bounded both linearly,
delta_o + N*delta_tube, and by the product form
delta_o + (1 - (1 - delta_tube)^N); the budget delta_o + M*delta_tube <=
delta is fixed offline from a cycle-count cap M.

Recentring is a rigid transform.  For the underwater model the noise
enters through the absolute heading only, so translating and rotating a
primitive transforms its state distribution exactly.  For the ground
vehicle the first position increment is a deterministic function of the
measured (v, theta); the transform anchors the library primitive at its
own post-first-step point, which makes the recentred distribution exact at
every later step, and the cycle separately point-checks the measured
state's own contour membership (the tube cross-section at t=0 need not
contain it when the measured speed differs from the library's).

The planner never executes an uncertified primitive: if no candidate
certifies, it stops and reports rather than falling back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import contours as ct
from . import dynamics as dyn
from . import sos
from .poly import Polynomial
from .tubes import MotionPrimitive, NominalTrajectory, Tube


class PlannerStuckError(RuntimeError):
    """No primitive could be certified at the current pose."""


@dataclass(frozen=True)
class RiskBudget:
    delta: float                    # total collision risk
    cycles_cap: int                 # upper bound M on planning cycles
    delta_o: float                  # per-contour risk level
    delta_tube: float               # per-cycle tube risk

    def __post_init__(self):
        vals = (self.delta, self.delta_o, self.delta_tube)
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise ValueError("risk values must lie in [0, 1]")
        if self.cycles_cap < 1:
            raise ValueError("cycle cap must be >= 1")
        if self.delta_o + self.cycles_cap * self.delta_tube > self.delta + 1e-12:
            raise ValueError("risk split exceeds the total budget")


def allocate_risk(delta, cycles_cap, delta_tube=0.001):
    """Fix delta_tube and give the rest of the budget to the contours."""
    if not 0.0 < delta < 1.0:
        raise ValueError("total risk must be in (0, 1)")
    if cycles_cap < 1:
        raise ValueError("cycle cap must be >= 1")
    delta_o = delta - cycles_cap * delta_tube
    if delta_o <= 0.0:
        raise ValueError(
            f"infeasible allocation: delta_o = {delta_o:.4g} <= 0")
    return RiskBudget(delta, cycles_cap, delta_o, delta_tube)


def linear_risk_bound(budget, n):
    return budget.delta_o + n * budget.delta_tube


def product_risk_bound(budget, n):
    return budget.delta_o + (1.0 - (1.0 - budget.delta_tube) ** n)


# ---------------------------------------------------------------------------
# recentring


@dataclass
class PlacedPrimitive:
    """A library primitive rigidly transformed to the current pose."""

    base: MotionPrimitive
    nominal: NominalTrajectory      # world frame
    tube: Tube                      # world frame
    controls: dyn.ControlSequence   # world frame
    heading: float                  # pose heading used for the transform
    origin: np.ndarray = None       # world image of the body anchor
    anchor: np.ndarray = None       # body-frame anchor point
    score: float = np.inf

    @property
    def index(self):
        return self.base.index

    def expected_states(self):
        """World-frame expected positions at every step."""
        pts = np.array([self.base.moments.first_moments(k)
                        for k in range(self.base.horizon + 1)])
        return self._transform(pts)

    def _transform(self, pts):
        c, s = np.cos(self.heading), np.sin(self.heading)
        rot = np.array([[c, -s], [s, c]])
        return self.origin + (pts - self.anchor) @ rot.T

    def terminal_heading(self):
        """Expected world heading at the end of the primitive.

        Uses the propagated heading mean when the model carries one (the
        fitted nominal's tangent cannot represent maneuvers whose heading
        returns to zero); falls back to the nominal tangent otherwise.
        """
        mean_theta = self.base.moments.mean_theta
        if mean_theta is not None:
            return self.heading + float(mean_theta[-1])
        return self.heading + self.base.nominal.heading(1.0)


def _rotate_nominal(nominal, origin, heading, anchor=(0.0, 0.0)):
    """World nominal W(t) = origin + R(heading) (x̄(t) - anchor)."""
    c, s = np.cos(heading), np.sin(heading)
    ax, ay = anchor
    bx = nominal.x_poly - ax
    by = nominal.y_poly - ay
    wx = bx.scale(c) - by.scale(s) + origin[0]
    wy = bx.scale(s) + by.scale(c) + origin[1]
    return NominalTrajectory(wx, wy, nominal.theta)


def recentre(model, primitive, pose, road_frame=False):
    """Place a body-frame primitive at the current pose.

    Underwater pose: (x, y, heading).  Ground pose: the full measured
    state (x, y, v, theta); the transform is anchored at the primitive's
    deterministic post-first-step point so the recentred distribution is
    exact from step 1 on.

    With ``road_frame`` (ground model only) the primitive is translated
    but not rotated: the tracking law overwrites the heading outright, so
    primitives designed in a fixed road frame are trackable from any
    measured heading, and repeated replanning cannot compound it.
    """
    if model.kind == "underwater":
        x, y, psi = pose
        origin, anchor = (x, y), (0.0, 0.0)
        controls = dyn.explicit_controls(
            [(v, th + psi) for v, th in primitive.controls.entries])
    else:
        x, y, v, psi = pose
        rot = 0.0 if road_frame else psi
        v0 = primitive.start[2]
        p1 = (x + model.dt * v * np.cos(psi), y + model.dt * v * np.sin(psi))
        origin, anchor = p1, (model.dt * v0, 0.0)
        controls = dyn.tracking_controls(
            [(vb, tb + rot) for vb, tb in primitive.controls.entries])
        psi = rot
    nominal = _rotate_nominal(primitive.nominal, origin, psi, anchor)
    tube = Tube(nominal, primitive.tube.q_matrix, primitive.tube.delta_tube)
    return PlacedPrimitive(primitive, nominal, tube, controls, psi,
                           np.asarray(origin, dtype=float),
                           np.asarray(anchor, dtype=float))


# ---------------------------------------------------------------------------
# objectives


class PathTrackingObjective:
    """Sum of squared distances of expected future states to a
    piecewise-linear reference path, plus a weighted distance of the
    terminal expected state to the goal.

    The goal term breaks the symmetry of pure cross-track tracking:
    without it a greedy planner can settle into an orbit that keeps the
    cross-track error constant while making no progress."""

    def __init__(self, waypoints, goal=None, goal_weight=1.0):
        self.waypoints = np.asarray(waypoints, dtype=float)
        if self.waypoints.ndim != 2 or len(self.waypoints) < 2:
            raise ValueError("path needs at least two waypoints")
        self.goal = np.asarray(self.waypoints[-1] if goal is None else goal,
                               dtype=float)
        self.goal_weight = float(goal_weight)

    def distance_squared(self, pts):
        pts = np.atleast_2d(pts)
        best = np.full(len(pts), np.inf)
        for a, b in zip(self.waypoints[:-1], self.waypoints[1:]):
            ab = b - a
            denom = float(ab @ ab)
            s = np.clip((pts - a) @ ab / denom, 0.0, 1.0) if denom > 0 \
                else np.zeros(len(pts))
            proj = a + s[:, None] * ab
            best = np.minimum(best, np.sum((pts - proj) ** 2, axis=1))
        return best

    def score(self, placed):
        pts = placed.expected_states()[1:]
        cross = float(np.sum(self.distance_squared(pts)))
        to_goal = float(np.linalg.norm(pts[-1] - self.goal))
        return cross + self.goal_weight * to_goal


class TerminalCostObjective:
    """Lane-change style terminal cost on (y, heading) with a hard
    heading-corridor penalty."""

    def __init__(self, target_y=1.0, heading_weight=10.0,
                 heading_limit=np.pi / 6.0, penalty=1e7):
        self.target_y = target_y
        self.heading_weight = heading_weight
        self.heading_limit = heading_limit
        self.penalty = penalty

    def score(self, placed):
        y_end = placed.expected_states()[-1][1]
        th_end = placed.terminal_heading()
        cost = (y_end - self.target_y) ** 2 \
            + self.heading_weight * th_end ** 2
        if abs(th_end) > self.heading_limit:
            cost += self.penalty
        return float(cost)


# ---------------------------------------------------------------------------
# one planning cycle


@dataclass
class PlannerOptions:
    cull: bool = True
    cull_margin: float = 0.0        # added to the derived cull radius
    binary_search: bool = False     # probe the left-right order instead of
                                    # certifying in objective order
    precheck: bool = True
    road_frame: bool = False        # translate-only recentring (ground)


@dataclass
class PlanningCycleLog:
    cycle: int
    state: list
    certified: list                 # primitive indices proven safe
    chosen: int | None
    scores: dict                    # index -> objective value
    certificate_times: dict         # index -> seconds
    linear_bound: float
    product_bound: float

    def to_json(self):
        return {"cycle": self.cycle, "state": self.state,
                "certified": self.certified, "chosen": self.chosen,
                "scores": {str(k): v for k, v in self.scores.items()},
                "certificate_times": {str(k): v for k, v in
                                      self.certificate_times.items()},
                "linear_bound": self.linear_bound,
                "product_bound": self.product_bound}


def _obstacle_extent(entry, delta, t):
    _, ax, ay = ct.outer_ellipse_params(entry, delta, t)
    return max(ax, ay)


def cull_contours(contours, position, tube_length, tube_radius, window,
                  margin=0.0):
    """Drop obstacles that cannot intersect any tube this cycle.

    An obstacle is kept when its center comes within
    extent + tube length + 3 * tube radius (+ margin) of the current
    position at either end of the time window.
    """
    position = np.asarray(position, dtype=float)
    kept = []
    for entry in contours.entries:
        extent = _obstacle_extent(entry, contours.delta, window[0])
        reach = extent + tube_length + 3.0 * tube_radius + margin
        # the center moves linearly over the window, so the minimum
        # distance is the point-to-segment distance, not an endpoint value
        a = np.asarray(entry.obstacle.center_at(window[0]))
        b = np.asarray(entry.obstacle.center_at(window[1]))
        ab = b - a
        denom = float(ab @ ab)
        s = np.clip((position - a) @ ab / denom, 0.0, 1.0) if denom > 0 \
            else 0.0
        dist = float(np.linalg.norm(position - (a + s * ab)))
        if dist <= reach:
            kept.append(entry)
    return ct.RiskContourSet(contours.delta, tuple(kept))


def point_is_safe(contours, position, t):
    return bool(ct.contour_membership(contours, np.asarray(position, float),
                                      t))


def plan_cycle(model, pose, library, contours, objective, t_now=0.0,
               options=None):
    """Choose the best certified primitive at the current pose.

    Candidates are certified in ascending objective order, so the first
    success is the argmin over the certified set; ties break to the lowest
    primitive index.  Raises PlannerStuckError when nothing certifies.
    """
    options = options or PlannerOptions()
    if model.kind == "ground" and contours.entries \
            and not point_is_safe(contours, pose[:2], t_now):
        raise PlannerStuckError(
            f"measured state {tuple(pose[:2])} violates a risk contour")
    placed = [recentre(model, prim, pose, options.road_frame)
              for prim in library]
    for p in placed:
        p.score = objective.score(p)
    horizon_s = library[0].horizon * model.dt
    window = (t_now, t_now + horizon_s)

    active = contours
    if options.cull and contours.entries:
        tube_len = max(np.linalg.norm(p.nominal.evaluate(1.0)
                                      - p.nominal.evaluate(0.0))
                       for p in placed)
        radius = max(p.tube.radius for p in placed)
        active = cull_contours(contours, pose[:2], tube_len, radius, window,
                               options.cull_margin)

    order = sorted(placed, key=lambda p: (p.score, p.index))
    if options.binary_search:
        order = _boundary_probe_order(placed)
    certified = []
    times = {}
    chosen = None
    for cand in order:
        cert = sos.certify_tube(cand.tube, active, interval=window,
                                precheck=options.precheck)
        times[cand.index] = cert.solve_time
        if cert.certified:
            certified.append(cand.index)
            chosen = cand
            break
    log = PlanningCycleLog(0, list(np.asarray(pose, dtype=float)),
                           certified, None if chosen is None
                           else chosen.index,
                           {p.index: p.score for p in placed}, times,
                           0.0, 0.0)
    if chosen is None:
        raise PlannerStuckError(
            f"no certified primitive at pose {tuple(pose)}")
    return chosen, log


def _boundary_probe_order(placed):
    """Bisection probe order over the left-right index range.

    Useful when the certified set is one contiguous band of the ordered
    library (typical when a single obstacle blocks one side): probing
    midpoints first finds a certified primitive in O(log n) attempts.
    """
    by_index = sorted(placed, key=lambda p: p.index)
    order = []
    spans = [(0, len(by_index) - 1)]
    while spans:
        lo, hi = spans.pop(0)
        if lo > hi:
            continue
        mid = (lo + hi) // 2
        order.append(by_index[mid])
        spans.append((lo, mid - 1))
        spans.append((mid + 1, hi))
    return order


# ---------------------------------------------------------------------------
# execution and the outer loop


def execute_steps(model, pose, placed, steps, rng):
    """Stochastic rollout of the first ``steps`` controls; returns the
    pose after every executed step (for the underwater model the carried
    heading is the last executed control's heading)."""
    if not 1 <= steps <= placed.base.horizon:
        raise ValueError("steps must be in [1, horizon]")
    controls = type(placed.controls)(placed.controls.kind,
                                     placed.controls.entries[:steps])
    if model.kind == "underwater":
        state = np.asarray(pose[:2], dtype=float)
        traj = dyn.simulate(model, state[None, :], controls, rng)
        return [(float(traj[0, k + 1, 0]), float(traj[0, k + 1, 1]),
                 float(placed.controls.entries[k][1]))
                for k in range(steps)]
    state = np.asarray(pose, dtype=float)
    traj = dyn.simulate(model, state[None, :], controls, rng)
    return [tuple(float(v) for v in traj[0, k + 1]) for k in range(steps)]


def execute(model, pose, placed, steps, rng):
    return execute_steps(model, pose, placed, steps, rng)[-1]


@dataclass
class PlanningTask:
    contours: ct.RiskContourSet
    goal: tuple
    goal_radius: float
    objective: object
    replan_stride: int = 2
    options: PlannerOptions = field(default_factory=PlannerOptions)
    goal_test: object = None        # optional pose predicate replacing the
                                    # goal disc

    def reached(self, pose):
        if self.goal_test is not None:
            return bool(self.goal_test(pose))
        gx, gy = self.goal
        return (pose[0] - gx) ** 2 + (pose[1] - gy) ** 2 \
            <= self.goal_radius ** 2


@dataclass
class RunResult:
    status: str                     # goal-reached | planner-stuck |
                                    # budget-violated
    poses: list
    logs: list
    report: dict


def run_to_goal(model, pose, library, task, budget, rng):
    """Plan/execute until the goal disc is reached or the budget is spent.

    Each cycle's log carries the exact cumulative risk bounds for the
    number of cycles executed so far.
    """
    poses = [tuple(float(v) for v in pose)]
    logs = []
    n = 0
    status = "goal-reached"
    while True:
        if task.reached(pose):
            break
        if n >= budget.cycles_cap:
            status = "budget-violated"
            break
        t_now = n * task.replan_stride * model.dt
        try:
            chosen, log = plan_cycle(model, pose, library, task.contours,
                                     task.objective, t_now, task.options)
        except PlannerStuckError:
            status = "planner-stuck"
            break
        # the goal disc can be smaller than one cycle's motion, so arrival
        # is checked after every executed step, not only at cycle ends
        step_poses = execute_steps(model, pose, chosen, task.replan_stride,
                                   rng)
        n += 1
        log.cycle = n
        log.linear_bound = linear_risk_bound(budget, n)
        log.product_bound = product_risk_bound(budget, n)
        logs.append(log)
        for p in step_poses:
            poses.append(tuple(float(v) for v in p))
            pose = p
            if task.reached(p):
                break
    report = {
        "status": status,
        "cycles": n,
        "goal_reached": status == "goal-reached",
        "delta": budget.delta,
        "delta_o": budget.delta_o,
        "delta_tube": budget.delta_tube,
        "linear_bound": linear_risk_bound(budget, n) if n else budget.delta_o,
        "product_bound": product_risk_bound(budget, n) if n
        else budget.delta_o,
    }
    return RunResult(status, poses, logs, report)
