"""Risk contours: deterministic inner approximations of chance constraints.

An uncertain obstacle {x : p(x, w, t) <= 0} with random shape parameters w
is converted into the pair of polynomials P2 = E[g] and P1 = E[g^2] in
(x, y, t), where g = -p.  By Cantelli's inequality, a state x at time t has
collision probability <= Delta whenever

    P2(x, t) <= 0   and   P2(x, t)^2 >= (1 - Delta) * P1(x, t).

The algebraic form avoids dividing by a near-zero P1; when P1 = 0 the
obstacle is deterministic at that point and membership reduces to the sign
of P2.  Membership implies risk <= Delta (inner approximation of the safe
set): false negatives are possible, false safety claims are not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial
from . import uncertainty as unc
from .uncertainty import DistributionSpec

# Axis inflation applied on top of the bisection tolerance when
# circumscribing the unsafe region with a quadratic.
OUTER_ELLIPSE_MARGIN = 1.02

# Variable convention for obstacle polynomials: x, y, t, then uncertainty
# variables w_0, w_1, ...
VAR_X, VAR_Y, VAR_T = 0, 1, 2


@dataclass(frozen=True)
class UncertainObstacle:
    """Polynomial obstacle {(x, y) : p(x, y, t, w...) <= 0}.

    ``shape`` tags the quadric family for the fast outer approximation:
    "disc" ((x-cx)^2 + (y-cy)^2 <= w^2), "ellipse" with a y_scale factor
    ((x-cx)^2 + s(y-cy)^2 <= w^2), or "generic".
    """

    poly: Polynomial                       # nvars = 3 + n_uncertain
    uncertainty: tuple                     # DistributionSpec per w variable
    center: tuple = (0.0, 0.0)
    velocity: tuple = (0.0, 0.0)
    shape: str = "generic"
    y_scale: float = 1.0

    def center_at(self, t):
        return (self.center[0] + self.velocity[0] * t,
                self.center[1] + self.velocity[1] * t)

    def uncertainty_assignment(self):
        return {VAR_T + 1 + i: d for i, d in enumerate(self.uncertainty)}


def disc_obstacle(center, radius_dist, velocity=(0.0, 0.0)):
    """(x - cx(t))^2 + (y - cy(t))^2 <= w^2, center moving at constant velocity."""
    return _quadric_obstacle(center, radius_dist, velocity, 1.0, "disc")


def ellipse_obstacle(center, radius_dist, y_scale=4.0, velocity=(0.0, 0.0)):
    """(x - cx(t))^2 + y_scale (y - cy(t))^2 <= w^2."""
    return _quadric_obstacle(center, radius_dist, velocity, y_scale, "ellipse")


def _quadric_obstacle(center, radius_dist, velocity, y_scale, shape):
    n = 4  # x, y, t, w
    x = Polynomial.variable(VAR_X, n)
    y = Polynomial.variable(VAR_Y, n)
    t = Polynomial.variable(VAR_T, n)
    w = Polynomial.variable(3, n)
    cx = center[0] + velocity[0] * t
    cy = center[1] + velocity[1] * t
    p = (x - cx) ** 2 + y_scale * (y - cy) ** 2 - w * w
    return UncertainObstacle(p, (radius_dist,), tuple(center), tuple(velocity),
                             shape, y_scale)


def obstacle_to_json(o):
    return {"shape": o.shape, "center": list(o.center),
            "velocity": list(o.velocity), "y_scale": o.y_scale,
            "radius": o.uncertainty[0].to_json()}


def obstacle_from_json(d):
    dist = DistributionSpec.from_json(d["radius"])
    if d["shape"] == "disc":
        return disc_obstacle(d["center"], dist, tuple(d.get("velocity", (0, 0))))
    if d["shape"] == "ellipse":
        return ellipse_obstacle(d["center"], dist, d.get("y_scale", 4.0),
                                tuple(d.get("velocity", (0, 0))))
    raise ValueError(f"unsupported obstacle shape {d['shape']!r}")


@dataclass(frozen=True)
class ContourEntry:
    """P1 = E[g^2], P2 = E[g] as polynomials in (x, y, t)."""

    p1: Polynomial
    p2: Polynomial
    obstacle: UncertainObstacle


@dataclass(frozen=True)
class RiskContourSet:
    delta: float
    entries: tuple

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("risk level must be in (0, 1)")


def time_shift(obs, velocity):
    """Replace the obstacle's motion with the given constant velocity."""
    return _quadric_obstacle(obs.center, obs.uncertainty[0], tuple(velocity),
                             obs.y_scale, obs.shape)


def build_contour(obs, delta):
    """(P1, P2) for one obstacle: expectations of g^2 and g over w."""
    if not 0.0 < delta < 1.0:
        raise ValueError("risk level must be in (0, 1)")
    assign = obs.uncertainty_assignment()
    g = -obs.poly
    p2 = unc.project(unc.partial_expectation(g, assign), [VAR_X, VAR_Y, VAR_T])
    p1 = unc.project(unc.partial_expectation(g * g, assign),
                     [VAR_X, VAR_Y, VAR_T])
    return ContourEntry(p1, p2, obs)


def build_contour_set(obstacles, delta):
    return RiskContourSet(delta, tuple(build_contour(o, delta)
                                       for o in obstacles))


def entry_membership(entry, delta, xy, t):
    """Membership test for one obstacle; vectorized over points.

    xy: (2,) or (N, 2); returns bool or bool array.
    """
    xy = np.asarray(xy, dtype=float)
    pts = np.atleast_2d(xy)
    full = np.column_stack([pts, np.full(len(pts), float(t))])
    v1 = entry.p1.evaluate(full)
    v2 = entry.p2.evaluate(full)
    ok = (v2 <= 0.0) & (v2 * v2 >= (1.0 - delta) * v1)
    # degenerate deterministic boundary: P1 == 0
    deg = v1 == 0.0
    if np.any(deg):
        ok = np.where(deg, v2 <= 0.0, ok)
    return ok if xy.ndim == 2 else bool(ok[0])


def contour_membership(cset, xy, t):
    """True iff the point is in every obstacle's risk contour at time t."""
    xy = np.asarray(xy, dtype=float)
    out = np.ones(len(np.atleast_2d(xy)), dtype=bool)
    for entry in cset.entries:
        out &= np.atleast_1d(entry_membership(entry, cset.delta, xy, t))
    return out if xy.ndim == 2 else bool(out[0])


def boundary_radius(entry, delta, t, direction, lo=0.0, hi=20.0, tol=1e-10):
    """Distance along ``direction`` from the obstacle center to the
    membership boundary, by radial bisection.

    Membership is radially monotone for the quadric families (the variance
    of g does not depend on position, while E[g^2] grows with distance).
    """
    cx, cy = entry.obstacle.center_at(t)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def member(r):
        return entry_membership(entry, delta,
                                np.array([cx + r * d[0], cy + r * d[1]]), t)

    if member(lo):
        return lo
    if not member(hi):
        raise ValueError("no membership boundary within the search radius")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if member(mid):
            hi = mid
        else:
            lo = mid
    return hi


def outer_ellipse(entry, delta, t, margin=OUTER_ELLIPSE_MARGIN):
    """Quadratic q(x, y) with {q <= 0} containing the non-membership region.

    Found by radial bisection along the obstacle's principal axes, then
    circumscribing with inflated axes.  Checks against q are conservative:
    q > 0 implies contour membership.
    """
    obs = entry.obstacle
    if obs.shape not in ("disc", "ellipse"):
        raise ValueError(f"outer approximation unsupported for shape "
                         f"{obs.shape!r}")
    ax = boundary_radius(entry, delta, t, (1.0, 0.0)) * margin
    ay = boundary_radius(entry, delta, t, (0.0, 1.0)) * margin
    cx, cy = obs.center_at(t)
    x = Polynomial.variable(0, 2)
    y = Polynomial.variable(1, 2)
    return ((x - cx) ** 2).scale(1.0 / ax ** 2) + \
        ((y - cy) ** 2).scale(1.0 / ay ** 2) - 1.0


def outer_ellipse_params(entry, delta, t, margin=OUTER_ELLIPSE_MARGIN):
    """(center, semi-axis-x, semi-axis-y) of the outer approximation."""
    ax = boundary_radius(entry, delta, t, (1.0, 0.0)) * margin
    ay = boundary_radius(entry, delta, t, (0.0, 1.0)) * margin
    return entry.obstacle.center_at(t), ax, ay


def outer_entry(entry, delta, margin=OUTER_ELLIPSE_MARGIN):
    """Contour entry for the quadratic outer approximation.

    With q the moving outer ellipse, membership of the replacement entry
    reduces to q >= 0 (P1 = P2^2 makes the variance test vacuous), so
    checks against it are conservative relative to the original entry
    while dropping the polynomial order from 4 to 2.
    """
    q = moving_outer_ellipse(entry, delta, margin)
    return ContourEntry(q * q, -q, entry.obstacle)


def outer_contour_set(cset, margin=OUTER_ELLIPSE_MARGIN):
    return RiskContourSet(cset.delta, tuple(outer_entry(e, cset.delta,
                                                        margin)
                                            for e in cset.entries))


def moving_outer_ellipse(entry, delta, margin=OUTER_ELLIPSE_MARGIN):
    """Outer approximation as a polynomial in (x, y, t) for a moving
    obstacle: the ellipse axes are computed once (they are
    time-invariant for constant-velocity motion) and the center follows
    the obstacle's path.
    """
    obs = entry.obstacle
    _, ax, ay = outer_ellipse_params(entry, delta, 0.0, margin)
    n = 3
    x = Polynomial.variable(VAR_X, n)
    y = Polynomial.variable(VAR_Y, n)
    t = Polynomial.variable(VAR_T, n)
    cx = obs.center[0] + obs.velocity[0] * t
    cy = obs.center[1] + obs.velocity[1] * t
    return ((x - cx) ** 2).scale(1.0 / ax ** 2) + \
        ((y - cy) ** 2).scale(1.0 / ay ** 2) - 1.0
