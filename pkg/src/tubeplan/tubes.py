"""Motion primitives: nominal trajectory fitting and probabilistic tubes.

A motion primitive is a control sequence together with a polynomial nominal
trajectory x̄(t) on t in [0, 1] (discrete step k maps to t = k/T) and a tube
{x : (x - x̄(t))' Q (x - x̄(t)) <= 1} sized so the system state stays inside
with probability at least 1 - delta_tube at every step.  Two verifiers are
available:

* sampling: simulate N rollouts, require the in-tube fraction >= 1 -
  delta_tube at every step;
* analytical: with z = (x_k - x̄)' Q (x_k - x̄) - 1, require E[z] <= 0 and
  (E[z^2] - E[z]^2) / E[z^2] <= delta_tube (a one-sided concentration
  bound on Prob(z >= 0)); needs exact position moments to order 4.

The analytical test is conservative, so its minimal radius is at least the
sampling one.  Sizing is a bisection on the radius; containment is monotone
in the radius (nested discs), which makes the bisection exact up to
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from .dynamics import ControlSequence, StateMoments, SystemModel
from .poly import Polynomial

DEFAULT_DELTA_TUBE = 0.001
RADIUS_BOUNDS = (1e-4, 10.0)
RADIUS_TOL = 1e-3
LIBRARY_FORMAT_VERSION = 1


class TubeSizingError(ValueError):
    """No radius within the search bounds passes the verifier."""


@dataclass(frozen=True)
class NominalTrajectory:
    """Per-coordinate polynomials in the scaled time t in [0, 1]."""

    x_poly: Polynomial
    y_poly: Polynomial
    theta: tuple                    # fitted parameter record

    def evaluate(self, t):
        """Nominal position; t scalar -> (2,), t array (N,) -> (N, 2)."""
        t = np.asarray(t, dtype=float)
        pts = np.atleast_1d(t).reshape(-1, 1)
        out = np.column_stack([self.x_poly.evaluate(pts),
                               self.y_poly.evaluate(pts)])
        return out if t.ndim else out[0]

    def heading(self, t):
        """Tangent direction atan2(y'(t), x'(t))."""
        dx = _derivative(self.x_poly).evaluate(np.array([[float(t)]]))[0]
        dy = _derivative(self.y_poly).evaluate(np.array([[float(t)]]))[0]
        return float(np.arctan2(dy, dx))

    def to_json(self):
        return {"x": self.x_poly.to_pairs(), "y": self.y_poly.to_pairs(),
                "theta": list(self.theta)}

    @classmethod
    def from_json(cls, d):
        return cls(Polynomial.from_pairs(1, d["x"]),
                   Polynomial.from_pairs(1, d["y"]),
                   tuple(d["theta"]))


def _derivative(p):
    """d/dt of a univariate polynomial."""
    terms = {}
    for (e,), c in p.terms.items():
        if e > 0:
            terms[(e - 1,)] = terms.get((e - 1,), 0.0) + e * c
    return Polynomial(1, terms)


@dataclass(frozen=True)
class Tube:
    nominal: NominalTrajectory
    q_matrix: np.ndarray            # 2x2 positive definite
    delta_tube: float

    def __post_init__(self):
        q = np.asarray(self.q_matrix, dtype=float)
        object.__setattr__(self, "q_matrix", q)
        if q.shape != (2, 2) or np.linalg.eigvalsh(0.5 * (q + q.T))[0] <= 0:
            raise ValueError("tube matrix must be 2x2 positive definite")
        if not 0.0 < self.delta_tube < 1.0:
            raise ValueError("delta_tube must be in (0, 1)")

    @property
    def radius(self):
        """Disc radius r with Q = r^-2 I; requires an isotropic tube."""
        q = self.q_matrix
        if abs(q[0, 0] - q[1, 1]) > 1e-12 * q[0, 0] or abs(q[0, 1]) > 1e-15:
            raise ValueError("radius is defined for isotropic tubes only")
        return 1.0 / np.sqrt(q[0, 0])

    def to_json(self):
        return {"nominal": self.nominal.to_json(),
                "q": self.q_matrix.tolist(), "delta_tube": self.delta_tube}

    @classmethod
    def from_json(cls, d):
        return cls(NominalTrajectory.from_json(d["nominal"]),
                   np.array(d["q"]), d["delta_tube"])


@dataclass
class MotionPrimitive:
    """Control sequence, fitted nominal, sized tube.

    ``start`` is the canonical-frame initial state ((0, 0) underwater,
    (0, 0, v0, th0) ground).  ``index`` orders primitives left to right by
    terminal heading.
    """

    controls: ControlSequence
    start: tuple
    nominal: NominalTrajectory | None = None
    tube: Tube | None = None
    moments: StateMoments | None = None
    index: int = 0
    label: str = ""

    @property
    def horizon(self):
        return self.controls.horizon


# ---------------------------------------------------------------------------
# nominal fitting


def fit_nominal(expected_states, times=None, tol=1e-10, max_iter=500):
    """Least-squares fit of x(t) = th1*t, y(t) = th2*x(t)^2.

    ``expected_states``: (T+1, 2) points at t = k/T (or explicit ``times``).
    Alternates closed-form updates: th1 solves a cubic stationarity
    condition (smallest-objective real root), th2 is linear least squares;
    iterated until the parameters move by less than ``tol``.
    """
    pts = np.asarray(expected_states, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least 2 planar points")
    if np.ptp(pts, axis=0).max() == 0.0:
        raise ValueError("degenerate fit: zero-length trajectory")
    t = (np.linspace(0.0, 1.0, len(pts)) if times is None
         else np.asarray(times, dtype=float))
    x, y = pts[:, 0], pts[:, 1]

    t2, t4 = np.sum(t ** 2), np.sum(t ** 4)
    tx = np.sum(t * x)
    t2y = np.sum(t ** 2 * y)

    def objective(th1, th2):
        return np.sum((x - th1 * t) ** 2 + (y - th2 * th1 ** 2 * t ** 2) ** 2)

    th1 = tx / t2
    th2 = 0.0
    for _ in range(max_iter):
        # th2 step: y residual linear in th2 for fixed th1
        u2 = th1 ** 4 * t4
        th2_new = th1 ** 2 * t2y / u2 if u2 > 0 else 0.0
        # th1 step: stationarity of the joint objective is a cubic
        roots = np.roots([2 * th2_new ** 2 * t4, 0.0,
                          t2 - 2 * th2_new * t2y, -tx])
        real = roots[np.abs(roots.imag) < 1e-9].real
        th1_new = min(real, key=lambda r: objective(r, th2_new)) \
            if real.size else th1
        moved = max(abs(th1_new - th1), abs(th2_new - th2))
        th1, th2 = float(th1_new), float(th2_new)
        if moved <= tol:
            break
    tv = Polynomial.variable(0, 1)
    return NominalTrajectory(tv.scale(th1), (tv * tv).scale(th2 * th1 ** 2),
                             (th1, th2))


# ---------------------------------------------------------------------------
# verifiers


def _step_offsets(traj, nominal):
    """Per-step displacement of every sample from the nominal: (N, T+1, 2)."""
    n_step = traj.shape[1]
    centers = nominal.evaluate(np.linspace(0.0, 1.0, n_step))
    return traj[:, :, :2] - centers[None, :, :]


def verify_tube_sampling(model, primitive, phi, n, delta_tube, rng):
    """True iff at every step the fraction of simulated samples with
    phi*|x_k - x̄(k/T)|^2 <= 1 is at least 1 - delta_tube."""
    if phi <= 0:
        raise ValueError("phi must be > 0")
    if n < 1.0 / delta_tube:
        raise ValueError("sample count below 1/delta_tube resolution")
    init = np.tile(np.asarray(primitive.start, dtype=float), (n, 1))
    traj = dyn.simulate(model, init, primitive.controls, rng)
    d2 = np.sum(_step_offsets(traj, primitive.nominal) ** 2, axis=2)
    frac_in = np.mean(phi * d2 <= 1.0, axis=0)
    return bool(np.all(frac_in >= 1.0 - delta_tube))


def _central_table(table, a, b, order=dyn.MOMENT_ORDER):
    """E[(x-a)^i (y-b)^j] from the raw moment table.

    Also returns a rounding-noise bound per entry (machine epsilon times
    the sum of absolute binomial terms): the alternating sums cancel
    catastrophically when the state is nearly deterministic, and callers
    must not trust central moments below that bound.
    """
    from math import comb
    out = np.zeros_like(table)
    err = np.zeros_like(table)
    eps = np.finfo(float).eps
    for i in range(order + 1):
        for j in range(order + 1 - i):
            s = 0.0
            sabs = 0.0
            for p in range(i + 1):
                for q in range(j + 1):
                    term = (comb(i, p) * comb(j, q) * (-a) ** (i - p)
                            * (-b) ** (j - q) * table[p, q])
                    s += term
                    sabs += abs(term)
            out[i, j] = s
            err[i, j] = 8.0 * eps * sabs
    return out, err


def tube_step_statistics(moments, nominal, phi):
    """(E[z], E[z^2]) per step for z = phi*|x_k - x̄(k/T)|^2 - 1.

    E[z^2] is assembled as Var(z) + E[z]^2 with Var(s) clamped to zero when
    it falls inside the rounding-noise bound of the central moments.
    """
    n_step = len(moments.tables)
    centers = nominal.evaluate(np.linspace(0.0, 1.0, n_step))
    ez = np.empty(n_step)
    ez2 = np.empty(n_step)
    for k, table in enumerate(moments.tables):
        c, noise = _central_table(table, centers[k, 0], centers[k, 1])
        es = max(c[2, 0] + c[0, 2], 0.0)
        es2 = c[4, 0] + 2.0 * c[2, 2] + c[0, 4]
        var_s = es2 - es * es
        bound = (noise[4, 0] + 2.0 * noise[2, 2] + noise[0, 4]
                 + 2.0 * es * (noise[2, 0] + noise[0, 2]))
        if var_s <= bound:
            var_s = 0.0
        ez[k] = phi * es - 1.0
        ez2[k] = phi * phi * var_s + ez[k] ** 2
    return ez, ez2


def verify_tube_analytical(moments, nominal, phi, delta_tube):
    """Concentration-bound verifier from exact order-4 position moments.

    Passes iff at every step E[z] <= 0 and Var(z)/E[z^2] <= delta_tube
    (then Prob(z >= 0) <= Var/(Var + E[z]^2) = Var/E[z^2] <= delta_tube).
    A step with E[z^2] = 0 is deterministic and passes iff E[z] <= 0.
    """
    if phi <= 0:
        raise ValueError("phi must be > 0")
    ez, ez2 = tube_step_statistics(moments, nominal, phi)
    for k in range(len(ez)):
        if ez[k] > 0.0:
            return False
        if ez2[k] <= 0.0:
            continue
        if ez2[k] - ez[k] ** 2 > delta_tube * ez2[k]:
            return False
    return True


# ---------------------------------------------------------------------------
# sizing


def size_tube(model, primitive, verifier="analytical",
              delta_tube=DEFAULT_DELTA_TUBE, bounds=RADIUS_BOUNDS,
              tol=RADIUS_TOL, n_samples=10_000, seed=0):
    """Minimal-radius tube by bisection on the disc radius.

    Containment is monotone in the radius, so bisection brackets the
    smallest passing radius to within ``tol``; the returned tube uses the
    passing endpoint (never the failing one).  The sampling verifier reuses
    one seeded batch of rollouts across all radii, which keeps the
    pass/fail boundary a deterministic function of the seed.
    """
    if primitive.nominal is None:
        raise ValueError("primitive has no fitted nominal")
    if tol <= 0:
        raise ValueError("tolerance must be > 0")
    lo, hi = bounds

    if verifier == "analytical":
        if primitive.moments is None:
            raise ValueError("analytical sizing needs propagated moments")

        def passes(r):
            return verify_tube_analytical(primitive.moments,
                                          primitive.nominal, r ** -2,
                                          delta_tube)
    elif verifier == "sampling":
        if n_samples < 1.0 / delta_tube:
            raise ValueError("sample count below 1/delta_tube resolution")
        rng = np.random.default_rng(seed)
        init = np.tile(np.asarray(primitive.start, dtype=float),
                       (n_samples, 1))
        traj = dyn.simulate(model, init, primitive.controls, rng)
        dists = np.sqrt(np.sum(_step_offsets(traj, primitive.nominal) ** 2,
                               axis=2))

        def passes(r):
            return bool(np.all(np.mean(dists <= r, axis=0)
                               >= 1.0 - delta_tube))
    else:
        raise ValueError(f"unknown verifier {verifier!r}")

    if passes(lo):
        hi = lo
    elif not passes(hi):
        raise TubeSizingError(
            f"verifier fails even at radius {hi}: primitive not sizeable")
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if passes(mid):
                hi = mid
            else:
                lo = mid
    phi = hi ** -2
    return Tube(primitive.nominal, phi * np.eye(2), delta_tube)


# ---------------------------------------------------------------------------
# library construction


def build_library(model, specs, method="control-sampling",
                  verifier="analytical", delta_tube=DEFAULT_DELTA_TUBE,
                  bounds=RADIUS_BOUNDS, tol=RADIUS_TOL, n_samples=10_000,
                  seed=0):
    """Fit and size one primitive per spec; order left to right.

    ``control-sampling`` specs are explicit (v, th) control sequences for
    the underwater model.  ``state-tracking`` specs are dicts with
    ``targets`` (list of (vbar, thbar)) and ``start`` ((v0, th0)) for the
    ground model's tracking law.  Primitives are sorted by terminal nominal
    heading, leftmost (largest heading) first.
    """
    prims = []
    for spec in specs:
        if method == "control-sampling":
            controls = dyn.explicit_controls(spec)
            start = (0.0, 0.0)
            moments = dyn.propagate_moments(model, start, controls)
        elif method == "state-tracking":
            controls = dyn.tracking_controls(spec["targets"])
            v0, th0 = spec["start"]
            start = (0.0, 0.0, float(v0), float(th0))
            moments = dyn.propagate_moments(model, ((0.0, 0.0), v0, th0),
                                            controls)
        else:
            raise ValueError(f"unknown method {method!r}")
        expected = np.array([moments.first_moments(k)
                             for k in range(controls.horizon + 1)])
        nominal = fit_nominal(expected)
        prim = MotionPrimitive(controls, start, nominal, None, moments)
        prim.tube = size_tube(model, prim, verifier, delta_tube, bounds,
                              tol, n_samples, seed)
        prims.append(prim)
    prims.sort(key=lambda p: -p.nominal.heading(1.0))
    for i, prim in enumerate(prims):
        prim.index = i
        prim.label = f"primitive-{i}"
    return prims


def default_underwater_specs(horizon=5, speed=1.0):
    """Five fanned explicit control sequences, straight in the middle."""
    rates = (1.2, 0.6, 0.0, -0.6, -1.2)  # heading ramp slope, rad per unit t
    return [[(speed, rate * (k + 1) / horizon) for k in range(horizon)]
            for rate in rates]


def default_ground_specs(horizon=5, speed=1.0,
                         rates=(1.2, 0.6, 0.0, -0.6, -1.2),
                         target_offset=0.0):
    """Five tracking-target sequences from start (v0, th0) = (speed, 0).

    ``target_offset`` shifts every heading target; setting it to minus the
    per-step mean of the heading noise makes the expected headings follow
    the ramps exactly when the noise is biased.
    """
    return [{"targets": [(speed, rate * (k + 1) / horizon + target_offset)
                         for k in range(horizon)],
             "start": (speed, 0.0)} for rate in rates]


# ---------------------------------------------------------------------------
# serialization


def library_to_json(model, primitives, verifier="analytical", seed=0):
    return {
        "version": LIBRARY_FORMAT_VERSION,
        "model": model.to_json(),
        "verifier": verifier,
        "seed": seed,
        "primitives": [{
            "controls": p.controls.to_json(),
            "start": list(p.start),
            "nominal": p.nominal.to_json(),
            "tube": p.tube.to_json(),
            "index": p.index,
            "label": p.label,
        } for p in primitives],
    }


def library_from_json(d):
    if d.get("version") != LIBRARY_FORMAT_VERSION:
        raise ValueError(f"unsupported library format version "
                         f"{d.get('version')!r}")
    model = SystemModel.from_json(d["model"])
    prims = []
    for pd in d["primitives"]:
        controls = ControlSequence.from_json(pd["controls"])
        start = tuple(pd["start"])
        init = (start[:2], start[2], start[3]) if len(start) == 4 else start
        moments = dyn.propagate_moments(model, init, controls)
        prims.append(MotionPrimitive(
            controls, start, NominalTrajectory.from_json(pd["nominal"]),
            Tube.from_json(pd["tube"]), moments, pd["index"], pd["label"]))
    return model, prims
