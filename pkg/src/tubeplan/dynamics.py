"""Benchmark stochastic systems and moment propagation.

Two models are supported:

* ``underwater``: planar kinematics with multiplicative trig noise,
      x' = x + dT (v + wv) cos(th + wth)
      y' = y + dT (v + wv) sin(th + wth)
  driven by an explicit per-step control sequence (v_k, th_k).

* ``ground``: unicycle with velocity/heading states,
      x' = x + dT v cos(th),   v' = v + dT (a + wv)
      y' = y + dT v sin(th),   th' = th + dT (u + wth)
  driven by a tracking control sequence of nominal targets
  (vbar_{k+1}, thbar_{k+1}); the tracking law a = (vbar' - v)/dT,
  u = (thbar' - th)/dT collapses the v, th dynamics to
  v' = vbar' + dT wv and th' = thbar' + dT wth.

In both cases the position increment at each step depends only on that
step's noise (and, for the ground model, the previous step's noise through
v, th), so increments are mutually independent and joint raw position
moments up to order 4 propagate exactly through multinomial expansion of
per-increment moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import uncertainty as unc
from .uncertainty import DistributionSpec, point_mass

MOMENT_ORDER = 4  # Cantelli on a quadratic form needs position moments to 4


@dataclass(frozen=True)
class SystemModel:
    kind: str                       # "underwater" | "ground"
    dt: float
    noise_v: DistributionSpec
    noise_theta: DistributionSpec

    def __post_init__(self):
        if self.kind not in ("underwater", "ground"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    @property
    def state_dim(self):
        return 2 if self.kind == "underwater" else 4

    @property
    def control_dim(self):
        return 2

    def to_json(self):
        return {"kind": self.kind, "dt": self.dt,
                "noise_v": self.noise_v.to_json(),
                "noise_theta": self.noise_theta.to_json()}

    @classmethod
    def from_json(cls, d):
        return cls(d["kind"], d["dt"],
                   DistributionSpec.from_json(d["noise_v"]),
                   DistributionSpec.from_json(d["noise_theta"]))


def underwater_model(dt=0.1,
                     noise_v=None, noise_theta=None):
    return SystemModel("underwater", dt,
                       noise_v or unc.uniform(-0.1, 0.1),
                       noise_theta or unc.uniform(-0.1, 0.1))


def ground_model(dt=0.1, noise_v=None, noise_theta=None):
    return SystemModel("ground", dt,
                       noise_v or unc.gaussian(0.0, 0.09),
                       noise_theta or unc.beta(1.0, 3.0, scale=3.0))


@dataclass(frozen=True)
class ControlSequence:
    """T control entries.

    ``explicit`` entries are (v_k, th_k) applied directly (underwater).
    ``tracking`` entries are nominal targets (vbar_{k+1}, thbar_{k+1})
    realized through the ground model's tracking law.
    """

    kind: str  # "explicit" | "tracking"
    entries: tuple  # T pairs

    def __post_init__(self):
        if self.kind not in ("explicit", "tracking"):
            raise ValueError(f"unknown control kind {self.kind!r}")
        if len(self.entries) < 1:
            raise ValueError("horizon must be >= 1")
        if not np.all(np.isfinite(np.asarray(self.entries, dtype=float))):
            raise ValueError("control entries must be finite")

    @property
    def horizon(self):
        return len(self.entries)

    def to_json(self):
        return {"kind": self.kind, "entries": [list(e) for e in self.entries]}

    @classmethod
    def from_json(cls, d):
        return cls(d["kind"], tuple(tuple(e) for e in d["entries"]))


def explicit_controls(entries):
    return ControlSequence("explicit", tuple(tuple(map(float, e)) for e in entries))


def tracking_controls(entries):
    return ControlSequence("tracking", tuple(tuple(map(float, e)) for e in entries))


# ---------------------------------------------------------------------------
# single step and Monte Carlo rollouts


def step(model, state, control, noise):
    """One exact application of the update equations.

    For the ground model, ``control`` is the (a, u) pair; use
    tracking_control_inputs to derive it from targets.
    """
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != model.state_dim:
        raise ValueError(f"state dim {state.shape[-1]} != {model.state_dim}")
    wv, wth = noise
    dt = model.dt
    if model.kind == "underwater":
        v, th = control
        ang = th + wth
        spd = v + wv
        return np.array([state[0] + dt * spd * np.cos(ang),
                         state[1] + dt * spd * np.sin(ang)])
    x, y, v, th = state
    a, u = control
    return np.array([x + dt * v * np.cos(th),
                     y + dt * v * np.sin(th),
                     v + dt * (a + wv),
                     th + dt * (u + wth)])


def tracking_control_inputs(model, state, target):
    """(a, u) steering v, th exactly onto (vbar, thbar) absent noise."""
    vbar, thbar = target
    return ((vbar - state[..., 2]) / model.dt,
            (thbar - state[..., 3]) / model.dt)


def simulate(model, initial, controls, rng):
    """Vectorized forward simulation.

    initial: array (N, state_dim) of start states.
    Returns trajectories of shape (N, T+1, state_dim); deterministic under
    a fixed generator state.
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    n_samp = initial.shape[0]
    T = controls.horizon
    dt = model.dt
    out = np.empty((n_samp, T + 1, model.state_dim))
    out[:, 0] = initial
    cur = initial.copy()
    for k, entry in enumerate(controls.entries):
        wv = unc.sample(model.noise_v, rng, n_samp)
        wth = unc.sample(model.noise_theta, rng, n_samp)
        if model.kind == "underwater":
            if controls.kind != "explicit":
                raise ValueError("underwater model takes explicit controls")
            v, th = entry
            ang = th + wth
            spd = v + wv
            cur = cur + dt * np.stack([spd * np.cos(ang), spd * np.sin(ang)], axis=1)
        else:
            nxt = np.empty_like(cur)
            nxt[:, 0] = cur[:, 0] + dt * cur[:, 2] * np.cos(cur[:, 3])
            nxt[:, 1] = cur[:, 1] + dt * cur[:, 2] * np.sin(cur[:, 3])
            if controls.kind == "tracking":
                vbar, thbar = entry
                nxt[:, 2] = vbar + dt * wv
                nxt[:, 3] = thbar + dt * wth
            else:
                a, u = entry
                nxt[:, 2] = cur[:, 2] + dt * (a + wv)
                nxt[:, 3] = cur[:, 3] + dt * (u + wth)
            cur = nxt
        out[:, k + 1] = cur
    return out


def trajectories_to_csv(traj, path):
    """Columns: sample, step, state components."""
    n_samp, n_step, dim = traj.shape
    cols = {2: ["x", "y"], 4: ["x", "y", "v", "theta"]}[dim]
    with open(path, "w") as fh:
        fh.write("sample,step," + ",".join(cols) + "\n")
        for i in range(n_samp):
            for k in range(n_step):
                vals = ",".join(f"{v:.12g}" for v in traj[i, k])
                fh.write(f"{i},{k},{vals}\n")


# ---------------------------------------------------------------------------
# analytical moment propagation


@dataclass
class StateMoments:
    """Joint raw position moments per time step.

    tables[k][i, j] = E[x_k^i y_k^j] for i + j <= MOMENT_ORDER (other
    entries zero).  mean_v / mean_theta are per-step first moments of the
    extra ground-model states (None for the underwater model).
    """

    tables: list                    # (order+1, order+1) arrays
    mean_v: list | None = None
    mean_theta: list | None = None

    def first_moments(self, k):
        t = self.tables[k]
        return np.array([t[1, 0], t[0, 1]])

    def covariance(self, k):
        t = self.tables[k]
        mx, my = t[1, 0], t[0, 1]
        return np.array([[t[2, 0] - mx * mx, t[1, 1] - mx * my],
                         [t[1, 1] - mx * my, t[0, 2] - my * my]])


def _initial_table(initial, order=MOMENT_ORDER):
    """Moment table for an independent per-coordinate initial distribution.

    ``initial`` is a deterministic point (len-2 array) or a pair of
    DistributionSpec.
    """
    if isinstance(initial[0], DistributionSpec):
        dx, dy = initial
    else:
        dx, dy = point_mass(float(initial[0])), point_mass(float(initial[1]))
    mx = unc.moment_sequence(dx, order)
    my = unc.moment_sequence(dy, order)
    t = np.zeros((order + 1, order + 1))
    for i in range(order + 1):
        for j in range(order + 1 - i):
            t[i, j] = mx[i] * my[j]
    return t


def _increment_moments(speed_dist, angle_dist, phase, dt, order=MOMENT_ORDER):
    """E[A^a B^b] for A = dt*s*cos(phase+w), B = dt*s*sin(phase+w).

    s ~ speed_dist and w ~ angle_dist are independent, so the moment
    factors into a speed power moment and a trig power moment.
    """
    sm = unc.moment_sequence(speed_dist, order)
    out = np.zeros((order + 1, order + 1))
    for a in range(order + 1):
        for b in range(order + 1 - a):
            out[a, b] = (dt ** (a + b) * sm[a + b]
                         * unc.trig_power_moment(angle_dist, phase, a, b))
    return out


def _convolve_tables(cur, inc, order=MOMENT_ORDER):
    """Moments of (x + A, y + B) with (x, y) independent of (A, B)."""
    out = np.zeros_like(cur)
    for p in range(order + 1):
        for q in range(order + 1 - p):
            s = 0.0
            for i in range(p + 1):
                for j in range(q + 1):
                    s += (comb(p, i) * comb(q, j)
                          * cur[i, j] * inc[p - i, q - j])
            out[p, q] = s
    return out


def _shift_dist(d, factor):
    return unc.scaled(d, factor)


def propagate_moments(model, initial, controls):
    """Exact raw position moments up to order 4 at every step.

    For the underwater model each increment dT(v+wv)*cis(th+wth) uses that
    step's noise only.  For the ground model under the tracking law,
    v_t = vbar_t + dT*wv and th_t = thbar_t + dT*wth depend on the previous
    step's noise only, so increments are again independent; the step-0
    increment is deterministic given (v0, th0).

    ``initial``: for underwater, a point or per-coordinate distribution
    pair; for ground, ((x0, y0) point/dists, v0, th0) with deterministic
    v0, th0.
    """
    dt = model.dt
    if model.kind == "underwater":
        if controls.kind != "explicit":
            raise ValueError("underwater model takes explicit controls")
        table = _initial_table(initial)
        tables = [table]
        for v, th in controls.entries:
            inc = _increment_moments(
                _offset_speed(model.noise_v, v), model.noise_theta, th, dt)
            table = _convolve_tables(table, inc)
            tables.append(table)
        return StateMoments(tables)

    if controls.kind != "tracking":
        raise ValueError("analytical propagation for the ground model "
                         "requires the tracking law")
    pos_init, v0, th0 = initial
    table = _initial_table(pos_init)
    tables = [table]
    mean_v, mean_theta = [float(v0)], [float(th0)]
    # step 0: deterministic speed/heading (v0, th0)
    inc = _increment_moments(point_mass(v0), point_mass(0.0), th0, dt)
    table = _convolve_tables(table, inc)
    tables.append(table)
    # v_k = vbar_k + dT wv, th_k = thbar_k + dT wth for k >= 1
    speed_noise = _shift_dist(model.noise_v, dt)
    angle_noise = _shift_dist(model.noise_theta, dt)
    targets = controls.entries
    for k in range(1, controls.horizon):
        vbar, thbar = targets[k - 1]
        mean_v.append(vbar + dt * unc.raw_moment(model.noise_v, 1))
        mean_theta.append(thbar + dt * unc.raw_moment(model.noise_theta, 1))
        inc = _increment_moments(
            _offset_speed(speed_noise, vbar), angle_noise, thbar, dt)
        table = _convolve_tables(table, inc)
        tables.append(table)
    vbar, thbar = targets[-1]
    mean_v.append(vbar + dt * unc.raw_moment(model.noise_v, 1))
    mean_theta.append(thbar + dt * unc.raw_moment(model.noise_theta, 1))
    return StateMoments(tables, mean_v, mean_theta)


def _offset_speed(d, v):
    """Distribution of v + w for w ~ d."""
    v = float(v)
    k, p = d.kind, d.params
    if k == "uniform":
        return unc.uniform(p[0] + v, p[1] + v)
    if k == "gaussian":
        return unc.gaussian(p[0] + v, p[1])
    if k == "beta":
        return unc.beta(p[0], p[1], p[2], p[3] + v)
    return point_mass(p[0] + v)
