"""Sum-of-squares safety certificates for tubes against risk contours.

A tube {x̄(t) + x̂ : x̂' Q x̂ <= 1, t in [0, 1]} is certified safe against a
contour pair (P1, P2) by exhibiting, for each of the two membership
inequalities, an exact polynomial identity

    target(u, t) = s0(u, t) + s1(u, t) * t(1-t) + s2(u, t) * (1 - u'u)

with s0, s1, s2 sums of squares, where

    target1 = P2(x̄(t) + L u, t)^2 - (1 - Delta) * P1(x̄(t) + L u, t)
    target2 = -P2(x̄(t) + L u, t)

and L = Q^{-1/2}, so the tube cross-section is the unit disc in u.  The
scaling keeps the generator coefficients at unit size for any tube radius
and lets the compiled SDP structure be cached per degree: successive
certifications only change the right-hand side.  Such identities prove the
targets nonnegative on the whole tube-time domain, i.e. every tube point
satisfies the contour membership conditions (E[g] <= 0 and a bounded
variance ratio); absence of a certificate proves nothing (one-sided test).

Certification accepts only after re-validating the solver output:
coefficient reconstruction residual <= EPS_MATCH and minimum Gram
eigenvalue >= -EPS_PSD per block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, monomial_basis
from .sdp import SdpProblem, eigen_floor, solve_feasibility

EPS_MATCH = 1e-7
EPS_PSD = 1e-8

# offset-coordinate variable convention: u_x, u_y, then scaled time t
U_X, U_Y, U_T = 0, 1, 2

# rejection grid for the cheap pointwise pre-check
PRECHECK_TIMES = 17
PRECHECK_DIRS = 12


@dataclass(frozen=True)
class SosProgram:
    """One SOS representation problem: target = SOS + sum sigma_i * gen_i."""

    target: Polynomial
    generators: tuple               # domain generator polynomials
    degree: int                     # even degree bound for the free SOS term

    def __post_init__(self):
        if self.degree < 0 or self.degree % 2:
            raise ValueError("degree bound must be even and >= 0")
        for g in self.generators:
            if g.nvars != self.target.nvars:
                raise ValueError("generator/target variable-set mismatch")


@dataclass
class Certificate:
    verdict: str                    # "certified-safe" | "not-certified"
    obstacles: list = field(default_factory=list)
    reason: str = ""
    solve_time: float = 0.0

    @property
    def certified(self):
        return self.verdict == "certified-safe"

    def to_json(self):
        return {"verdict": self.verdict, "reason": self.reason,
                "solve_time": self.solve_time, "obstacles": self.obstacles}


# ---------------------------------------------------------------------------
# target construction


def _lift_time_poly(p):
    """Univariate polynomial in t -> 3-var polynomial in (u_x, u_y, t)."""
    return Polynomial(3, {(0, 0, e): c for (e,), c in p.terms.items()})


def _tube_substitution(nominal, q):
    """[x, y, t] as polynomials of (u_x, u_y, t) for x = x̄(t) + L u."""
    q = np.asarray(q, dtype=float)
    ell = np.linalg.cholesky(np.linalg.inv(q))
    ux = Polynomial.variable(U_X, 3)
    uy = Polynomial.variable(U_Y, 3)
    t = Polynomial.variable(U_T, 3)
    x = _lift_time_poly(nominal.x_poly) + ux.scale(ell[0, 0]) \
        + uy.scale(ell[0, 1])
    y = _lift_time_poly(nominal.y_poly) + ux.scale(ell[1, 0]) \
        + uy.scale(ell[1, 1])
    return [x, y, t]


def _time_rescaled(p, interval):
    """Compose a contour polynomial's wall-clock time with the affine map
    from the unit interval."""
    t0, tf = interval
    if (t0, tf) == (0.0, 1.0):
        return p
    x = Polynomial.variable(0, 3)
    y = Polynomial.variable(1, 3)
    t = Polynomial.variable(2, 3)
    return p.compose([x, y, t.scale(tf - t0) + t0])


def build_targets(entry, nominal, q, delta, interval=(0.0, 1.0)):
    """Membership targets over the tube, in offset coordinates (u, t).

    target1 >= 0 on the domain encodes P2^2 >= (1 - Delta) P1 and
    target2 >= 0 encodes P2 <= 0 (the contour membership conditions)
    along every tube point x̄(t) + L u with |u| <= 1, t in [0, 1].
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError("risk level must be in [0, 1)")
    subs = _tube_substitution(nominal, q)
    p2c = _time_rescaled(entry.p2, interval).compose(subs)
    p1c = _time_rescaled(entry.p1, interval).compose(subs)
    target1 = p2c * p2c - p1c.scale(1.0 - delta)
    target2 = -p2c
    return target1, target2


def domain_generators():
    """t(1-t) and 1 - u'u: nonnegative exactly on the tube-time domain."""
    ux = Polynomial.variable(U_X, 3)
    uy = Polynomial.variable(U_Y, 3)
    t = Polynomial.variable(U_T, 3)
    return (t - t * t, Polynomial.constant(3, 1.0) - ux * ux - uy * uy)


def make_program(target, generators=None):
    """Assign the minimal degree-consistent multiplier bounds."""
    generators = domain_generators() if generators is None else generators
    degree = max(target.degree, 0)
    degree += degree % 2
    return SosProgram(target, tuple(generators), degree)


# ---------------------------------------------------------------------------
# compilation to SDP feasibility


@dataclass
class CompiledStructure:
    """Degree-dependent part of the SDP: reused across right-hand sides."""

    nvars: int
    degree: int
    bases: list                     # monomial basis per Gram block
    mono_index: dict                # monomial -> constraint row
    block_sizes: list
    a_ops: list                     # constraint tensors per block

    def problem_for(self, target):
        rhs = np.zeros(len(self.mono_index))
        for mono, coeff in target.terms.items():
            if mono not in self.mono_index:
                raise ValueError("target degree exceeds compiled bound")
            rhs[self.mono_index[mono]] = coeff
        return SdpProblem(list(self.block_sizes),
                          [a.copy() for a in self.a_ops],
                          [np.zeros((s, s)) for s in self.block_sizes],
                          rhs)


_structure_cache = {}


def _generator_key(generators):
    return tuple(tuple(sorted(g.terms.items())) for g in generators)


def compile_structure(nvars, degree, generators):
    key = (nvars, degree, _generator_key(generators))
    cached = _structure_cache.get(key)
    if cached is not None:
        return cached
    monos = monomial_basis(nvars, degree)
    mono_index = {m: k for k, m in enumerate(monos)}
    p = len(monos)
    bases = [monomial_basis(nvars, degree // 2)]
    gen_polys = [Polynomial.constant(nvars, 1.0)]
    for g in generators:
        half = (degree - g.degree) // 2
        if half < 0:
            raise ValueError("generator degree exceeds the target bound")
        bases.append(monomial_basis(nvars, half))
        gen_polys.append(g)
    block_sizes = [len(b) for b in bases]
    a_ops = []
    for basis, gen in zip(bases, gen_polys):
        s = len(basis)
        a = np.zeros((p, s, s))
        for i, mi in enumerate(basis):
            for j, mj in enumerate(basis):
                pair = tuple(a_ + b_ for a_, b_ in zip(mi, mj))
                for gm, gc in gen.terms.items():
                    mono = tuple(a_ + b_ for a_, b_ in zip(pair, gm))
                    a[mono_index[mono], i, j] += gc
        a_ops.append(a)
    structure = CompiledStructure(nvars, degree, bases, mono_index,
                                  block_sizes, a_ops)
    _structure_cache[key] = structure
    return structure


def compile_sos(program):
    """SDP feasibility problem whose PSD Gram blocks realize the identity
    target = z0' G0 z0 + sum_i gen_i * (z_i' G_i z_i) coefficient-wise."""
    structure = compile_structure(program.target.nvars, program.degree,
                                  program.generators)
    return structure.problem_for(program.target), structure


def solve_program(program, tol=1e-8):
    """Solve and re-validate: returns (accepted, info dict with Grams)."""
    problem, structure = compile_sos(program)
    res = solve_feasibility(problem, tol=tol)
    info = {"status": res.status, "slack": res.slack,
            "iterations": res.iterations, "grams": None,
            "residual": np.inf, "min_eig": -np.inf}
    if not res.feasible:
        return False, info
    grams = res.blocks[:len(structure.block_sizes)]
    recon = np.zeros(len(structure.mono_index))
    for a, g in zip(structure.a_ops, grams):
        recon += np.einsum("kij,ij->k", a, g)
    residual = float(np.max(np.abs(recon - problem.rhs)))
    min_eig = min(eigen_floor(0.5 * (g + g.T)) for g in grams)
    info.update(grams=grams, residual=residual, min_eig=min_eig)
    accepted = residual <= EPS_MATCH and min_eig >= -EPS_PSD
    return accepted, info


# ---------------------------------------------------------------------------
# tube certification


def _precheck_violation(targets, tol=1e-12):
    """Cheap rejection: a domain point where a target is negative rules
    out any SOS representation; returns True when such a point exists."""
    ts = np.linspace(0.0, 1.0, PRECHECK_TIMES)
    ang = np.linspace(0.0, 2.0 * np.pi, PRECHECK_DIRS, endpoint=False)
    offs = [(0.0, 0.0)] + [(np.cos(a), np.sin(a)) for a in ang] \
        + [(0.5 * np.cos(a), 0.5 * np.sin(a)) for a in ang]
    pts = np.array([(ox, oy, t) for ox, oy in offs for t in ts])
    return any(np.min(tg.evaluate(pts)) < -tol for tg in targets)


def certify_tube(tube, contours, interval=(0.0, 1.0), precheck=True,
                 tol=1e-8):
    """Certificate that every tube point lies in every risk contour over
    the interval.  Conservative: not-certified does not assert danger."""
    start = time.perf_counter()
    reports = []
    verdict = "certified-safe"
    reason = ""
    for entry in contours.entries:
        targets = build_targets(entry, tube.nominal, tube.q_matrix,
                                contours.delta, interval)
        if precheck and _precheck_violation(targets):
            verdict = "not-certified"
            reason = "membership violated at a sampled tube point"
            reports.append({"certified": False, "reason": reason})
            break
        report = {"certified": True, "residuals": [], "min_eigs": []}
        for target in targets:
            ok, info = solve_program(make_program(target), tol=tol)
            report["residuals"].append(info["residual"])
            report["min_eigs"].append(info["min_eig"])
            if not ok:
                report["certified"] = False
                report["reason"] = f"solver status {info['status']}, " \
                    f"slack {info['slack']:.3g}"
                break
        reports.append(report)
        if not report["certified"]:
            verdict = "not-certified"
            reason = report.get("reason", "")
            break
    return Certificate(verdict, reports, reason,
                       time.perf_counter() - start)
