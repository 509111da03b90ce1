"""Noise-source specifications and their moment oracles.

Supported kinds: uniform(a, b), gaussian(mean, var), affine-transformed
beta scale*B(alpha, beta)+shift, and point-mass(c).  Noise channels and
time steps are modeled as mutually independent throughout; this is a
modeling contract shared with the dynamics module.

Raw moments are closed form.  Trigonometric moments E[cos(phase + m*w)],
E[sin(phase + m*w)] come from the characteristic function where it is
closed form (uniform, gaussian, point-mass) and from fixed-node
Gauss-Legendre quadrature with a node-doubling self-check for the beta
family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .poly import Polynomial

# Gauss-Legendre node count for beta-family characteristic functions.
# Doubling the nodes must agree to QUAD_TOL or the oracle raises.
QUAD_NODES = 64
QUAD_TOL = 1e-10


@dataclass(frozen=True)
class DistributionSpec:
    """A scalar noise source.  Use the module-level constructors."""

    kind: str
    params: tuple = field(default=())

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == "uniform":
            a, b = p
            if not a < b:
                raise ValueError(f"uniform requires a < b, got ({a}, {b})")
        elif k == "gaussian":
            _, var = p
            if not var > 0:
                raise ValueError(f"gaussian variance must be > 0, got {var}")
        elif k == "beta":
            alpha, beta_, scale, _ = p
            if not (alpha > 0 and beta_ > 0):
                raise ValueError("beta requires alpha, beta > 0")
            if scale == 0:
                raise ValueError("beta scale must be nonzero")
        elif k == "point":
            pass
        else:
            raise ValueError(f"unknown distribution kind {k!r}")

    def to_json(self):
        k, p = self.kind, self.params
        if k == "uniform":
            return {"kind": "uniform", "a": p[0], "b": p[1]}
        if k == "gaussian":
            return {"kind": "gaussian", "mean": p[0], "var": p[1]}
        if k == "beta":
            return {"kind": "beta", "alpha": p[0], "beta": p[1],
                    "scale": p[2], "shift": p[3]}
        return {"kind": "point", "value": p[0]}

    @classmethod
    def from_json(cls, d):
        k = d["kind"]
        if k == "uniform":
            return uniform(d["a"], d["b"])
        if k == "gaussian":
            return gaussian(d["mean"], d["var"])
        if k == "beta":
            return beta(d["alpha"], d["beta"], d.get("scale", 1.0), d.get("shift", 0.0))
        if k == "point":
            return point_mass(d["value"])
        raise ValueError(f"unknown distribution kind {k!r}")


def uniform(a, b):
    return DistributionSpec("uniform", (float(a), float(b)))


def gaussian(mean, var):
    return DistributionSpec("gaussian", (float(mean), float(var)))


def beta(alpha, beta_, scale=1.0, shift=0.0):
    """scale * B(alpha, beta) + shift with B on [0, 1]."""
    return DistributionSpec("beta", (float(alpha), float(beta_),
                                     float(scale), float(shift)))


def point_mass(c):
    return DistributionSpec("point", (float(c),))


def scaled(d, factor):
    """The distribution of factor * w for w ~ d."""
    factor = float(factor)
    if factor == 0.0:
        return point_mass(0.0)
    k, p = d.kind, d.params
    if k == "uniform":
        a, b = p[0] * factor, p[1] * factor
        return uniform(min(a, b), max(a, b))
    if k == "gaussian":
        return gaussian(p[0] * factor, p[1] * factor * factor)
    if k == "beta":
        return beta(p[0], p[1], p[2] * factor, p[3] * factor)
    return point_mass(p[0] * factor)


# ---------------------------------------------------------------------------
# raw moments


def _beta_std_moment(alpha, beta_, k):
    """E[B^k] for B ~ Beta(alpha, beta): rising-factorial ratio."""
    m = 1.0
    for r in range(k):
        m *= (alpha + r) / (alpha + beta_ + r)
    return m


def raw_moment(d, k):
    """Closed-form E[w^k] for the supported kinds, k >= 0."""
    if k < 0:
        raise ValueError("moment order must be >= 0")
    if k == 0:
        return 1.0
    kind, p = d.kind, d.params
    if kind == "uniform":
        a, b = p
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
    if kind == "gaussian":
        mu, var = p
        # M_j = mu*M_{j-1} + (j-1)*var*M_{j-2}
        prev2, prev1 = 1.0, mu
        for j in range(2, k + 1):
            prev2, prev1 = prev1, mu * prev1 + (j - 1) * var * prev2
        return prev1 if k >= 1 else 1.0
    if kind == "beta":
        alpha, beta_, scale, shift = p
        return sum(comb(k, j) * scale ** j * shift ** (k - j)
                   * _beta_std_moment(alpha, beta_, j)
                   for j in range(k + 1))
    if kind == "point":
        return p[0] ** k
    raise ValueError(f"unsupported kind {kind!r}")


def moment_sequence(d, max_order):
    """Vector of E[w^k] for k = 0..max_order."""
    return np.array([raw_moment(d, k) for k in range(max_order + 1)])


# ---------------------------------------------------------------------------
# trigonometric moments via the characteristic function


def _beta_charfun(alpha, beta_, scale, shift, f):
    """E[exp(i f (scale*B + shift))] by Gauss-Legendre, self-checked."""
    def quad(n):
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)  # map to [0, 1]
        w = 0.5 * w
        dens = u ** (alpha - 1) * (1 - u) ** (beta_ - 1)
        norm = np.sum(w * dens)  # numeric Beta(alpha, beta)
        vals = np.exp(1j * f * (scale * u + shift))
        return np.sum(w * dens * vals) / norm
    a = quad(QUAD_NODES)
    b = quad(2 * QUAD_NODES)
    if abs(a - b) > QUAD_TOL:
        raise ArithmeticError(
            f"beta characteristic-function quadrature did not converge: "
            f"|diff|={abs(a - b):.3e}")
    return b


def charfun(d, f):
    """E[exp(i f w)] for integer or real frequency f."""
    if f == 0:
        return 1.0 + 0.0j
    kind, p = d.kind, d.params
    if kind == "uniform":
        a, b = p
        return (np.exp(1j * f * b) - np.exp(1j * f * a)) / (1j * f * (b - a))
    if kind == "gaussian":
        mu, var = p
        return np.exp(1j * f * mu - 0.5 * f * f * var)
    if kind == "point":
        return np.exp(1j * f * p[0])
    if kind == "beta":
        alpha, beta_, scale, shift = p
        return _beta_charfun(alpha, beta_, scale, shift, f)
    raise ValueError(f"unsupported kind {kind!r}")


def trig_moments(d, phase, multiplier):
    """(E[cos(phase + m*w)], E[sin(phase + m*w)]) for integer m >= 1."""
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    z = np.exp(1j * phase) * charfun(d, multiplier)
    return float(z.real), float(z.imag)


def trig_power_moment(d, phase, cos_pow, sin_pow):
    """E[cos^a(phase + w) * sin^b(phase + w)] for a=cos_pow, b=sin_pow.

    Expands the trig powers into complex exponentials and sums the
    characteristic function over the resulting integer frequencies.
    """
    a, b = cos_pow, sin_pow
    if a == 0 and b == 0:
        return 1.0
    # cos^a sin^b = sum over binomial expansions of ((e^it+e^-it)/2)^a
    # and ((e^it-e^-it)/(2i))^b.
    coefs = {}
    pref = (0.5 ** a) * (0.5 / 1j) ** b
    for j in range(a + 1):
        for k in range(b + 1):
            f = (2 * j - a) + (2 * k - b)
            c = pref * comb(a, j) * comb(b, k) * (-1.0) ** (b - k)
            coefs[f] = coefs.get(f, 0.0 + 0.0j) + c
    total = 0.0 + 0.0j
    for f, c in coefs.items():
        if f >= 0:
            chi = charfun(d, f)
        else:
            chi = np.conj(charfun(d, -f))
        total += c * np.exp(1j * f * phase) * chi
    return float(total.real)


# ---------------------------------------------------------------------------
# sampling


def sample(d, rng, count):
    """count independent draws; deterministic given the generator state."""
    if count < 1:
        raise ValueError("count must be >= 1")
    kind, p = d.kind, d.params
    if kind == "uniform":
        return rng.uniform(p[0], p[1], size=count)
    if kind == "gaussian":
        return rng.normal(p[0], np.sqrt(p[1]), size=count)
    if kind == "beta":
        alpha, beta_, scale, shift = p
        return scale * rng.beta(alpha, beta_, size=count) + shift
    if kind == "point":
        return np.full(count, p[0])
    raise ValueError(f"unsupported kind {kind!r}")


# ---------------------------------------------------------------------------
# polynomial expectations


def poly_expectation(p, assignment):
    """E[p(w_1, ..., w_n)] for mutually independent w_i ~ assignment[i].

    assignment maps every variable index of p to a DistributionSpec.
    """
    for i in range(p.nvars):
        if i not in assignment:
            raise KeyError(f"variable {i} has no distribution assigned")
    total = 0.0
    for mono, coef in p.terms.items():
        term = coef
        for i, e in enumerate(mono):
            if e:
                term *= raw_moment(assignment[i], e)
        total += term
    return total


def partial_expectation(p, assignment):
    """Integrate out the variables named in ``assignment``.

    Returns a polynomial in the same variable space whose integrated
    variables no longer appear.  Independence across the integrated
    variables is assumed.
    """
    out = Polynomial.zero(p.nvars)
    for mono, coef in p.terms.items():
        c = coef
        new_mono = list(mono)
        for i, e in enumerate(mono):
            if i in assignment and e:
                c *= raw_moment(assignment[i], e)
                new_mono[i] = 0
        out = out + Polynomial(p.nvars, {tuple(new_mono): c})
    return out


def project(p, keep):
    """Re-express p in the variables listed in ``keep`` (all others unused)."""
    keep = list(keep)
    pos = {v: i for i, v in enumerate(keep)}
    out = Polynomial.zero(len(keep))
    for mono, coef in p.terms.items():
        new = [0] * len(keep)
        for i, e in enumerate(mono):
            if e:
                if i not in pos:
                    raise ValueError(f"variable {i} still present, cannot drop")
                new[pos[i]] = e
        out = out + Polynomial(len(keep), {tuple(new): coef})
    return out
