"""Sparse multivariate polynomials over real coefficients.

Monomials are exponent tuples of fixed length ``nvars`` and are ordered in
graded reverse lexicographic (grevlex) order: higher total degree ranks
first, ties broken by the reverse-lexicographic rule (the monomial whose
exponent difference has a negative last nonzero entry ranks first).

Polynomials are dictionaries mapping exponent tuples to nonzero float
coefficients.  Zero coefficients are pruned exactly (no epsilon pruning);
numerical tolerances belong to the consumers of this module.  The zero
polynomial has degree -1 by convention.
"""

from __future__ import annotations

from math import comb
from itertools import product

import numpy as np

Monomial = tuple  # tuple[int, ...], length nvars


class DimensionError(ValueError):
    """Operands disagree on the number of variables."""


def grevlex_compare(a, b):
    """Compare two monomials in grevlex order.

    Returns -1 if ``a`` ranks before ``b`` (higher total degree, or the
    grevlex tie-break), 0 if equal, +1 otherwise.
    """
    if len(a) != len(b):
        raise DimensionError(f"monomial lengths differ: {len(a)} vs {len(b)}")
    da, db = sum(a), sum(b)
    if da != db:
        return -1 if da > db else 1
    # Equal degree: a ranks before b iff the last nonzero entry of a-b
    # is negative, equivalently reversed(a) < reversed(b) lexicographically.
    ra, rb = tuple(reversed(a)), tuple(reversed(b))
    if ra == rb:
        return 0
    return -1 if ra < rb else 1


def grevlex_key(mono):
    """Sort key producing ascending grevlex order (1 first, degree last)."""
    return (sum(mono), tuple(-e for e in reversed(mono)))


def monomial_basis(nvars, max_degree):
    """All monomials of total degree <= max_degree, ascending grevlex.

    The count equals C(nvars + max_degree, nvars).
    """
    if nvars < 1:
        raise ValueError("nvars must be >= 1")
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    monos = [m for m in product(range(max_degree + 1), repeat=nvars)
             if sum(m) <= max_degree]
    monos.sort(key=grevlex_key)
    assert len(monos) == comb(nvars + max_degree, nvars)
    return monos


class Polynomial:
    """Sparse polynomial in ``nvars`` real variables."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        self.terms = {}
        if terms:
            for mono, coef in (terms.items() if isinstance(terms, dict) else terms):
                mono = tuple(int(e) for e in mono)
                if len(mono) != self.nvars:
                    raise DimensionError(
                        f"monomial {mono} has {len(mono)} exponents, expected {self.nvars}")
                if any(e < 0 for e in mono):
                    raise ValueError(f"negative exponent in {mono}")
                c = self.terms.get(mono, 0.0) + float(coef)
                if c == 0.0:
                    self.terms.pop(mono, None)
                else:
                    self.terms[mono] = c

    # ---- constructors -------------------------------------------------

    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def constant(cls, nvars, c):
        p = cls(nvars)
        if c != 0.0:
            p.terms[(0,) * nvars] = float(c)
        return p

    @classmethod
    def variable(cls, index, nvars):
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for nvars={nvars}")
        mono = tuple(1 if i == index else 0 for i in range(nvars))
        return cls(nvars, {mono: 1.0})

    # ---- basic queries -------------------------------------------------

    @property
    def degree(self):
        """Total degree; -1 for the zero polynomial."""
        if not self.terms:
            return -1
        return max(sum(m) for m in self.terms)

    def coefficient(self, mono):
        return self.terms.get(tuple(mono), 0.0)

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def allclose(self, other, rtol=1e-12, atol=1e-12):
        """Coefficientwise closeness against another polynomial."""
        self._check_nvars(other)
        for m in set(self.terms) | set(other.terms):
            a, b = self.terms.get(m, 0.0), other.terms.get(m, 0.0)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    def _check_nvars(self, other):
        if self.nvars != other.nvars:
            raise DimensionError(
                f"variable counts differ: {self.nvars} vs {other.nvars}")

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        self._check_nvars(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0.0) + c
            if v == 0.0:
                out.pop(m, None)
            else:
                out[m] = v
        p = Polynomial(self.nvars)
        p.terms = out
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Polynomial(self.nvars)
        p.terms = {m: -c for m, c in self.terms.items()}
        return p

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        self._check_nvars(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                v = out.get(m, 0.0) + c1 * c2
                if v == 0.0:
                    out.pop(m, None)
                else:
                    out[m] = v
        p = Polynomial(self.nvars)
        p.terms = out
        return p

    __rmul__ = __mul__

    def scale(self, c):
        c = float(c)
        p = Polynomial(self.nvars)
        if c != 0.0:
            p.terms = {m: c * v for m, v in self.terms.items()}
        return p

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    # ---- evaluation and composition -------------------------------------

    def evaluate(self, point):
        """Evaluate at a point (shape (nvars,)) or a batch (shape (N, nvars)).

        Direct monomial evaluation: each term contributes
        coef * prod(point**exponents); terms are accumulated in float64 with
        the usual rounding of sequential summation.
        """
        pts = np.asarray(point, dtype=float)
        batched = pts.ndim == 2
        if pts.shape[-1] != self.nvars:
            raise DimensionError(
                f"point has {pts.shape[-1]} coordinates, expected {self.nvars}")
        if batched:
            acc = np.zeros(pts.shape[0])
        else:
            acc = 0.0
        for m, c in self.terms.items():
            term = c
            for i, e in enumerate(m):
                if e:
                    term = term * pts[..., i] ** e
            acc = acc + term
        return acc

    def compose(self, subs):
        """Substitute variable i by polynomial subs[i].

        All substituted polynomials must share a common variable count; the
        result lives in that variable set.
        """
        if len(subs) != self.nvars:
            raise DimensionError(
                f"{len(subs)} substitutions given, expected {self.nvars}")
        m_out = subs[0].nvars
        for s in subs:
            if s.nvars != m_out:
                raise DimensionError("substituted polynomials disagree on nvars")
        # Cache powers of each substituted polynomial up to its max exponent.
        max_exp = [0] * self.nvars
        for mono in self.terms:
            for i, e in enumerate(mono):
                max_exp[i] = max(max_exp[i], e)
        powers = []
        for i, s in enumerate(subs):
            ps = [Polynomial.constant(m_out, 1.0)]
            for _ in range(max_exp[i]):
                ps.append(ps[-1] * s)
            powers.append(ps)
        out = Polynomial.zero(m_out)
        for mono, coef in self.terms.items():
            term = Polynomial.constant(m_out, coef)
            for i, e in enumerate(mono):
                if e:
                    term = term * powers[i][e]
            out = out + term
        return out

    # ---- serialization ---------------------------------------------------

    def to_pairs(self):
        """(exponent-vector, coefficient) pairs in ascending grevlex order."""
        return [[list(m), self.terms[m]]
                for m in sorted(self.terms, key=grevlex_key)]

    @classmethod
    def from_pairs(cls, nvars, pairs):
        return cls(nvars, {tuple(m): c for m, c in pairs})

    def __repr__(self):
        if not self.terms:
            return f"Polynomial({self.nvars}, 0)"
        bits = []
        for m in sorted(self.terms, key=grevlex_key, reverse=True):
            mono = "*".join(f"x{i}^{e}" if e > 1 else f"x{i}"
                            for i, e in enumerate(m) if e)
            c = self.terms[m]
            bits.append(f"{c:+g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' '.join(bits)})"
