"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Standard form:

    min  <C, X>   s.t.  <A_k, X> = b_k  (k = 1..p),   X >> 0

with X block diagonal.  The search direction is the HKM direction with the
symmetrized Schur complement (the symmetric part of tr(A_k Z^{-1} A_l X)),
driven by a Mehrotra predictor-corrector.  Everything is dense: the Gram
blocks produced by the SOS compiler stay below ~100x100 with at most a few
hundred constraints, where dense factorizations are both fast and, more
importantly here, deterministic (fixed initialization, no randomized
pivoting).

Feasibility problems (find X >> 0 with <A_k, X> = b_k) are solved through
``solve_feasibility``: minimize a free slack lambda subject to
X + lambda*I >> 0, declaring the system feasible iff the optimal slack is
below tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, solve_triangular

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
STEP_FRACTION = 0.98


class SdpError(Exception):
    pass


@dataclass
class SdpProblem:
    """block_sizes: list of symmetric block dimensions.

    a_ops[b] has shape (p, s_b, s_b): constraint k's symmetric coefficient
    matrix on block b.  c_ops[b] is the objective block (zero for pure
    feasibility).  rhs has shape (p,).
    """

    block_sizes: list
    a_ops: list
    c_ops: list
    rhs: np.ndarray

    def __post_init__(self):
        p = len(self.rhs)
        for b, s in enumerate(self.block_sizes):
            if self.a_ops[b].shape != (p, s, s):
                raise SdpError(f"constraint tensor for block {b} has shape "
                               f"{self.a_ops[b].shape}, expected {(p, s, s)}")
            if self.c_ops[b].shape != (s, s):
                raise SdpError(f"objective block {b} has wrong shape")
            if not np.allclose(self.a_ops[b], np.swapaxes(self.a_ops[b], 1, 2),
                               atol=1e-12):
                raise SdpError(f"constraint maps on block {b} not symmetric")

    @property
    def num_constraints(self):
        return len(self.rhs)

    @classmethod
    def empty(cls, block_sizes, num_constraints):
        return cls(list(block_sizes),
                   [np.zeros((num_constraints, s, s)) for s in block_sizes],
                   [np.zeros((s, s)) for s in block_sizes],
                   np.zeros(num_constraints))

    def set_entry(self, k, block, i, j, val):
        """Symmetric insert into constraint k's coefficient on a block."""
        self.a_ops[block][k, i, j] = val
        self.a_ops[block][k, j, i] = val

    def dump(self):
        """Triplet dump for debugging and regression fixtures."""
        out = {"block_sizes": list(self.block_sizes),
               "rhs": self.rhs.tolist(), "triplets": [], "objective": []}
        for b, a in enumerate(self.a_ops):
            ks, iis, jjs = np.nonzero(a)
            for k, i, j in zip(ks.tolist(), iis.tolist(), jjs.tolist()):
                if i <= j:
                    out["triplets"].append([k, b, i, j, float(a[k, i, j])])
        for b, c in enumerate(self.c_ops):
            iis, jjs = np.nonzero(c)
            for i, j in zip(iis.tolist(), jjs.tolist()):
                if i <= j:
                    out["objective"].append([b, i, j, float(c[i, j])])
        return out


@dataclass
class SdpSolution:
    status: str                     # optimal | infeasible-certificate | max-iterations
    blocks: list
    duals: np.ndarray
    primal_objective: float
    dual_objective: float
    residual_primal: float
    residual_dual: float
    gap: float
    iterations: int


def eigen_floor(mat):
    """Minimum eigenvalue of a symmetric matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=1e-12):
        raise SdpError("eigen_floor requires a symmetric matrix")
    return float(np.linalg.eigvalsh(mat)[0])


def _svec_rows(problem):
    """Stack constraints as vectors with sqrt(2)-scaled off-diagonals so
    Euclidean inner products match the matrix inner products."""
    pieces = []
    for a, s in zip(problem.a_ops, problem.block_sizes):
        iu = np.triu_indices(s)
        scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
        pieces.append(a[:, iu[0], iu[1]] * scale)
    return np.hstack(pieces) if pieces else np.zeros((problem.num_constraints, 0))


def _independent_rows(problem, tol=1e-10):
    """Rank-revealing elimination of dependent equality constraints.

    Returns (kept row indices, inconsistent flag).  Dependent rows whose
    right-hand side disagrees with the implied combination mark the problem
    primal infeasible outright.
    """
    rows = _svec_rows(problem)
    p = rows.shape[0]
    if p == 0:
        return np.array([], dtype=int), False
    _, r, piv = qr(rows.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    thresh = tol * max(diag[0], 1.0) if diag.size else 0.0
    rank = int(np.sum(diag > thresh))
    keep = np.sort(piv[:rank])
    if rank == p:
        return keep, False
    dropped = np.setdiff1d(np.arange(p), keep)
    basis = rows[keep]
    coef, *_ = np.linalg.lstsq(basis.T, rows[dropped].T, rcond=None)
    implied = coef.T @ problem.rhs[keep]
    inconsistent = bool(np.any(np.abs(implied - problem.rhs[dropped]) >
                               1e-7 * (1.0 + np.abs(problem.rhs[dropped]))))
    return keep, inconsistent


def _aop(a_ops, blocks):
    out = 0.0
    for a, x in zip(a_ops, blocks):
        out = out + a.reshape(a.shape[0], -1) @ x.ravel()
    return out


def _aadj(a_ops, y):
    return [np.tensordot(y, a, axes=1) for a in a_ops]


def _max_step(s_mat, ds, chol=None):
    """Largest alpha with s_mat + alpha*ds > 0 (inf if ds >= 0)."""
    if chol is None:
        chol = np.linalg.cholesky(s_mat)
    y = solve_triangular(chol, ds, lower=True)
    g = solve_triangular(chol, y.T, lower=True).T
    lam = np.linalg.eigvalsh(0.5 * (g + g.T))[0]
    if lam >= -1e-14:
        return np.inf
    return -1.0 / lam


# Initialization rescale factors tried in turn when the path following
# stalls; a badly sized start can make the primal steps collapse for good.
RESTART_SCALES = (1.0, 0.2, 0.04, 5.0)
STALL_WINDOW = 12
STALL_IMPROVEMENT = 0.75


def solve(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
          callback=None):
    """Mehrotra predictor-corrector path following.

    ``callback(state)`` is invoked once per iteration with the current
    iterate; if it returns True the solve stops early with status
    "optimal" left to the caller's interpretation (used by the feasibility
    wrapper for early accept).  If the gap stagnates the solve restarts
    from a rescaled initial iterate.
    """
    keep, inconsistent = _independent_rows(problem)
    if inconsistent:
        return SdpSolution("infeasible-certificate", None, None,
                           np.nan, np.nan, np.inf, np.inf, np.inf, 0)
    a_ops = [a[keep] for a in problem.a_ops]
    b = problem.rhs[keep]
    best = None
    for scale in RESTART_SCALES:
        sol = _solve_attempt(problem, a_ops, b, keep, scale, tol, max_iter,
                             callback)
        if sol.status == "optimal":
            return sol
        if best is None or sol.gap < best.gap:
            best = sol
    return best


def _solve_attempt(problem, a_ops, b, keep, init_scale, tol, max_iter,
                   callback):
    c_ops = problem.c_ops
    sizes = problem.block_sizes
    p = len(b)
    n_total = sum(sizes)

    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.sqrt(sum(np.sum(c * c) for c in c_ops))
    a_norms = np.sqrt(sum(np.einsum("kij,kij->k", a, a) for a in a_ops)) \
        if p else np.zeros(0)

    # identity-scaled start; norms divided by sqrt(n) keep the initial
    # iterate near the central path (an over-scaled dual start makes the
    # primal steps collapse and the solve stalls)
    sqrt_n = np.sqrt(n_total)
    xi_p = sqrt_n * max(1.0, np.max((1.0 + np.abs(b)) / (1.0 + a_norms))
                        if p else 1.0)
    xi_d = max(sqrt_n,
               (1.0 + max(np.max(a_norms) if p else 0.0, norm_c - 1.0))
               / sqrt_n)
    xi_p *= init_scale
    xi_d *= init_scale
    x_blocks = [xi_p * np.eye(s) for s in sizes]
    z_blocks = [xi_d * np.eye(s) for s in sizes]
    y = np.zeros(p)

    # overflow in a diverging iterate is handled by the finiteness guard
    with np.errstate(over="ignore", invalid="ignore"):
        return _iterate(problem, a_ops, b, keep, tol, max_iter, callback,
                        x_blocks, z_blocks, y, norm_b, norm_c, n_total, p)


def _iterate(problem, a_ops, b, keep, tol, max_iter, callback,
             x_blocks, z_blocks, y, norm_b, norm_c, n_total, p):
    c_ops = problem.c_ops
    sizes = problem.block_sizes
    status = "max-iterations"
    gap_history = []
    prev = None
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - _aop(a_ops, x_blocks)
        aty = _aadj(a_ops, y)
        rd = [c - at - z for c, at, z in zip(c_ops, aty, z_blocks)]
        gap = sum(np.sum(x * z) for x, z in zip(x_blocks, z_blocks))
        if not (np.all(np.isfinite(rp)) and np.isfinite(gap)):
            # diverging iterate (e.g. an unbounded optimal face): fall
            # back to the last finite one
            if prev is not None:
                x_blocks, z_blocks, y = prev
            break
        prev = ([x.copy() for x in x_blocks],
                [z.copy() for z in z_blocks], y.copy())
        mu = gap / n_total
        pobj = sum(np.sum(c * x) for c, x in zip(c_ops, x_blocks))
        dobj = float(b @ y)

        res_p = np.linalg.norm(rp) / norm_b
        res_d = np.sqrt(sum(np.sum(r * r) for r in rd)) / norm_c
        relgap = gap / (1.0 + abs(pobj) + abs(dobj))

        if callback is not None and callback(
                {"x": x_blocks, "y": y, "z": z_blocks, "res_p": res_p,
                 "res_d": res_d, "relgap": relgap, "pobj": pobj,
                 "dobj": dobj}):
            status = "optimal"
            break
        if res_p <= tol and res_d <= tol and relgap <= tol:
            status = "optimal"
            break
        gap_history.append(relgap)
        if len(gap_history) > STALL_WINDOW and \
                gap_history[-1] > STALL_IMPROVEMENT * \
                gap_history[-1 - STALL_WINDOW]:
            break  # stagnating: let the caller restart from a new scale

        # factorizations
        try:
            x_chols = [np.linalg.cholesky(x) for x in x_blocks]
            z_chols = [np.linalg.cholesky(z) for z in z_blocks]
        except np.linalg.LinAlgError:
            break
        z_invs = [_sym(cho_solve((ch, True), np.eye(len(ch))))
                  for ch in z_chols]

        # Schur complement M_kl = sym part of tr(A_k Z^-1 A_l X)
        m = np.zeros((p, p))
        for a, zi, x in zip(a_ops, z_invs, x_blocks):
            u = np.matmul(np.matmul(zi[None, :, :], a), x)
            m += a.reshape(p, -1) @ u.reshape(p, -1).T
        m = 0.5 * (m + m.T)
        m_fac = None
        jitter = 0.0
        for _ in range(4):
            try:
                m_fac = cho_factor(m + jitter * np.eye(p))
                break
            except (np.linalg.LinAlgError, ValueError):
                jitter = max(10.0 * jitter,
                             1e-14 * max(np.max(np.diag(m)), 1.0))
        if m_fac is None:
            break

        def schur_solve(rhs):
            dy = cho_solve(m_fac, rhs)
            for _ in range(2):  # iterative refinement
                dy = dy + cho_solve(m_fac, rhs - m @ dy)
            return dy

        def direction(sigma_mu, corr):
            g = []
            for zi, x, r, cr in zip(z_invs, x_blocks, rd, corr):
                base = sigma_mu * zi - x - _sym(zi @ r @ x)
                if cr is not None:
                    base = base + cr
                g.append(base)
            rhs = rp - _aop(a_ops, g)
            dy = schur_solve(rhs)
            aty_d = _aadj(a_ops, dy)
            dz = [r - at for r, at in zip(rd, aty_d)]
            dx = [gb + _sym(zi @ at @ x)
                  for gb, zi, at, x in zip(g, z_invs, aty_d, x_blocks)]
            return dx, dy, dz

        none_corr = [None] * len(sizes)
        dx_a, dy_a, dz_a = direction(0.0, none_corr)
        ap = min(1.0, STEP_FRACTION * min(
            _max_step(x, dx, ch) for x, dx, ch in
            zip(x_blocks, dx_a, x_chols)))
        ad = min(1.0, STEP_FRACTION * min(
            _max_step(z, dz, ch) for z, dz, ch in
            zip(z_blocks, dz_a, z_chols)))
        gap_aff = sum(np.sum((x + ap * dx) * (z + ad * dz))
                      for x, dx, z, dz in
                      zip(x_blocks, dx_a, z_blocks, dz_a))
        sigma = min(1.0, max(1e-8, (max(gap_aff, 0.0) / gap) ** 3))

        corr = [-_sym(zi @ dz @ dx)
                for zi, dz, dx in zip(z_invs, dz_a, dx_a)]
        dx, dy, dz = direction(sigma * mu, corr)
        ap = min(1.0, STEP_FRACTION * min(
            _max_step(x, d, ch) for x, d, ch in zip(x_blocks, dx, x_chols)))
        ad = min(1.0, STEP_FRACTION * min(
            _max_step(z, d, ch) for z, d, ch in zip(z_blocks, dz, z_chols)))
        if ap < 1e-12 and ad < 1e-12:
            break
        x_blocks = [_sym(x + ap * d) for x, d in zip(x_blocks, dx)]
        z_blocks = [_sym(z + ad * d) for z, d in zip(z_blocks, dz)]
        y = y + ad * dy

    rp = b - _aop(a_ops, x_blocks)
    aty = _aadj(a_ops, y)
    rd = [c - at - z for c, at, z in zip(c_ops, aty, z_blocks)]
    gap = sum(np.sum(x * z) for x, z in zip(x_blocks, z_blocks))
    pobj = sum(np.sum(c * x) for c, x in zip(c_ops, x_blocks))
    dobj = float(b @ y)
    duals = np.zeros(problem.num_constraints)
    duals[keep] = y
    return SdpSolution(status, x_blocks, duals, pobj, dobj,
                       float(np.linalg.norm(rp) / norm_b),
                       float(np.sqrt(sum(np.sum(r * r) for r in rd)) / norm_c),
                       float(gap), it)


def _sym(mat):
    return 0.5 * (mat + mat.T)


@dataclass
class FeasibilityResult:
    feasible: bool
    blocks: list | None             # the feasible X blocks when feasible
    slack: float                    # optimal (or early-exit) lambda
    status: str
    iterations: int


def solve_feasibility(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Find X >> 0 with <A_k, X> = b_k, by minimizing slack lambda with
    X + lambda I >> 0 (lambda free, split into two 1x1 blocks)."""
    p = problem.num_constraints
    traces = np.stack([np.einsum("kii->k", a) for a in problem.a_ops]).sum(axis=0)
    sizes = list(problem.block_sizes) + [1, 1]
    a_ops = [a.copy() for a in problem.a_ops]
    a_ops.append((-traces).reshape(p, 1, 1))
    a_ops.append(traces.reshape(p, 1, 1))
    c_ops = [np.zeros((s, s)) for s in problem.block_sizes]
    c_ops.append(np.array([[1.0]]))
    c_ops.append(np.array([[-1.0]]))
    aug = SdpProblem(sizes, a_ops, c_ops, problem.rhs.copy())

    nb = len(problem.block_sizes)
    rejected = {"flag": False, "bound": -np.inf}

    def early_exit(state):
        # accept: primal feasible with safely negative slack
        lam = state["x"][nb][0, 0] - state["x"][nb + 1][0, 0]
        if state["res_p"] <= tol and lam < -10.0 * tol:
            return True
        # reject: near-feasible dual objective is a weak-duality lower
        # bound on the optimal slack; safely above tol proves infeasibility
        if state["res_d"] <= tol and state["dobj"] > 100.0 * tol:
            rejected["flag"] = True
            rejected["bound"] = state["dobj"]
            return True
        return False

    sol = solve(aug, tol=tol, max_iter=max_iter, callback=early_exit)
    if rejected["flag"]:
        return FeasibilityResult(False, None, rejected["bound"],
                                 "infeasible-certificate", sol.iterations)
    if sol.status == "infeasible-certificate" or sol.blocks is None:
        return FeasibilityResult(False, None, np.inf, sol.status,
                                 sol.iterations)
    lam = float(sol.blocks[nb][0, 0] - sol.blocks[nb + 1][0, 0])
    if sol.status == "max-iterations" and sol.residual_primal > 1e-6:
        return FeasibilityResult(False, None, lam, sol.status, sol.iterations)
    if lam < tol:
        blocks = [x - lam * np.eye(len(x)) for x in sol.blocks[:nb]]
        return FeasibilityResult(True, blocks, lam, sol.status, sol.iterations)
    return FeasibilityResult(False, None, lam, sol.status, sol.iterations)
