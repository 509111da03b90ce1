"""End-to-end acceptance gate.

Ten criteria, one per test, covering tube containment, sizing
conservatism, contour soundness, certificate soundness, solver
correctness, both benchmark experiments, moment-oracle equivalence,
certification latency, and the risk-allocation arithmetic.  Each test
emits exactly one PASS/FAIL line on the terminal.
"""

import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, stats

from tubeplan import ccrrt  # noqa: F401  (imported to assert availability)
from tubeplan import contours as ct
from tubeplan import dynamics as dyn
from tubeplan import planner as pl
from tubeplan import scenario as sc
from tubeplan import sos
from tubeplan import tubes
from tubeplan import uncertainty as unc
from tubeplan.sdp import SdpProblem, solve, solve_feasibility

DELTA_TUBE = 0.001


def emit(capsys, label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    with capsys.disabled():
        print(line)
    assert ok, line


@pytest.fixture(scope="module")
def uw_model():
    return dyn.underwater_model()


@pytest.fixture(scope="module")
def gr_model():
    return dyn.ground_model()


@pytest.fixture(scope="module")
def uw_library(uw_model):
    return tubes.build_library(uw_model, tubes.default_underwater_specs(),
                               delta_tube=DELTA_TUBE)


@pytest.fixture(scope="module")
def gr_library(gr_model):
    return tubes.build_library(gr_model, tubes.default_ground_specs(),
                               method="state-tracking",
                               delta_tube=DELTA_TUBE)


def worst_step_containment(model, prim, n, rng):
    init = np.tile(np.asarray(prim.start, dtype=float), (n, 1))
    traj = dyn.simulate(model, init, prim.controls, rng)
    r2 = prim.tube.radius ** 2
    worst = 1.0
    for k in range(1, prim.horizon + 1):
        center = prim.nominal.evaluate(k / prim.horizon)
        d2 = np.sum((traj[:, k, :2] - center) ** 2, axis=1)
        worst = min(worst, float(np.mean(d2 <= r2)))
    return worst


def test_01_tube_containment(uw_model, gr_model, uw_library, gr_library,
                             capsys):
    """Analytically sized tubes hold >= 99.9% of 1e5 fresh rollouts at
    every step of every primitive."""
    rng = np.random.default_rng(2026)
    worsts = [worst_step_containment(m, p, 100_000, rng)
              for m, lib in ((uw_model, uw_library), (gr_model, gr_library))
              for p in lib]
    low = min(worsts)
    emit(capsys, "criterion 1 tube containment", low >= 0.999,
         f"min per-step containment {low:.5f} over 10 primitives "
         f"(requirement >= 0.999, 1e5 samples each)")


def test_02_analytical_radius_dominates_sampling(uw_model, gr_model,
                                                 uw_library, gr_library,
                                                 capsys):
    """The concentration-bound radius is never smaller than the
    empirical radius fitted to 1e5 rollouts."""
    gaps = []
    for model, lib in ((uw_model, uw_library), (gr_model, gr_library)):
        for prim in lib:
            samp = tubes.size_tube(model, prim, "sampling",
                                   delta_tube=DELTA_TUBE,
                                   n_samples=100_000, seed=0)
            gaps.append(prim.tube.radius - samp.radius)
    worst = min(gaps)
    emit(capsys, "criterion 2 conservatism ordering", worst >= 0.0,
         f"min (analytical - sampling) radius gap {worst:.4f} over 10 "
         f"primitives (requirement >= 0)")


def test_03_contour_soundness(capsys):
    """Every membership-true point of a 100x100 grid has Monte Carlo
    collision probability <= 0.1 + 3 SE; plus two closed-form variance
    ratios checked at fixed distances."""
    w_dist = unc.uniform(0.3, 0.4)
    cset = ct.build_contour_set([ct.disc_obstacle((0.0, 0.0), w_dist)], 0.1)
    entry = cset.entries[0]

    def var_ratio(d):
        pt = np.array([[d, 0.0, 0.0]])
        p1 = entry.p1.evaluate(pt)[0]
        p2 = entry.p2.evaluate(pt)[0]
        return (p1 - p2 * p2) / p1

    spot_ok = abs(var_ratio(0.5) - 0.0249) <= 2e-4 \
        and abs(var_ratio(0.41) - 0.1695) <= 2e-4

    rng = np.random.default_rng(42)
    w2 = np.sort(unc.sample(w_dist, rng, 1_000_000) ** 2)
    n = len(w2)
    xs = np.linspace(-0.8, 0.8, 100)
    grid = np.array([(x, y) for x in xs for y in xs])
    member = ct.contour_membership(cset, grid, 0.0)
    d2 = np.sum(grid ** 2, axis=1)
    # P(collision) = P(w^2 >= d^2) via one sorted pass over the draws
    p_hat = 1.0 - np.searchsorted(w2, d2, side="left") / n
    se = np.sqrt(np.maximum(p_hat * (1.0 - p_hat), 1e-12) / n)
    violations = int(np.sum(member & (p_hat > 0.1 + 3.0 * se)))
    n_member = int(np.sum(member))
    emit(capsys, "criterion 3 contour soundness",
         violations == 0 and spot_ok and n_member > 0,
         f"{violations} of {n_member} membership-true grid points exceed "
         f"0.1 + 3 SE (1e6 draws); spot ratios {var_ratio(0.5):.4f} vs "
         f"0.0249 and {var_ratio(0.41):.4f} vs 0.1695")


def grid_oracle_violation(tube, cset, interval, n_u=200, n_t=50, eps=1e-7):
    """Dense check of the two membership inequalities over the tube."""
    ell = np.linalg.cholesky(np.linalg.inv(tube.q_matrix))
    g = np.linspace(-1.0, 1.0, n_u)
    ux, uy = np.meshgrid(g, g, indexing="ij")
    mask = ux * ux + uy * uy <= 1.0
    us = np.column_stack([ux[mask], uy[mask]])
    t0, tf = interval
    for s in np.linspace(0.0, 1.0, n_t):
        center = tube.nominal.evaluate(s)
        xs = center[None, :] + us @ ell.T
        full = np.column_stack([xs, np.full(len(xs), t0 + (tf - t0) * s)])
        for entry in cset.entries:
            p1 = entry.p1.evaluate(full)
            p2 = entry.p2.evaluate(full)
            if np.any(p2 > eps) or \
                    np.any(p2 * p2 < (1.0 - cset.delta) * p1 - eps):
                return True
    return False


def test_04_certificate_soundness(uw_library, capsys):
    """50 randomized tube/obstacle cases: every certified verdict passes a
    dense grid oracle, and 10 obstacles planted on the nominal are never
    certified."""
    rng = np.random.default_rng(2024)
    interval = (0.0, 0.5)
    cases = []
    for i in range(40):
        prim = uw_library[i % len(uw_library)]
        base = prim.nominal.evaluate(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(0.0, 2.0)
        center = (base[0] + dist * np.cos(ang), base[1] + dist * np.sin(ang))
        lo = rng.uniform(0.2, 0.35)
        vel = tuple(rng.uniform(-0.3, 0.3, 2))
        cases.append((prim, ct.disc_obstacle(center, unc.uniform(lo, lo + 0.1),
                                             vel), False))
    for i in range(10):
        prim = uw_library[i % len(uw_library)]
        center = tuple(prim.nominal.evaluate(rng.uniform()))
        cases.append((prim, ct.disc_obstacle(center, unc.uniform(0.3, 0.4)),
                      True))
    certified = 0
    unsound = 0
    planted_certified = 0
    for prim, obstacle, planted in cases:
        cset = ct.build_contour_set([obstacle], 0.1)
        cert = sos.certify_tube(prim.tube, cset, interval)
        if cert.certified:
            certified += 1
            if planted:
                planted_certified += 1
            if grid_oracle_violation(prim.tube, cset, interval):
                unsound += 1
    ok = unsound == 0 and planted_certified == 0 and certified >= 10
    emit(capsys, "criterion 4 certificate soundness", ok,
         f"{certified}/50 cases certified, {unsound} fail the 200x200x50 "
         f"grid oracle, {planted_certified}/10 planted-unsafe cases "
         f"certified (requirements: 0, 0, and >= 10 certified)")


def planted_problem(rng, size, n_constraints, rank_x):
    """Primal-dual pair with complementary eigenspaces: zero duality gap,
    so <C, X*> is the known optimum."""
    q, _ = np.linalg.qr(rng.normal(size=(size, size)))
    dx = np.zeros(size)
    dx[:rank_x] = rng.uniform(0.5, 2.0, rank_x)
    dz = np.zeros(size)
    dz[rank_x:] = rng.uniform(0.5, 2.0, size - rank_x)
    x_star = q @ np.diag(dx) @ q.T
    z_star = q @ np.diag(dz) @ q.T
    prob = SdpProblem.empty([size], n_constraints)
    for k in range(n_constraints):
        a = rng.normal(size=(size, size))
        prob.a_ops[0][k] = 0.5 * (a + a.T)
    y_star = rng.normal(size=n_constraints)
    prob.rhs = np.einsum("kij,ij->k", prob.a_ops[0], x_star)
    prob.c_ops[0] = np.einsum("k,kij->ij", y_star, prob.a_ops[0]) + z_star
    return prob, float(np.sum(prob.c_ops[0] * x_star))


def univariate_gram_problem(coeffs):
    """Gram feasibility of c0 + c1 t + c2 t^2 over the basis (1, t)."""
    prob = SdpProblem.empty([2], 3)
    prob.set_entry(0, 0, 0, 0, 1.0)
    prob.set_entry(1, 0, 0, 1, 1.0)
    prob.set_entry(2, 0, 1, 1, 1.0)
    prob.rhs = np.array([coeffs[0], coeffs[1], coeffs[2]], dtype=float)
    return prob


def test_05_sdp_solver(capsys):
    """Planted optima up to block size 35 recovered to 1e-6; a strictly
    positive quadratic is accepted and a negative one rejected."""
    rng = np.random.default_rng(11)
    errs = []
    for size, cons in ((5, 4), (12, 9), (20, 14), (28, 18), (35, 22)):
        prob, opt = planted_problem(rng, size, cons, size // 2)
        sol = solve(prob)
        pobj = float(np.sum(prob.c_ops[0] * sol.blocks[0]))
        errs.append(abs(pobj - opt) / max(1.0, abs(opt)))
    accept = solve_feasibility(univariate_gram_problem([2.0, 2.0, 1.0]))
    reject = solve_feasibility(univariate_gram_problem([-1.0, 0.0, -1.0]))
    ok = max(errs) <= 1e-6 and accept.feasible and not reject.feasible
    emit(capsys, "criterion 5 sdp solver", ok,
         f"max planted objective error {max(errs):.2e} over sizes up to "
         f"35x35 (requirement <= 1e-6); positive quadratic "
         f"{'accepted' if accept.feasible else 'rejected'}, negative "
         f"quadratic {'rejected' if not reject.feasible else 'accepted'}")


def check_batch(scenario, runs, seed):
    """Seeded batch of runs; returns per-run stats and arithmetic checks."""
    budget = scenario.budget()
    library = scenario.build_library()
    poses = scenario.sample_initial_poses(runs, seed=seed)
    successes = 0
    max_cycles = 0
    certified_throughout = True
    bounds_exact = True
    for i in range(runs):
        task = scenario.make_task(i % scenario.n_scenes)
        res = pl.run_to_goal(scenario.model, poses[i], library, task,
                             budget, np.random.default_rng((seed, i)))
        successes += res.status == "goal-reached"
        max_cycles = max(max_cycles, res.report["cycles"])
        for log in res.logs:
            if log.chosen is None or log.chosen not in log.certified:
                certified_throughout = False
            if log.linear_bound != budget.delta_o + \
                    log.cycle * budget.delta_tube:
                bounds_exact = False
            if log.product_bound != budget.delta_o + \
                    (1.0 - (1.0 - budget.delta_tube) ** log.cycle):
                bounds_exact = False
    return successes, max_cycles, certified_throughout, bounds_exact


def test_06_clustered_experiment(capsys):
    """100 seeded runs through the clustered field: 100% success within
    the 100-cycle budget, every executed tube certified, and the logged
    risk bounds equal the allocation arithmetic exactly."""
    scenario = sc.load_builtin("underwater_clustered")
    runs = 100
    successes, max_cycles, certified, bounds = check_batch(scenario, runs, 0)
    ok = successes == runs and max_cycles <= 100 and certified and bounds
    emit(capsys, "criterion 6 clustered-field experiment", ok,
         f"{successes}/{runs} runs reached the goal, max cycles "
         f"{max_cycles} (cap 100), certified throughout: {certified}, "
         f"risk-bound arithmetic exact: {bounds}")


def test_07_lane_change_experiment(capsys):
    """20 seeded lane-change scenes: all reach the target lane within the
    200-cycle budget with certified tubes and exact bound arithmetic."""
    scenario = sc.load_builtin("lane_change")
    runs = 20
    successes, max_cycles, certified, bounds = check_batch(scenario, runs, 0)
    ok = successes == runs and max_cycles <= 200 and certified and bounds
    emit(capsys, "criterion 7 lane-change experiment", ok,
         f"{successes}/{runs} scenes completed, max cycles {max_cycles} "
         f"(cap 200), certified throughout: {certified}, risk-bound "
         f"arithmetic exact: {bounds}")


MOMENT_DISTS = [
    unc.uniform(0.3, 0.4),          # obstacle radii
    unc.uniform(-0.1, 0.1),         # underwater speed/heading noise
    unc.gaussian(0.0, 0.09),        # ground speed noise
    unc.beta(1.0, 3.0, scale=3.0),  # ground heading noise
]


def quadrature_moment(d, k):
    kind, p = d.kind, d.params
    if kind == "uniform":
        a, b = p
        val, _ = integrate.quad(lambda w: w ** k / (b - a), a, b)
        return val
    if kind == "gaussian":
        mu, var = p
        sd = np.sqrt(var)
        val, _ = integrate.quad(
            lambda w: w ** k * stats.norm.pdf(w, mu, sd),
            mu - 12 * sd, mu + 12 * sd)
        return val
    alpha, beta_, scale, shift = p
    val, _ = integrate.quad(
        lambda u: (scale * u + shift) ** k * stats.beta.pdf(u, alpha, beta_),
        0.0, 1.0)
    return val


def quadrature_trig(d, phase, a, b):
    kind, p = d.kind, d.params

    def f(w):
        return np.cos(phase + w) ** a * np.sin(phase + w) ** b

    if kind == "uniform":
        lo, hi = p
        val, _ = integrate.quad(lambda w: f(w) / (hi - lo), lo, hi)
        return val
    if kind == "gaussian":
        mu, var = p
        sd = np.sqrt(var)
        val, _ = integrate.quad(lambda w: f(w) * stats.norm.pdf(w, mu, sd),
                                mu - 12 * sd, mu + 12 * sd)
        return val
    alpha, beta_, scale, shift = p
    val, _ = integrate.quad(
        lambda u: f(scale * u + shift) * stats.beta.pdf(u, alpha, beta_),
        0.0, 1.0)
    return val


def test_08_moment_oracles(capsys):
    """Closed-form moments match quadrature to 1e-9 and 1e7-sample Monte
    Carlo within 4 standard errors for every distribution the models use."""
    quad_err = 0.0
    for d in MOMENT_DISTS:
        for k in range(9):
            quad_err = max(quad_err,
                           abs(unc.raw_moment(d, k) - quadrature_moment(d, k)))
        for phase in (0.0, 0.3, -1.1):
            for a, b in ((1, 0), (0, 1), (2, 0), (1, 1), (2, 2), (4, 0)):
                quad_err = max(quad_err,
                               abs(unc.trig_power_moment(d, phase, a, b)
                                   - quadrature_trig(d, phase, a, b)))
    mc_ok = True
    n = 10_000_000
    rng = np.random.default_rng(8)
    for d in MOMENT_DISTS:
        w = unc.sample(d, rng, n)
        for k in (1, 2, 3, 4):
            vals = w ** k
            se = np.std(vals) / np.sqrt(n)
            if abs(np.mean(vals) - unc.raw_moment(d, k)) > 4.0 * se:
                mc_ok = False
        cosw = np.cos(0.3 + w)
        se = np.std(cosw) / np.sqrt(n)
        if abs(np.mean(cosw)
               - unc.trig_power_moment(d, 0.3, 1, 0)) > 4.0 * se:
            mc_ok = False
    ok = quad_err <= 1e-9 and mc_ok
    emit(capsys, "criterion 8 moment-oracle equivalence", ok,
         f"max |closed form - quadrature| {quad_err:.2e} (requirement "
         f"<= 1e-9); 1e7-sample Monte Carlo within 4 SE: {mc_ok}")


def test_09_certification_latency(uw_library, gr_library, capsys):
    """Median single-obstacle certification time stays within the 1 s
    regression budget at the benchmark polynomial degrees."""
    obstacle = ct.disc_obstacle((1.2, -1.0), unc.uniform(0.3, 0.4))
    cset = ct.build_contour_set([obstacle], 0.1)
    times = []
    all_certified = True
    for prim in list(uw_library) + list(gr_library):
        start = time.perf_counter()
        cert = sos.certify_tube(prim.tube, cset, (0.0, 0.5),
                                precheck=False)
        times.append(time.perf_counter() - start)
        all_certified = all_certified and cert.certified
    median = float(np.median(times))
    ok = median <= 1.0 and all_certified
    emit(capsys, "criterion 9 certification latency",
         ok, f"median full-solve time {median * 1000:.0f} ms per "
         f"certificate over 10 primitives (budget 1000 ms), all "
         f"certified: {all_certified}")


def test_10_risk_arithmetic(capsys):
    """The linear budget bound dominates the product bound for every
    horizon up to 1e4, and the allocation reproduces the benchmark
    splits."""
    # exact rational arithmetic: float rounding at N=1 would otherwise
    # report a spurious sub-ulp violation of the true identity
    d = Fraction(1, 1000)
    survive = Fraction(1)
    dominance = True
    for n in range(1, 10_001):
        survive *= 1 - d
        if n * d < 1 - survive:
            dominance = False
            break
    split1 = pl.allocate_risk(0.2, 100).delta_o
    split2 = pl.allocate_risk(0.3, 200).delta_o
    splits_ok = abs(split1 - 0.1) <= 1e-12 and abs(split2 - 0.1) <= 1e-12
    emit(capsys, "criterion 10 risk arithmetic",
         dominance and splits_ok,
         f"linear bound dominates product bound for all N <= 1e4: "
         f"{dominance}; allocations (0.2, 100) -> {split1:.3f} and "
         f"(0.3, 200) -> {split2:.3f} (both must be 0.100)")
