"""Online planner: risk arithmetic, recentring oracles, cycle selection,
culling invariance, execution statistics, and the outer loop."""

import numpy as np
import pytest

from tubeplan import contours as ct
from tubeplan import dynamics as dyn
from tubeplan import planner as pl
from tubeplan import tubes
from tubeplan import uncertainty as unc

UW = dyn.underwater_model()
GR = dyn.ground_model()
W = unc.uniform(0.3, 0.4)


@pytest.fixture(scope="module")
def uw_library():
    return tubes.build_library(UW, tubes.default_underwater_specs())


@pytest.fixture(scope="module")
def gr_library():
    return tubes.build_library(GR, tubes.default_ground_specs(),
                               method="state-tracking")


def straight_objective():
    return pl.PathTrackingObjective([(0.0, 0.0), (100.0, 0.0)])


class TestRiskArithmetic:
    def test_allocation_spot_values(self):
        b = pl.allocate_risk(0.2, 100)
        assert b.delta_o == pytest.approx(0.1)
        assert b.delta_tube == pytest.approx(0.001)
        b = pl.allocate_risk(0.3, 200)
        assert b.delta_o == pytest.approx(0.1)

    def test_infeasible_allocation_raises(self):
        with pytest.raises(ValueError):
            pl.allocate_risk(0.05, 100)
        with pytest.raises(ValueError):
            pl.allocate_risk(0.1, 100)  # delta_o would be exactly 0

    def test_budget_invariant_enforced(self):
        with pytest.raises(ValueError):
            pl.RiskBudget(0.2, 200, 0.1, 0.001)  # 0.1 + 0.2 > 0.2
        pl.RiskBudget(0.2, 100, 0.1, 0.001)  # tight split is fine

    def test_bound_values_after_34_cycles(self):
        b = pl.allocate_risk(0.2, 100)
        assert pl.linear_risk_bound(b, 34) == pytest.approx(0.134)
        assert pl.product_risk_bound(b, 34) == pytest.approx(
            0.1 + (1.0 - 0.999 ** 34))
        assert pl.product_risk_bound(b, 34) == pytest.approx(0.13344494,
                                                             abs=1e-7)

    def test_linear_dominates_product(self):
        b = pl.allocate_risk(0.3, 200)
        for n in (0, 1, 5, 34, 200, 10_000):
            assert pl.linear_risk_bound(b, n) >= pl.product_risk_bound(b, n)


class TestRecentring:
    def test_underwater_world_nominal_starts_at_pose(self, uw_library):
        pose = (1.3, -0.7, 0.4)
        for prim in uw_library:
            placed = pl.recentre(UW, prim, pose)
            np.testing.assert_allclose(placed.nominal.evaluate(0.0),
                                       pose[:2], atol=1e-12)

    def test_underwater_rollout_equivariance(self, uw_library):
        # rolling out the recentred controls from the pose equals the rigid
        # transform of the body-frame rollout under matched noise draws
        prim = uw_library[1]
        pose = (2.0, 1.5, 0.9)
        placed = pl.recentre(UW, prim, pose)
        body = dyn.simulate(UW, np.zeros((200, 2)), prim.controls,
                            np.random.default_rng(3))
        world = dyn.simulate(UW, np.tile(pose[:2], (200, 1)), placed.controls,
                             np.random.default_rng(3))
        c, s = np.cos(pose[2]), np.sin(pose[2])
        rot = np.array([[c, -s], [s, c]])
        np.testing.assert_allclose(world, pose[:2] + body @ rot.T, atol=1e-12)

    def test_underwater_tube_containment_at_random_poses(self, uw_library):
        # per-step containment of the recentred tube holds at arbitrary
        # poses because the transform is rigid
        rng = np.random.default_rng(11)
        n = 2000
        for trial in range(10):
            pose = (rng.uniform(-3, 3), rng.uniform(-3, 3),
                    rng.uniform(-np.pi, np.pi))
            prim = uw_library[trial % len(uw_library)]
            placed = pl.recentre(UW, prim, pose)
            traj = dyn.simulate(UW, np.tile(pose[:2], (n, 1)),
                                placed.controls, rng)
            phi = 1.0 / placed.tube.radius ** 2
            horizon = prim.horizon
            for k in range(1, horizon + 1):
                center = placed.nominal.evaluate(k / horizon)
                d2 = np.sum((traj[:, k] - center) ** 2, axis=1)
                frac = np.mean(phi * d2 <= 1.0)
                assert frac >= 1.0 - placed.tube.delta_tube - 0.004

    def test_ground_recentring_mean_exact_from_step_one(self, gr_library):
        # the tracking law overwrites (v, theta) after the first step, so
        # the recentred expected states are exact for k >= 1 even when the
        # measured speed differs from the library start speed
        prim = gr_library[3]
        pose = (0.5, -0.2, 1.4, 0.6)  # measured v != library v0 = 1
        placed = pl.recentre(GR, prim, pose)
        n = 400_000
        traj = dyn.simulate(GR, np.tile(pose, (n, 1)), placed.controls,
                            np.random.default_rng(0))
        expected = placed.expected_states()
        for k in range(1, prim.horizon + 1):
            mean = traj[:, k, :2].mean(axis=0)
            se = traj[:, k, :2].std(axis=0) / np.sqrt(n)
            assert np.all(np.abs(mean - expected[k]) <= 4.0 * se + 1e-9)

    def test_ground_tube_containment_from_offset_speed(self, gr_library):
        rng = np.random.default_rng(23)
        prim = gr_library[2]
        pose = (0.0, 0.0, 1.25, -0.3)
        placed = pl.recentre(GR, prim, pose)
        n = 2000
        traj = dyn.simulate(GR, np.tile(pose, (n, 1)), placed.controls, rng)
        phi = 1.0 / placed.tube.radius ** 2
        horizon = prim.horizon
        for k in range(1, horizon + 1):
            center = placed.nominal.evaluate(k / horizon)
            d2 = np.sum((traj[:, k, :2] - center) ** 2, axis=1)
            assert np.mean(phi * d2 <= 1.0) \
                >= 1.0 - placed.tube.delta_tube - 0.004


class TestObjectives:
    def test_path_distance_squared(self):
        obj = pl.PathTrackingObjective([(0.0, 0.0), (1.0, 0.0)])
        d2 = obj.distance_squared(np.array([[0.5, 0.3], [2.0, 0.0],
                                            [-1.0, 1.0]]))
        np.testing.assert_allclose(d2, [0.09, 1.0, 2.0], atol=1e-12)

    def test_straight_path_prefers_straight_primitive(self, uw_library):
        placed = [pl.recentre(UW, p, (0.0, 0.0, 0.0)) for p in uw_library]
        obj = straight_objective()
        scores = [obj.score(p) for p in placed]
        assert int(np.argmin(scores)) == 2  # the middle (straight) primitive

    def test_terminal_cost_corridor_penalty(self, uw_library):
        obj = pl.TerminalCostObjective(target_y=0.0)
        straight = pl.recentre(UW, uw_library[2], (0.0, 0.0, 0.0))
        sharp = pl.recentre(UW, uw_library[0], (0.0, 0.0, 0.0))
        assert obj.score(straight) < 1e-6
        assert obj.score(sharp) > 1e6  # terminal heading 1.2 > pi/6


class TestPlanCycle:
    def test_obstacle_free_picks_argmin(self, uw_library):
        cset = ct.RiskContourSet(0.1, ())
        chosen, log = pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                                    straight_objective())
        assert chosen.index == 2
        assert log.chosen == 2
        assert set(log.scores) == {0, 1, 2, 3, 4}
        assert chosen.score == min(log.scores.values())

    def test_symmetric_tie_breaks_to_lowest_index(self, uw_library):
        class Flat:
            def score(self, placed):
                return 1.0
        cset = ct.RiskContourSet(0.1, ())
        chosen, _ = pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                                  Flat())
        assert chosen.index == 0

    def test_blocking_obstacle_diverts(self, uw_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.5, -0.2), unc.uniform(0.15, 0.2))], 0.1)
        chosen, _ = pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                                  straight_objective())
        assert chosen.index != 2
        cert = pl.sos.certify_tube(chosen.tube, cset, interval=(0.0, 0.5))
        assert cert.certified

    def test_fully_blocked_raises(self, uw_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.0, 0.0), unc.uniform(1.0, 1.2))], 0.1)
        with pytest.raises(pl.PlannerStuckError):
            pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                          straight_objective())

    def test_culling_preserves_certified_verdicts(self, uw_library):
        # a fast crosser far at both window endpoints must survive culling
        obstacles = [
            ct.disc_obstacle((0.6, 0.2), W),
            ct.disc_obstacle((8.0, 8.0), W),
            ct.disc_obstacle((0.5, -6.0), W, velocity=(0.0, 24.0)),
        ]
        cset = ct.build_contour_set(obstacles, 0.1)
        pose = (0.0, 0.0, 0.0)
        placed = [pl.recentre(UW, p, pose) for p in uw_library]
        window = (0.0, uw_library[0].horizon * UW.dt)
        tube_len = max(np.linalg.norm(p.nominal.evaluate(1.0)
                                      - p.nominal.evaluate(0.0))
                       for p in placed)
        radius = max(p.tube.radius for p in placed)
        culled = pl.cull_contours(cset, pose[:2], tube_len, radius, window)
        for p in placed:
            full = pl.sos.certify_tube(p.tube, cset, interval=window)
            cut = pl.sos.certify_tube(p.tube, culled, interval=window)
            assert full.verdict == cut.verdict

    def test_culling_drops_far_static_obstacle(self, uw_library):
        cset = ct.build_contour_set([ct.disc_obstacle((8.0, 8.0), W)], 0.1)
        placed = pl.recentre(UW, uw_library[0], (0.0, 0.0, 0.0))
        culled = pl.cull_contours(cset, (0.0, 0.0), 0.5,
                                  placed.tube.radius, (0.0, 0.5))
        assert len(culled.entries) == 0

    def test_boundary_probe_order_is_a_permutation(self, uw_library):
        placed = [pl.recentre(UW, p, (0.0, 0.0, 0.0)) for p in uw_library]
        order = pl._boundary_probe_order(placed)
        assert sorted(p.index for p in order) == [0, 1, 2, 3, 4]
        assert order[0].index == 2  # midpoint probed first

    def test_binary_search_mode_finds_certified(self, uw_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.5, -0.2), unc.uniform(0.15, 0.2))], 0.1)
        opts = pl.PlannerOptions(binary_search=True)
        chosen, _ = pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                                  straight_objective(), options=opts)
        cert = pl.sos.certify_tube(chosen.tube, cset, interval=(0.0, 0.5))
        assert cert.certified

    def test_ground_unsafe_measured_state_raises(self, gr_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.0, 0.0), unc.uniform(1.0, 1.2))], 0.1)
        with pytest.raises(pl.PlannerStuckError):
            pl.plan_cycle(GR, (0.0, 0.0, 1.0, 0.0), gr_library, cset,
                          straight_objective())

    def test_log_json(self, uw_library):
        cset = ct.RiskContourSet(0.1, ())
        _, log = pl.plan_cycle(UW, (0.0, 0.0, 0.0), uw_library, cset,
                               straight_objective())
        blob = log.to_json()
        assert blob["chosen"] == 2
        assert blob["scores"]["2"] == log.scores[2]


class TestExecute:
    def test_zero_noise_matches_deterministic_rollout(self, uw_library):
        quiet = dyn.underwater_model(noise_v=unc.point_mass(0.0),
                                     noise_theta=unc.point_mass(0.0))
        prim = uw_library[1]
        pose = (1.0, 2.0, 0.7)
        placed = pl.recentre(UW, prim, pose)
        new_pose = pl.execute(quiet, pose, placed, prim.horizon,
                              np.random.default_rng(0))
        state = np.asarray(pose[:2])
        for entry in placed.controls.entries:
            state = dyn.step(quiet, state, entry, (0.0, 0.0))
        np.testing.assert_allclose(new_pose[:2], state, atol=1e-12)
        assert new_pose[2] == pytest.approx(
            placed.controls.entries[-1][1])

    def test_partial_execution_heading_carry(self, uw_library):
        prim = uw_library[0]
        placed = pl.recentre(UW, prim, (0.0, 0.0, 0.3))
        new_pose = pl.execute(UW, (0.0, 0.0, 0.3), placed, 2,
                              np.random.default_rng(5))
        assert new_pose[2] == pytest.approx(placed.controls.entries[1][1])

    def test_step_bounds_validated(self, uw_library):
        placed = pl.recentre(UW, uw_library[0], (0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            pl.execute(UW, (0.0, 0.0, 0.0), placed, 0,
                       np.random.default_rng(0))
        with pytest.raises(ValueError):
            pl.execute(UW, (0.0, 0.0, 0.0), placed, 99,
                       np.random.default_rng(0))

    def test_executed_state_containment_rate(self, uw_library):
        # landing inside the tube cross-section after the executed steps is
        # a per-step event with probability >= 1 - delta_tube
        prim = uw_library[2]
        pose = (0.0, 0.0, 0.0)
        placed = pl.recentre(UW, prim, pose)
        rng = np.random.default_rng(7)
        steps = 2
        n = 10_000
        traj = dyn.simulate(
            UW, np.tile(pose[:2], (n, 1)),
            dyn.explicit_controls(placed.controls.entries[:steps]), rng)
        center = placed.nominal.evaluate(steps / prim.horizon)
        phi = 1.0 / placed.tube.radius ** 2
        d2 = np.sum((traj[:, -1] - center) ** 2, axis=1)
        assert np.mean(phi * d2 <= 1.0) >= 1.0 - placed.tube.delta_tube \
            - 0.002


class TestRunToGoal:
    def test_obstacle_free_reaches_goal(self, uw_library):
        task = pl.PlanningTask(ct.RiskContourSet(0.1, ()), (1.5, 0.0), 0.15,
                               straight_objective())
        budget = pl.allocate_risk(0.2, 100)
        res = pl.run_to_goal(UW, (0.0, 0.0, 0.0), uw_library, task, budget,
                             np.random.default_rng(1))
        assert res.status == "goal-reached"
        assert res.report["goal_reached"]
        x, y = res.poses[-1][:2]
        assert (x - 1.5) ** 2 + y ** 2 <= 0.15 ** 2
        n = res.report["cycles"]
        assert res.report["linear_bound"] == pytest.approx(0.1 + n * 0.001)
        assert [log.cycle for log in res.logs] == list(range(1, n + 1))
        assert res.logs[-1].product_bound <= res.logs[-1].linear_bound

    def test_budget_cap_enforced(self, uw_library):
        task = pl.PlanningTask(ct.RiskContourSet(0.1, ()), (50.0, 0.0), 0.1,
                               straight_objective())
        budget = pl.RiskBudget(0.2, 3, 0.1, 0.001)
        res = pl.run_to_goal(UW, (0.0, 0.0, 0.0), uw_library, task, budget,
                             np.random.default_rng(2))
        assert res.status == "budget-violated"
        assert res.report["cycles"] == 3

    def test_stuck_reported(self, uw_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.0, 0.0), unc.uniform(1.0, 1.2))], 0.1)
        task = pl.PlanningTask(cset, (5.0, 0.0), 0.1, straight_objective())
        budget = pl.allocate_risk(0.2, 100)
        res = pl.run_to_goal(UW, (0.0, 0.0, 0.0), uw_library, task, budget,
                             np.random.default_rng(3))
        assert res.status == "planner-stuck"
        assert not res.report["goal_reached"]

    def test_avoids_single_obstacle(self, uw_library):
        cset = ct.build_contour_set(
            [ct.disc_obstacle((0.8, -0.25), unc.uniform(0.15, 0.2))], 0.1)
        task = pl.PlanningTask(cset, (1.8, 0.0), 0.2, straight_objective())
        budget = pl.allocate_risk(0.2, 100)
        res = pl.run_to_goal(UW, (0.0, 0.0, 0.0), uw_library, task, budget,
                             np.random.default_rng(4))
        assert res.status == "goal-reached"
        # every visited position must itself satisfy the contours
        for k, pose in enumerate(res.poses):
            t = k * task.replan_stride * UW.dt
            assert pl.point_is_safe(cset, pose[:2], t)
