import math

import numpy as np
import pytest

from toponav import game, sqp
from toponav.game import (
    BASELINE,
    Control,
    GameConfig,
    HOMOTOPY,
    OcpProblem,
    UnicycleState,
    build_ocp,
    dynamics_step,
    homotopy_halfspace,
    potential_cost,
    solve_ocp,
)


class TestDynamics:
    def test_rest_is_fixed_point(self):
        s = UnicycleState(1.0, -2.0, 0.7)
        out = dynamics_step(s, Control(0.0, 0.0), 0.1)
        assert out == s

    def test_straight_line_exact(self):
        out = dynamics_step(UnicycleState(0.0, 0.0, 0.0), Control(1.0, 0.0), 0.1)
        np.testing.assert_allclose(out.as_array(), [0.1, 0.0, 0.0], atol=1e-12)

    def test_quarter_circle_constant_twist(self):
        # v = 1, omega = 1 for pi/2 seconds traces a quarter circle of radius 1.
        s = UnicycleState(0.0, 0.0, 0.0)
        dt = (math.pi / 2.0) / 16.0
        for _ in range(16):
            s = dynamics_step(s, Control(1.0, 1.0), dt)
        np.testing.assert_allclose(s.as_array(), [1.0, 1.0, math.pi / 2.0], atol=1e-4)

    def test_theta_wrapped(self):
        s = UnicycleState(0.0, 0.0, 3.0 * math.pi)
        assert -math.pi < s.theta <= math.pi

    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = rng.normal(size=3)
            v, om = rng.uniform(0.1, 1.0), rng.uniform(-0.5, 0.5)
            A, B = game._rk4_jacobians(s, v, om, 0.1)
            eps = 1e-6
            for c in range(3):
                dp = s.copy(); dp[c] += eps
                dm = s.copy(); dm[c] -= eps
                fd = (game._rk4(dp, v, om, 0.1) - game._rk4(dm, v, om, 0.1)) / (2 * eps)
                np.testing.assert_allclose(A[:, c], fd, atol=1e-7)
            fd_v = (game._rk4(s, v + eps, om, 0.1) - game._rk4(s, v - eps, om, 0.1)) / (2 * eps)
            fd_om = (game._rk4(s, v, om + eps, 0.1) - game._rk4(s, v, om - eps, 0.1)) / (2 * eps)
            np.testing.assert_allclose(B[:, 0], fd_v, atol=1e-7)
            np.testing.assert_allclose(B[:, 1], fd_om, atol=1e-7)


def toy_problem(n=2, T=5, mode=HOMOTOPY, seed=0):
    rng = np.random.default_rng(seed)
    cfg = GameConfig(horizon=T, dt=0.1)
    inits = tuple(
        UnicycleState(*rng.uniform(-1.0, 1.0, size=2), rng.uniform(-3.0, 3.0))
        for _ in range(n)
    )
    refs = rng.uniform(-2.0, 2.0, size=(n, T + 1, 2))
    return OcpProblem(config=cfg, init_states=inits, references=refs, mode=mode)


class TestPotentialCost:
    def test_zero_on_reference(self):
        T = 4
        cfg = GameConfig(horizon=T, dt=0.1)
        ref = np.tile(np.array([1.0, 2.0]), (T + 1, 1))[None]
        prob = OcpProblem(cfg, (UnicycleState(1.0, 2.0, 0.0),), ref)
        states = np.zeros((1, T + 1, 3))
        states[0, :, 0] = 1.0
        states[0, :, 1] = 2.0
        controls = np.zeros((1, T, 2))
        phi, costs = potential_cost(prob, states, controls)
        assert phi == 0.0 and costs[0] == 0.0

    def test_single_agent_hand_value(self):
        cfg = GameConfig(horizon=1, dt=0.1, w_pos=1.0, w_v=1.0, w_omega=1.0, w_term=1.0)
        ref = np.array([[[1.0, 0.0], [2.0, 0.0]]])
        prob = OcpProblem(cfg, (UnicycleState(0.0, 0.0, 0.0),), ref)
        states = np.zeros((1, 2, 3))
        controls = np.zeros((1, 1, 2))
        phi, costs = potential_cost(prob, states, controls)
        # w_pos*1^2 for k=0 plus w_term*2^2 at the terminal point.
        assert abs(phi - (1.0 + 4.0)) < 1e-12

    def test_unilateral_deviation_identity(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            n = int(rng.integers(2, 4))
            T = int(rng.integers(2, 8))
            prob = toy_problem(n=n, T=T, seed=trial)
            cfg = prob.config
            u_a = rng.uniform(-0.5, 0.5, size=(n, T, 2))
            u_b = u_a.copy()
            i = int(rng.integers(0, n))
            u_b[i] = rng.uniform(-0.5, 0.5, size=(T, 2))

            def states_for(u):
                return np.stack([
                    game.rollout(prob.init_states[a], u[a], cfg.dt) for a in range(n)
                ])

            phi_a, costs_a = potential_cost(prob, states_for(u_a), u_a)
            phi_b, costs_b = potential_cost(prob, states_for(u_b), u_b)
            assert abs((phi_a - phi_b) - (costs_a[i] - costs_b[i])) < 1e-9

    def test_dimension_mismatch_rejected(self):
        prob = toy_problem(n=2, T=5)
        with pytest.raises(ValueError):
            potential_cost(prob, np.zeros((2, 5, 3)), np.zeros((2, 5, 2)))


class TestHalfspace:
    CFG = GameConfig(horizon=2, dt=0.1, beta_o=1.0, r_o=1.0, eps=1e-6)

    def test_worked_example(self):
        a_hat, b_hat = homotopy_halfspace((2.0, 0.0), (0.0, 0.0), self.CFG)
        np.testing.assert_allclose(a_hat, [1.0, 0.0], atol=1e-5)
        assert abs(b_hat - 1.0) < 1e-4
        g = game.halfspace_value((0.0, 0.0), (2.0, 0.0), (0.0, 0.0), self.CFG)
        assert abs(g + 1.0) < 1e-4

    def test_collocated_points_infeasible(self):
        g = game.halfspace_value((1.0, 1.0), (1.0, 1.0), (0.0, 0.0), self.CFG)
        assert g > 0.0

    def test_feasibility_implies_separation(self):
        rng = np.random.default_rng(5)
        beta = self.CFG.safety_radius
        n_checked = 0
        for _ in range(2000):
            x_j = rng.uniform(-3.0, 3.0, size=2)
            ref = rng.uniform(-3.0, 3.0, size=2)
            x_i = rng.uniform(-3.0, 3.0, size=2)
            a_hat, b_hat = homotopy_halfspace(x_j, ref, self.CFG)
            if float(a_hat @ x_i) - b_hat <= 0.0:
                n_checked += 1
                a_norm_sq = float(a_hat @ a_hat)
                assert np.linalg.norm(x_i - x_j) >= beta * a_norm_sq - 1e-12
        assert n_checked > 100  # the property was actually exercised


class TestBuildOcp:
    def test_homotopy_constraint_count(self):
        prob = toy_problem(n=3, T=40, mode=HOMOTOPY)
        nlp = build_ocp(prob)
        c, J = nlp.inequality(nlp.x0)
        assert c.shape == (6 * 40,)

    def test_baseline_constraint_count(self):
        prob = toy_problem(n=3, T=40, mode=BASELINE)
        nlp = build_ocp(prob)
        c, J = nlp.inequality(nlp.x0)
        assert c.shape == (3 * 40,)

    def test_single_agent_no_pairwise(self):
        prob = toy_problem(n=1, T=10)
        nlp = build_ocp(prob)
        assert nlp.inequality is None

    def test_reference_shape_mismatch_rejected(self):
        cfg = GameConfig(horizon=5, dt=0.1)
        with pytest.raises(ValueError):
            OcpProblem(cfg, (UnicycleState(0, 0, 0),), np.zeros((1, 3, 2)))

    @pytest.mark.parametrize("mode", [HOMOTOPY, BASELINE])
    def test_gradients_match_finite_differences(self, mode):
        prob = toy_problem(n=2, T=3, mode=mode, seed=7)
        nlp = build_ocp(prob)
        rng = np.random.default_rng(17)
        z = nlp.x0 + rng.uniform(-0.1, 0.1, size=nlp.n)

        f0, g0, _ = nlp.objective(z)
        eps = 1e-6
        for idx in rng.choice(nlp.n, size=25, replace=False):
            zp = z.copy(); zp[idx] += eps
            zm = z.copy(); zm[idx] -= eps
            fd = (nlp.objective(zp)[0] - nlp.objective(zm)[0]) / (2 * eps)
            denom = max(1.0, abs(fd), abs(g0[idx]))
            assert abs(g0[idx] - fd) / denom < 1e-5

        for evaluator in (nlp.equality, nlp.inequality):
            c0, J0 = evaluator(z)
            J0 = J0.toarray()
            for idx in rng.choice(nlp.n, size=20, replace=False):
                zp = z.copy(); zp[idx] += eps
                zm = z.copy(); zm[idx] -= eps
                fd = (evaluator(zp)[0] - evaluator(zm)[0]) / (2 * eps)
                denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(J0[:, idx])))
                assert float(np.max(np.abs(J0[:, idx] - fd) / denom)) < 1e-5


def head_on_problem(T=40, v_ref=0.5):
    """Two agents swap sides along opposite sine detours.

    References are paced at v_ref*dt arc steps (like planner output), so
    they are actually trackable under the control bounds.
    """
    from toponav import geometry as geo

    cfg = GameConfig(horizon=T, dt=0.1)
    inits = (
        UnicycleState(0.0, 0.0, 0.0),
        UnicycleState(4.0, 0.3, math.pi),
    )
    t = np.linspace(0.0, 1.0, 80)
    path0 = np.column_stack([4.0 * t, 1.2 * np.sin(math.pi * t)])
    path1 = np.column_stack([4.0 - 4.0 * t, 0.3 - 1.2 * np.sin(math.pi * t)])
    step = v_ref * cfg.dt
    refs = np.stack([
        game.pad_reference(geo.resample_arclength(path0, step), T),
        game.pad_reference(geo.resample_arclength(path1, step), T),
    ])
    return OcpProblem(cfg, inits, refs, mode=HOMOTOPY)


class TestSolveOcp:
    def test_head_on_optimal_and_separated(self):
        prob = head_on_problem()
        sol = solve_ocp(prob)
        assert sol.status == sqp.OPTIMAL
        beta = prob.config.safety_radius
        T = prob.config.horizon
        for k in range(T):
            d = np.linalg.norm(sol.states[0, k, :2] - sol.states[1, k, :2])
            assert d >= beta - 1e-4
        # Exact dynamics on the returned trajectories.
        for i in range(2):
            for k in range(T):
                nxt = game._rk4(sol.states[i, k], sol.controls[i, k, 0],
                                sol.controls[i, k, 1], prob.config.dt)
                np.testing.assert_allclose(sol.states[i, k + 1], nxt, atol=1e-12)

    def test_potential_equals_cost_sum(self):
        sol = solve_ocp(head_on_problem())
        assert abs(sol.potential - float(np.sum(sol.individual_costs))) < 1e-9

    def test_controls_within_bounds(self):
        prob = head_on_problem()
        sol = solve_ocp(prob)
        v = sol.controls[:, :, 0]
        om = sol.controls[:, :, 1]
        assert np.all(v >= prob.config.v_bounds[0] - 1e-9)
        assert np.all(v <= prob.config.v_bounds[1] + 1e-9)
        assert np.all(om >= prob.config.omega_bounds[0] - 1e-9)
        assert np.all(om <= prob.config.omega_bounds[1] + 1e-9)


class TestReferences:
    def test_pad_reference_repeats_goal(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        ref = game.pad_reference(pts, T=5)
        assert ref.shape == (6, 2)
        np.testing.assert_array_equal(ref[2:], np.tile([2.0, 0.0], (4, 1)))

    def test_pad_reference_truncates_from_progress(self):
        pts = np.arange(20, dtype=float).reshape(10, 2)
        ref = game.pad_reference(pts, T=3, start_index=4)
        np.testing.assert_array_equal(ref[0], pts[4])
        np.testing.assert_array_equal(ref[-1], pts[7])

    def test_progress_index_monotone(self):
        pts = np.column_stack([np.linspace(0, 5, 11), np.zeros(11)])
        i1 = game.progress_index(pts, (2.0, 0.1))
        assert i1 == 4
        # Even if the agent slips backward the index never decreases.
        i2 = game.progress_index(pts, (0.0, 0.0), prev_index=i1)
        assert i2 == i1

    def test_straight_references_spacing(self):
        refs = game.straight_references([(0.0, 0.0)], [(2.0, 0.0)], [0.5], T=50, dt=0.1)
        np.testing.assert_allclose(np.diff(refs[0, :40, 0]), 0.05, atol=1e-12)
        # Saturates at the goal once the path runs out (40 steps at 0.05 m).
        np.testing.assert_allclose(refs[0, 40:], np.tile([2.0, 0.0], (11, 1)), atol=1e-12)
