import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from toponav import sqp
from toponav.sqp import NlpDescription, SolverSettings, qp_solve, solve


def quadratic_nlp(Q, b, n, x0=None):
    """min 1/2 x'Qx - b'x as an NlpDescription."""
    Qs = sp.csc_matrix(Q)

    def objective(x):
        return 0.5 * float(x @ (Q @ x)) - float(b @ x), Q @ x - b, Qs

    return NlpDescription(n=n, objective=objective, x0=x0)


class TestQpSolve:
    def settings(self):
        return SolverSettings()

    def test_box_only_clamps(self):
        n = 4
        P = sp.diags([1.0, 2.0, 3.0, 4.0]).tocsc()
        q = -np.array([10.0, -10.0, 0.5, 2.0])  # unconstrained optimum: 10, -5, 1/6, 1/2
        A = sp.eye(n).tocsc()
        l = np.full(n, -1.0)
        u = np.full(n, 1.0)
        res = qp_solve(P, q, A, l, u, self.settings())
        assert res.converged
        expected = np.clip([10.0, -5.0, 1.0 / 6.0, 0.5], -1.0, 1.0)
        np.testing.assert_allclose(res.x, expected, atol=1e-7)

    def test_single_active_inequality_projection(self):
        # min 1/2||x - c||^2 s.t. a'x <= b with c violating: x* = c - (a'c - b)/||a||^2 a
        c = np.array([2.0, 1.0])
        a = np.array([1.0, 1.0])
        b = 1.0
        P = sp.eye(2).tocsc()
        q = -c
        A = sp.vstack([sp.csr_matrix(a), sp.eye(2)]).tocsc()
        l = np.array([-np.inf, -np.inf, -np.inf])
        u = np.array([b, np.inf, np.inf])
        res = qp_solve(P, q, A, l, u, self.settings())
        assert res.converged
        expected = c - (a @ c - b) / (a @ a) * a
        np.testing.assert_allclose(res.x, expected, atol=1e-7)

    def test_random_qps_match_active_set_enumeration(self):
        rng = np.random.default_rng(42)
        for trial in range(30):
            n = int(rng.integers(2, 8))
            m = int(rng.integers(1, 7))
            M = rng.normal(size=(n, n))
            P = M.T @ M + np.eye(n)
            q = rng.normal(size=n)
            G = rng.normal(size=(m, n))
            x_feas = rng.normal(size=n)
            h = G @ x_feas + rng.uniform(0.1, 1.0, size=m)
            x_star, f_star = active_set_enumeration_oracle(P, q, G, h)

            A = sp.vstack([sp.csr_matrix(G), sp.eye(n)]).tocsc()
            l = np.concatenate([np.full(m, -np.inf), np.full(n, -np.inf)])
            u = np.concatenate([h, np.full(n, np.inf)])
            res = qp_solve(sp.csc_matrix(P), q, A, l, u, self.settings())
            assert res.converged, trial
            f_got = 0.5 * res.x @ (P @ res.x) + q @ res.x
            assert abs(f_got - f_star) < 1e-6, trial
            np.testing.assert_allclose(res.x, x_star, atol=1e-5)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        P = sp.eye(3).tocsc()
        q = rng.normal(size=3)
        A = sp.eye(3).tocsc()
        l, u = np.full(3, -0.5), np.full(3, 0.5)
        r1 = qp_solve(P, q, A, l, u, self.settings())
        r2 = qp_solve(P, q, A, l, u, self.settings())
        np.testing.assert_array_equal(r1.x, r2.x)
        np.testing.assert_array_equal(r1.y, r2.y)


def active_set_enumeration_oracle(P, q, G, h):
    """Exhaustive active-set search for min 1/2 x'Px + q'x s.t. Gx <= h."""
    n = P.shape[0]
    m = G.shape[0]
    best = (None, np.inf)
    for r in range(m + 1):
        for subset in itertools.combinations(range(m), r):
            S = list(subset)
            k = len(S)
            kkt = np.block([
                [P, G[S].T if k else np.zeros((n, 0))],
                [G[S] if k else np.zeros((0, n)), np.zeros((k, k))],
            ])
            rhs = np.concatenate([-q, h[S]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(G @ x > h + 1e-9) or np.any(lam < -1e-9):
                continue
            f = 0.5 * x @ (P @ x) + q @ x
            if f < best[1]:
                best = (x, f)
    assert best[0] is not None
    return best


def riccati_lqr_oracle(A, B, Q, R, Qf, x0, T):
    """Backward Riccati recursion + forward rollout for the discrete LQR."""
    P = Qf.copy()
    gains = [None] * T
    for k in reversed(range(T)):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        gains[k] = K
    xs, us = [x0.copy()], []
    for k in range(T):
        u = -gains[k] @ xs[-1]
        us.append(u)
        xs.append(A @ xs[-1] + B @ u)
    return np.array(xs), np.array(us)


def lqr_nlp(A, B, Q, R, Qf, x0, T):
    nx, nu = A.shape[0], B.shape[1]
    n = nx * (T + 1) + nu * T

    def xi(k):
        return slice(nx * k, nx * (k + 1))

    def ui(k):
        return slice(nx * (T + 1) + nu * k, nx * (T + 1) + nu * (k + 1))

    H = sp.lil_matrix((n, n))
    for k in range(T):
        H[xi(k), xi(k)] = 2.0 * Q
        H[ui(k), ui(k)] = 2.0 * R
    H[xi(T), xi(T)] = 2.0 * Qf
    H = H.tocsc()

    def objective(z):
        f = 0.0
        g = np.zeros(n)
        for k in range(T):
            xk, uk = z[xi(k)], z[ui(k)]
            f += xk @ (Q @ xk) + uk @ (R @ uk)
            g[xi(k)] = 2.0 * Q @ xk
            g[ui(k)] = 2.0 * R @ uk
        xT = z[xi(T)]
        f += xT @ (Qf @ xT)
        g[xi(T)] = 2.0 * Qf @ xT
        return f, g, H

    J = sp.lil_matrix((nx * (T + 1), n))
    J[:nx, xi(0)] = np.eye(nx)
    for k in range(T):
        rows = slice(nx * (k + 1), nx * (k + 2))
        J[rows, xi(k + 1)] = np.eye(nx)
        J[rows, xi(k)] = -A
        J[rows, ui(k)] = -B
    J = J.tocsr()

    def equality(z):
        c = np.zeros(nx * (T + 1))
        c[:nx] = z[xi(0)] - x0
        for k in range(T):
            c[nx * (k + 1): nx * (k + 2)] = z[xi(k + 1)] - A @ z[xi(k)] - B @ z[ui(k)]
        return c, J

    return NlpDescription(n=n, objective=objective, equality=equality), xi, ui


class TestSolve:
    def test_unconstrained_quadratic_newton_exact(self):
        rng = np.random.default_rng(5)
        n = 6
        M = rng.normal(size=(n, n))
        Q = M.T @ M + np.eye(n)
        b = rng.normal(size=n)
        res = solve(quadratic_nlp(Q, b, n), SolverSettings())
        assert res.status == sqp.OPTIMAL
        assert res.iterations <= 2
        np.testing.assert_allclose(res.x, np.linalg.solve(Q, b), atol=1e-8)

    def test_equality_constrained_symmetric(self):
        def objective(x):
            return float(x @ x), 2.0 * x, sp.eye(2).tocsc() * 2.0

        J = sp.csr_matrix(np.array([[1.0, 1.0]]))

        def equality(x):
            return np.array([x[0] + x[1] - 1.0]), J

        res = solve(NlpDescription(n=2, objective=objective, equality=equality), SolverSettings())
        assert res.status == sqp.OPTIMAL
        np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-8)

    def test_lqr_matches_riccati_oracle(self):
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        B = np.array([[0.005], [0.1]])
        Q = np.diag([1.0, 0.1])
        R = np.array([[0.5]])
        Qf = np.diag([5.0, 1.0])
        x0 = np.array([1.0, -0.5])
        T = 20
        xs_star, us_star = riccati_lqr_oracle(A, B, Q, R, Qf, x0, T)

        nlp, xi, ui = lqr_nlp(A, B, Q, R, Qf, x0, T)
        res = solve(nlp, SolverSettings())
        assert res.status == sqp.OPTIMAL
        xs = np.array([res.x[xi(k)] for k in range(T + 1)])
        us = np.array([res.x[ui(k)] for k in range(T)])
        np.testing.assert_allclose(xs, xs_star, atol=1e-6)
        np.testing.assert_allclose(us, us_star, atol=1e-6)

    def test_infeasible_toy_reports_slack(self):
        def objective(x):
            return float(x @ x), 2.0 * x, 2.0 * sp.eye(2).tocsc()

        J = sp.csr_matrix(np.array([[-1.0, 0.0], [1.0, 0.0]]))

        def inequality(x):
            # x0 >= 1 and x0 <= -1: contradictory.
            return np.array([1.0 - x[0], x[0] + 1.0]), J

        res = solve(NlpDescription(n=2, objective=objective, inequality=inequality),
                    SolverSettings())
        assert res.status == sqp.INFEASIBLE
        assert res.max_slack > 0.5

    def test_inequality_active_solution(self):
        # min (x0-2)^2 + (x1-2)^2 s.t. x0 + x1 <= 2 -> (1, 1)
        def objective(x):
            g = 2.0 * (x - 2.0)
            return float((x - 2.0) @ (x - 2.0)), g, 2.0 * sp.eye(2).tocsc()

        J = sp.csr_matrix(np.array([[1.0, 1.0]]))

        def inequality(x):
            return np.array([x[0] + x[1] - 2.0]), J

        res = solve(NlpDescription(n=2, objective=objective, inequality=inequality),
                    SolverSettings())
        assert res.status == sqp.OPTIMAL
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-7)
        assert res.max_slack < 1e-9

    def test_variable_bounds_respected(self):
        rng = np.random.default_rng(9)
        Q = np.diag([1.0, 1.0, 1.0])
        b = np.array([5.0, -5.0, 0.2])
        nlp = quadratic_nlp(Q, b, 3)
        nlp.lb = np.array([-1.0, -1.0, -1.0])
        nlp.ub = np.array([1.0, 1.0, 1.0])
        res = solve(nlp, SolverSettings())
        assert res.status == sqp.OPTIMAL
        np.testing.assert_allclose(res.x, [1.0, -1.0, 0.2], atol=1e-7)

    def test_rti_single_iteration(self):
        rng = np.random.default_rng(1)
        Q = np.eye(3)
        b = rng.normal(size=3)
        res = solve(quadratic_nlp(Q, b, 3), SolverSettings(rti_mode=True))
        assert res.iterations == 1
        # One full Newton step solves a quadratic exactly.
        np.testing.assert_allclose(res.x, b, atol=1e-6)

    def test_deterministic_resolve(self):
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        B = np.array([[0.005], [0.1]])
        nlp, _, _ = lqr_nlp(A, B, np.eye(2), np.eye(1), np.eye(2), np.array([1.0, 0.0]), 10)
        r1 = solve(nlp, SolverSettings())
        nlp2, _, _ = lqr_nlp(A, B, np.eye(2), np.eye(1), np.eye(2), np.array([1.0, 0.0]), 10)
        r2 = solve(nlp2, SolverSettings())
        np.testing.assert_array_equal(r1.x, r2.x)

    def test_nan_evaluator_raises(self):
        def objective(x):
            return float("nan"), np.zeros(2), sp.eye(2).tocsc()

        with pytest.raises(sqp.EvaluationError):
            solve(NlpDescription(n=2, objective=objective), SolverSettings())

    def test_wrong_guess_dimension_raises(self):
        nlp = quadratic_nlp(np.eye(2), np.zeros(2), 2, x0=np.zeros(3))
        with pytest.raises(ValueError):
            solve(nlp, SolverSettings())
