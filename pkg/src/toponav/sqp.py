"""Sequential quadratic programming for smooth NLPs.

The solver handles problems of the form

    min  f(x)   s.t.  c_eq(x) = 0,  c_in(x) <= 0,  lb <= x <= ub

via Gauss-Newton SQP. Nonlinear inequalities are relaxed with non-negative
slack variables penalized in the objective (elastic mode), so an infeasible
problem degrades to a reported slack instead of a solver failure. The convex
QP subproblems are solved by an operator-splitting (ADMM) iteration with a
direct active-set polish step for high accuracy; everything is deterministic
for fixed inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


class EvaluationError(RuntimeError):
    """An NLP evaluator returned NaN/Inf."""


@dataclass
class NlpDescription:
    """Smooth NLP in evaluator form.

    objective(x)  -> (value, gradient, gauss_newton_hessian [sparse])
    equality(x)   -> (values, jacobian [sparse])   target: values = 0
    inequality(x) -> (values, jacobian [sparse])   target: values <= 0
    """

    n: int
    objective: Callable
    equality: Optional[Callable] = None
    inequality: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    # Optional value-only fast paths (no Jacobians) used by the line search.
    objective_value: Optional[Callable] = None
    equality_value: Optional[Callable] = None
    inequality_value: Optional[Callable] = None

    def bounds(self):
        lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        return lb, ub


@dataclass
class SolverSettings:
    max_iter: int = 50
    rti_mode: bool = False
    kkt_tol: float = 1e-6
    constraint_tol: float = 1e-6
    slack_penalty: float = 1e4
    # Quadratic slack term: keeps the QP strongly convex in the slack
    # directions without changing the optimal slack (s = max(violation, 0)).
    slack_quadratic: float = 1e4
    max_feasible_slack: float = 1e-3
    qp_max_iter: int = 4000
    qp_tol: float = 1e-8
    regularization: float = 1e-8
    verbose: bool = False
    log: Optional[Callable] = None   # receives one formatted line per iteration


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    converged: bool
    iterations: int
    polished: bool
    primal_res: float
    dual_res: float
    active_low: Optional[np.ndarray] = None   # row masks of the solution's
    active_upp: Optional[np.ndarray] = None   # active set, for warm starts


@dataclass
class SolveResult:
    x: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    max_slack: float
    objective: float
    eq_dual: np.ndarray
    ineq_dual: np.ndarray
    slacks: np.ndarray


# ---------------------------------------------------------------------------
# QP subsolver: min 1/2 x'Px + q'x  s.t. l <= Ax <= u
# ---------------------------------------------------------------------------

_ADMM_SIGMA = 1e-6
_ADMM_ALPHA = 1.6
_RHO_EQ_SCALE = 1e3


def _try_active_set(P, q, A, l, u, eq_rows, low, upp, tol):
    """Equality-solve on a candidate active set; validate the full KKT system.

    Validation tolerances are relative to the data scale so that problems
    with large penalty gradients are not rejected on absolute roundoff.
    """
    m, n = A.shape
    scale_d = 1.0 + float(np.max(np.abs(q), initial=0.0))
    bounds_finite = np.concatenate([l[np.isfinite(l)], u[np.isfinite(u)]])
    scale_p = 1.0 + float(np.max(np.abs(bounds_finite), initial=0.0))
    active = eq_rows | low | upp
    ka = int(np.sum(active))
    delta = 1e-9
    if ka:
        A_act = A[active]
        b_act = np.where(eq_rows | low, l, u)[active]
        kkt = sp.bmat(
            [[P + delta * sp.eye(n), A_act.T], [A_act, -delta * sp.eye(ka)]],
            format="csc",
        )
        rhs = np.concatenate([-q, b_act])
        big = sp.bmat([[P, A_act.T], [A_act, None]], format="csc")
    else:
        kkt = sp.csc_matrix(P + delta * sp.eye(n))
        rhs = -q
        big = sp.csc_matrix(P)
    try:
        lu = splu(kkt)
    except RuntimeError:
        return None
    sol = lu.solve(rhs)
    # One step of iterative refinement against the unregularized system.
    sol = sol + lu.solve(rhs - big @ sol)
    if not np.all(np.isfinite(sol)):
        return None

    x_new = sol[:n]
    y_new = np.zeros(m)
    if ka:
        y_new[active] = sol[n:]
    sign_tol = max(tol, 1e-9)
    if np.any(y_new[low] > sign_tol) or np.any(y_new[upp] < -sign_tol):
        return None
    z_new = A @ x_new
    primal = float(max(np.max(np.maximum(z_new - u, 0.0), initial=0.0),
                       np.max(np.maximum(l - z_new, 0.0), initial=0.0)))
    dual = float(np.max(np.abs(P @ x_new + q + A.T @ y_new), initial=0.0))
    if primal <= tol * scale_p and dual <= tol * scale_d:
        return x_new, y_new
    return None


def _polish(P, q, A, l, u, x, y, tol):
    """Direct solve on the active set identified by the ADMM iterate.

    Tries the dual-sign active set first, then a proximity-augmented one.
    Returns (x, y, (low, upp), True) when a candidate satisfies the KKT
    system to ``tol``; (None, None, None, False) otherwise.
    """
    z = A @ x
    eq_rows = (u - l) < 1e-12
    fin_l = np.isfinite(l)
    fin_u = np.isfinite(u)
    low_dual = ~eq_rows & fin_l & (y < -1e-10)
    upp_dual = ~eq_rows & fin_u & (y > 1e-10)
    result = _try_active_set(P, q, A, l, u, eq_rows, low_dual, upp_dual, tol)
    if result is not None:
        return result[0], result[1], (low_dual, upp_dual), True
    tol_l = 1e-7 * (1.0 + np.abs(np.where(fin_l, l, 0.0)))
    tol_u = 1e-7 * (1.0 + np.abs(np.where(fin_u, u, 0.0)))
    low = low_dual | (~eq_rows & fin_l & (z <= np.where(fin_l, l, -np.inf) + tol_l))
    upp = upp_dual | (~eq_rows & fin_u & (z >= np.where(fin_u, u, np.inf) - tol_u))
    low &= ~upp
    result = _try_active_set(P, q, A, l, u, eq_rows, low, upp, tol)
    if result is not None:
        return result[0], result[1], (low, upp), True
    return None, None, None, False


def _ruiz_equilibrate(P, q, A, iters=3):
    """Modified Ruiz equilibration plus cost scaling.

    Returns scaled (P, q, A) with diagonal scalings S (variables), R (rows)
    and the cost factor c: x = S x_scaled, y = R y_scaled / c.
    """
    n = P.shape[0]
    m = A.shape[0]
    S = np.ones(n)
    R = np.ones(m)
    c = 1.0
    Pb = P.copy()
    qb = q.copy()
    Ab = A.copy()

    def colmax(M):
        if M.shape[0] == 0 or M.nnz == 0:
            return np.zeros(M.shape[1])
        return np.asarray(np.abs(M).max(axis=0).todense()).ravel()

    def rowmax(M):
        if M.shape[0] == 0 or M.nnz == 0:
            return np.zeros(M.shape[0])
        return np.asarray(np.abs(M).max(axis=1).todense()).ravel()

    for _ in range(iters):
        norms_x = np.maximum(colmax(Pb), colmax(Ab))
        dx = 1.0 / np.sqrt(np.clip(norms_x, 1e-8, 1e8))
        norms_y = rowmax(Ab)
        dy = 1.0 / np.sqrt(np.clip(norms_y, 1e-8, 1e8))
        Dx = sp.diags(dx)
        Dy = sp.diags(dy)
        Pb = (Dx @ Pb @ Dx).tocsc()
        Ab = (Dy @ Ab @ Dx).tocsc()
        qb = dx * qb
        S *= dx
        R *= dy
        col_p = colmax(Pb)
        denom = max(float(np.mean(col_p)) if col_p.size else 0.0,
                    float(np.max(np.abs(qb), initial=0.0)))
        gamma = 1.0 / max(denom, 1e-8)
        gamma = min(gamma, 1e6)
        Pb = (gamma * Pb).tocsc()
        qb = gamma * qb
        c *= gamma
    return Pb, qb, Ab, S, R, c


def qp_solve(P, q, A, l, u, settings: SolverSettings,
             warm_x: Optional[np.ndarray] = None,
             warm_y: Optional[np.ndarray] = None,
             warm_active: Optional[tuple] = None) -> QpResult:
    """Deterministic solve of a convex QP with box-interval constraints.

    ``A`` must include any variable bounds as explicit rows. Equality rows
    are encoded as l == u. A ``warm_active`` guess (low/upp row masks from a
    previous related QP) is tried first as a direct KKT solve, validated
    exactly; otherwise an equilibrated ADMM iteration runs with an
    active-set polish step. The unpolished iterate is returned only if it
    already meets ``qp_tol``.
    """
    P = sp.csc_matrix(P)
    A = sp.csc_matrix(A)
    m, n = A.shape
    q = np.asarray(q, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)

    eq_mask = (u - l) < 1e-12
    if warm_active is not None:
        low_g = np.asarray(warm_active[0], dtype=bool) & ~eq_mask & np.isfinite(l)
        upp_g = np.asarray(warm_active[1], dtype=bool) & ~eq_mask & np.isfinite(u)
        low_g = low_g & ~upp_g
        guess = _try_active_set(P, q, A, l, u, eq_mask, low_g, upp_g, settings.qp_tol)
        if guess is not None:
            return QpResult(guess[0], guess[1], True, 0, True, 0.0, 0.0,
                            active_low=low_g, active_upp=upp_g)

    # Equilibrate: ADMM convergence is scale-sensitive and the elastic
    # penalty puts 1e4-sized entries next to O(1) constraint rows.
    Pb, qb, Ab, S, R, cost_c = _ruiz_equilibrate(P, q, A)
    lb_s = R * l
    ub_s = R * u

    eq_rows = (u - l) < 1e-12
    rho = np.where(eq_rows, _RHO_EQ_SCALE * 0.1, 0.1)

    xs = np.zeros(n) if warm_x is None else warm_x.astype(float) / S
    ys = np.zeros(m) if warm_y is None else warm_y.astype(float) * cost_c / R
    zs = np.clip(Ab @ xs, lb_s, ub_s)

    def factor(rho_vec):
        kkt = sp.bmat(
            [[Pb + _ADMM_SIGMA * sp.eye(n), Ab.T],
             [Ab, -sp.diags(1.0 / rho_vec)]],
            format="csc",
        )
        return splu(kkt)

    lu = factor(rho)
    check_every = 25
    best = None
    n_refactor = 0
    last_polish_res = math.inf  # gate polish retries on actual progress

    def unscaled_residuals(xs_, ys_):
        x_ = S * xs_
        y_ = R * ys_ / cost_c
        r_p = float(np.max(np.abs(np.clip(A @ x_, l, u) - A @ x_), initial=0.0))
        r_d = float(np.max(np.abs(P @ x_ + q + A.T @ y_), initial=0.0))
        return x_, y_, r_p, r_d

    for it in range(1, settings.qp_max_iter + 1):
        rhs = np.concatenate([_ADMM_SIGMA * xs - qb, zs - ys / rho])
        sol = lu.solve(rhs)
        x_t = sol[:n]
        nu = sol[n:]
        z_t = zs + (nu - ys) / rho
        xs = _ADMM_ALPHA * x_t + (1.0 - _ADMM_ALPHA) * xs
        z_relax = _ADMM_ALPHA * z_t + (1.0 - _ADMM_ALPHA) * zs
        z_new = np.clip(z_relax + ys / rho, lb_s, ub_s)
        ys = ys + rho * (z_relax - z_new)
        zs = z_new

        if it % check_every == 0 or it == settings.qp_max_iter:
            # Scaled-space residuals drive termination and rho adaptation.
            rs_p = float(np.max(np.abs(Ab @ xs - zs), initial=0.0))
            rs_d = float(np.max(np.abs(Pb @ xs + qb + Ab.T @ ys), initial=0.0))
            if best is None or max(rs_p, rs_d) < best[2]:
                best = (xs.copy(), ys.copy(), max(rs_p, rs_d))
            rs = max(rs_p, rs_d)
            if rs <= 1e-5 and rs < 0.3 * last_polish_res:
                last_polish_res = rs
                x_u, y_u, r_p, r_d = unscaled_residuals(xs, ys)
                xp, yp, masks, ok = _polish(P, q, A, l, u, x_u, y_u, settings.qp_tol)
                if ok:
                    return QpResult(xp, yp, True, it, True, 0.0, 0.0,
                                    active_low=masks[0], active_upp=masks[1])
                if r_p <= settings.qp_tol and r_d <= settings.qp_tol:
                    return QpResult(x_u, y_u, True, it, False, r_p, r_d,
                                    active_low=(y_u < -1e-10), active_upp=(y_u > 1e-10))
            # Rebalance rho when residuals diverge (bounded refactorizations).
            if it % (check_every * 10) == 0 and n_refactor < 10 and rs_d > 0 and rs_p > 0:
                ratio = rs_p / rs_d
                if ratio > 10.0 or ratio < 0.1:
                    rho = np.clip(rho * math.sqrt(ratio), 1e-6, 1e6)
                    lu = factor(rho)
                    n_refactor += 1

    xs, ys, _ = best
    x_u, y_u, r_p, r_d = unscaled_residuals(xs, ys)
    xp, yp, masks, ok = _polish(P, q, A, l, u, x_u, y_u, settings.qp_tol)
    if ok:
        return QpResult(xp, yp, True, settings.qp_max_iter, True, 0.0, 0.0,
                        active_low=masks[0], active_upp=masks[1])
    converged = r_p <= settings.qp_tol and r_d <= settings.qp_tol
    return QpResult(x_u, y_u, converged, settings.qp_max_iter, False, r_p, r_d,
                    active_low=(y_u < -1e-10), active_upp=(y_u > 1e-10))


# ---------------------------------------------------------------------------
# SQP driver
# ---------------------------------------------------------------------------

def _check_finite(name, *arrays):
    for arr in arrays:
        data = arr.data if sp.issparse(arr) else np.asarray(arr)
        if not np.all(np.isfinite(data)):
            raise EvaluationError(f"{name} evaluator returned non-finite values")


def _evaluate(nlp: NlpDescription, x: np.ndarray):
    f, g, H = nlp.objective(x)
    _check_finite("objective", np.array([f]), g, H)
    if nlp.equality is not None:
        c_eq, J_eq = nlp.equality(x)
        _check_finite("equality", c_eq, J_eq)
    else:
        c_eq, J_eq = np.zeros(0), sp.csr_matrix((0, nlp.n))
    if nlp.inequality is not None:
        c_in, J_in = nlp.inequality(x)
        _check_finite("inequality", c_in, J_in)
    else:
        c_in, J_in = np.zeros(0), sp.csr_matrix((0, nlp.n))
    return float(f), np.asarray(g, dtype=float), sp.csc_matrix(H), \
        np.asarray(c_eq, dtype=float), sp.csr_matrix(J_eq), \
        np.asarray(c_in, dtype=float), sp.csr_matrix(J_in)


def _evaluate_values(nlp: NlpDescription, x: np.ndarray):
    """Objective and constraint values only (for line-search trials)."""
    if nlp.objective_value is not None:
        f = float(nlp.objective_value(x))
    else:
        f = float(nlp.objective(x)[0])
    if nlp.equality is None:
        c_eq = np.zeros(0)
    elif nlp.equality_value is not None:
        c_eq = np.asarray(nlp.equality_value(x), dtype=float)
    else:
        c_eq = np.asarray(nlp.equality(x)[0], dtype=float)
    if nlp.inequality is None:
        c_in = np.zeros(0)
    elif nlp.inequality_value is not None:
        c_in = np.asarray(nlp.inequality_value(x), dtype=float)
    else:
        c_in = np.asarray(nlp.inequality(x)[0], dtype=float)
    _check_finite("objective", np.array([f]))
    _check_finite("constraints", c_eq, c_in)
    return f, c_eq, c_in


def _kkt_residual(g, J_eq, J_in, c_eq, c_in, s, nu, lam, x, lb, ub, penalty, quad):
    """Infinity-norm KKT residual of the elastic problem (stationarity,
    feasibility, complementarity)."""
    grad_l = g.copy()
    if J_eq.shape[0]:
        grad_l += J_eq.T @ nu
    if J_in.shape[0]:
        grad_l += J_in.T @ lam

    at_lb = x <= lb + 1e-9
    at_ub = x >= ub - 1e-9
    stat = grad_l.copy()
    stat[at_lb] = np.minimum(stat[at_lb], 0.0)
    stat[at_ub & ~at_lb] = np.maximum(stat[at_ub & ~at_lb], 0.0)
    stationarity = float(np.max(np.abs(stat), initial=0.0))

    if c_in.shape[0]:
        # Slack stationarity: pen_eff - lam acts as the multiplier of s >= 0;
        # normalized by the penalty scale so the tolerance is scale-free.
        pen_eff = penalty + quad * s
        slack_stat = np.where(s > 1e-9, np.abs(pen_eff - lam), np.maximum(lam - pen_eff, 0.0))
        slack_stat = slack_stat / (1.0 + pen_eff)
        stationarity = max(stationarity, float(np.max(slack_stat, initial=0.0)))
        stationarity = max(stationarity, float(np.max(-lam, initial=0.0)))

    feas = float(np.max(np.abs(c_eq), initial=0.0))
    comp = 0.0
    if c_in.shape[0]:
        viol = c_in - s
        feas = max(feas, float(np.max(viol, initial=0.0)))
        comp = float(np.max(np.abs(lam * viol), initial=0.0))
    return stationarity, feas, comp


def _merit(f, s, c_eq, c_in, penalty, quad, rho_m):
    value = f + penalty * float(np.sum(s)) + 0.5 * quad * float(np.sum(s * s))
    value += rho_m * float(np.sum(np.abs(c_eq)))
    if c_in.shape[0]:
        value += rho_m * float(np.sum(np.maximum(c_in - s, 0.0)))
    return value


def solve(nlp: NlpDescription, settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Solve a smooth NLP; see module docstring for the formulation.

    Statuses: ``optimal`` (KKT residual below ``kkt_tol``), ``max_iter``
    (iteration cap), ``infeasible`` (terminated with an inequality slack
    above ``max_feasible_slack``). In RTI mode exactly one full-step
    iteration runs.
    """
    lb, ub = nlp.bounds()
    if nlp.x0 is None:
        x = np.clip(np.zeros(nlp.n), lb, ub)
    else:
        x = np.clip(np.asarray(nlp.x0, dtype=float).copy(), lb, ub)
    if x.shape != (nlp.n,):
        raise ValueError(f"initial guess has shape {x.shape}, expected ({nlp.n},)")

    f, g, H, c_eq, J_eq, c_in, J_in = _evaluate(nlp, x)
    m_eq, m_in = c_eq.shape[0], c_in.shape[0]
    s = np.maximum(c_in, 0.0)
    nu = np.zeros(m_eq)
    lam = np.zeros(m_in)

    mu = settings.regularization
    rho_m = 1.0
    iterations = 0
    kkt = math.inf
    converged = False
    max_steps = 1 if settings.rti_mode else settings.max_iter
    warm_qp = None
    warm_active = None

    for _ in range(max_steps):
        stat, feas, comp = _kkt_residual(
            g, J_eq, J_in, c_eq, c_in, s, nu, lam, x, lb, ub,
            settings.slack_penalty, settings.slack_quadratic,
        )
        kkt = max(stat, comp, 0.0)
        feas_ok = feas <= settings.constraint_tol
        if iterations > 0 and kkt <= settings.kkt_tol and feas_ok:
            converged = True
            break

        n = nlp.n
        nv = n + m_in
        P = sp.bmat(
            [[H + mu * sp.eye(n), None],
             [None, (mu + settings.slack_quadratic) * sp.eye(m_in) if m_in else None]],
            format="csc",
        ) if m_in else sp.csc_matrix(H + mu * sp.eye(n))
        q = np.concatenate([g, settings.slack_penalty + settings.slack_quadratic * s])

        blocks = []
        l_list, u_list = [], []
        if m_eq:
            blocks.append(sp.hstack([J_eq, sp.csr_matrix((m_eq, m_in))]))
            l_list.append(-c_eq)
            u_list.append(-c_eq)
        if m_in:
            blocks.append(sp.hstack([J_in, -sp.eye(m_in)]))
            l_list.append(np.full(m_in, -np.inf))
            u_list.append(-(c_in - s))
        blocks.append(sp.hstack([sp.eye(n), sp.csr_matrix((n, m_in))]))
        l_list.append(lb - x)
        u_list.append(ub - x)
        if m_in:
            blocks.append(sp.hstack([sp.csr_matrix((m_in, n)), sp.eye(m_in)]))
            l_list.append(-s)
            u_list.append(np.full(m_in, np.inf))
        A = sp.vstack(blocks, format="csc")
        l = np.concatenate(l_list)
        u = np.concatenate(u_list)

        qp = None
        for _attempt in range(3):
            qp = qp_solve(P, q, A, l, u, settings,
                          warm_x=warm_qp[0] if warm_qp else None,
                          warm_y=warm_qp[1] if warm_qp else None,
                          warm_active=warm_active)
            if qp.converged:
                break
            warm_active = None
            mu = max(mu * 100.0, 1e-6)
            P = P + mu * sp.eye(nv)
        if qp is None or not qp.converged:
            break  # step failure after increased regularization: abort

        dx = qp.x[:n]
        ds = qp.x[n:]
        if m_in:
            # Scrub QP-tolerance noise from the slack step: spurious 1e-9
            # entries times the 1e4 penalty gradient would otherwise bias the
            # predicted merit decrease by a step-independent constant.
            ds = np.maximum(ds, -s)
            ds[np.abs(ds) <= 1e-9 * (1.0 + s)] = 0.0
        nu_new = qp.y[:m_eq]
        lam_new = qp.y[m_eq:m_eq + m_in]
        warm_qp = (qp.x, qp.y)
        if qp.active_low is not None:
            warm_active = (qp.active_low, qp.active_upp)

        mult_norm = max(
            float(np.max(np.abs(nu_new), initial=0.0)),
            float(np.max(np.abs(lam_new), initial=0.0)),
        )
        rho_m = max(rho_m, 2.0 * mult_norm + 1.0)

        merit_0 = _merit(f, s, c_eq, c_in, settings.slack_penalty, settings.slack_quadratic, rho_m)
        viol_0 = float(np.sum(np.abs(c_eq))) + float(np.sum(np.maximum(c_in - s, 0.0)))
        slack_grad = settings.slack_penalty + settings.slack_quadratic * s
        descent = float(g @ dx) + float(slack_grad @ ds) - rho_m * viol_0

        noise = 1e-10 * (1.0 + abs(merit_0))
        step_norm = float(np.max(np.abs(dx), initial=0.0))
        tiny_step = step_norm <= 1e-5 * (1.0 + float(np.max(np.abs(x), initial=0.0)))

        if settings.rti_mode or tiny_step:
            # RTI takes one full step; near convergence the step is tiny and
            # the merit change sits below float resolution, where Armijo
            # would backtrack on noise.
            alpha = 1.0
            x = np.clip(x + dx, lb, ub)
            s = np.maximum(s + ds, 0.0)
            f, g, H, c_eq, J_eq, c_in, J_in = _evaluate(nlp, x)
        else:
            alpha = 1.0
            accepted = False
            while alpha >= 1e-4:
                x_try = np.clip(x + alpha * dx, lb, ub)
                s_try = np.maximum(s + alpha * ds, 0.0)
                f_t, ceq_t, cin_t = _evaluate_values(nlp, x_try)
                merit_t = _merit(f_t, s_try, ceq_t, cin_t, settings.slack_penalty, settings.slack_quadratic, rho_m)
                target = merit_0 + 0.1 * alpha * min(descent, 0.0)
                if merit_t <= target + noise:
                    x, s = x_try, s_try
                    f, g, H, c_eq, J_eq, c_in, J_in = _evaluate(nlp, x)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # No merit progress along the QP step: treat as converged to
                # the achievable accuracy rather than looping.
                iterations += 1
                nu, lam = nu_new, lam_new
                stat, feas, comp = _kkt_residual(
                    g, J_eq, J_in, c_eq, c_in, s, nu, lam, x, lb, ub,
                    settings.slack_penalty, settings.slack_quadratic,
                )
                kkt = max(stat, comp)
                converged = kkt <= settings.kkt_tol and feas <= settings.constraint_tol
                break

        nu, lam = nu_new, lam_new
        iterations += 1
        if settings.log is not None:
            settings.log(
                f"iter {iterations}: merit={merit_0:.6e} kkt={kkt:.3e} "
                f"alpha={alpha:.3f} step={float(np.max(np.abs(dx), initial=0.0)):.3e}"
            )

    if not converged:
        stat, feas, comp = _kkt_residual(
            g, J_eq, J_in, c_eq, c_in, s, nu, lam, x, lb, ub,
            settings.slack_penalty, settings.slack_quadratic,
        )
        kkt = max(stat, comp)
        converged = iterations > 0 and kkt <= settings.kkt_tol and feas <= settings.constraint_tol

    max_slack = float(np.max(s, initial=0.0))
    if max_slack > settings.max_feasible_slack:
        status = INFEASIBLE
    elif converged:
        status = OPTIMAL
    else:
        status = MAX_ITER
    return SolveResult(
        x=x,
        status=status,
        iterations=iterations,
        kkt_residual=kkt,
        max_slack=max_slack,
        objective=f,
        eq_dual=nu,
        ineq_dual=lam,
        slacks=s,
    )
