"""Joint trajectory game: dynamics, potential cost, and OCP assembly.

The joint problem tracks per-agent reference paths under unicycle dynamics
with either homotopy-enforcing separating-hyperplane constraints (one per
ordered agent pair per step) or plain pairwise minimum-distance constraints
(the baseline game). The potential is the sum of the individual tracking
costs, so a unilateral control deviation changes the potential exactly by
that agent's cost change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import sqp
from .planner import JointCandidate

HOMOTOPY = "homotopy"
BASELINE = "baseline"


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class UnicycleState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Control:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


def _expand(value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"per-agent value has shape {arr.shape}, expected ({n},) or scalar")
    return arr


@dataclass(frozen=True)
class GameConfig:
    """Weights, bounds, and safety margins of the joint game.

    Weight and bound fields accept a scalar (shared by all agents) or a
    per-agent sequence.
    """

    horizon: int = 40
    dt: float = 0.1
    w_pos: object = 100.0
    w_v: object = 1.0
    w_omega: object = 30.0
    w_term: object = 100.0
    v_bounds: tuple = (0.0, 0.55)
    omega_bounds: tuple = (-0.5, 0.5)
    beta_o: float = 1.0
    r_o: float = 1.0
    eps: float = 1e-6
    min_sep: float = 1.0   # baseline mode center-to-center floor
    # Curvature model for heading in the SQP Hessian. Heading carries no cost
    # of its own but couples into position through the dynamics; giving it
    # this much diagonal curvature restores near-Newton convergence without
    # moving the optimum (Hessian shaping only affects the steps).
    w_theta_curv: float = 1.0

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0.0:
            raise ValueError("horizon must be >= 1 and dt > 0")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")

    @property
    def safety_radius(self) -> float:
        return self.beta_o * self.r_o

    def v_box(self, n: int):
        lo, hi = self.v_bounds
        return _expand(lo, n), _expand(hi, n)

    def omega_box(self, n: int):
        lo, hi = self.omega_bounds
        return _expand(lo, n), _expand(hi, n)


@dataclass
class OcpProblem:
    config: GameConfig
    init_states: tuple                 # one UnicycleState per agent
    references: np.ndarray             # (N, T+1, 2) time-indexed target points
    mode: str = HOMOTOPY
    candidate: Optional[JointCandidate] = None

    def __post_init__(self):
        self.references = np.asarray(self.references, dtype=float)
        n = len(self.init_states)
        expected = (n, self.config.horizon + 1, 2)
        if self.references.shape != expected:
            raise ValueError(
                f"references have shape {self.references.shape}, expected {expected}"
            )
        if self.mode not in (HOMOTOPY, BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n_agents(self) -> int:
        return len(self.init_states)


@dataclass
class OcpSolution:
    states: np.ndarray                 # (N, T+1, 3)
    controls: np.ndarray               # (N, T, 2)
    potential: float
    individual_costs: np.ndarray       # (N,)
    status: str
    iterations: int
    kkt_residual: float
    max_slack: float


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def _rhs(state: np.ndarray, v: float, omega: float) -> np.ndarray:
    return np.array([v * math.cos(state[2]), v * math.sin(state[2]), omega])


def _rk4(state: np.ndarray, v: float, omega: float, dt: float) -> np.ndarray:
    k1 = _rhs(state, v, omega)
    k2 = _rhs(state + 0.5 * dt * k1, v, omega)
    k3 = _rhs(state + 0.5 * dt * k2, v, omega)
    k4 = _rhs(state + dt * k3, v, omega)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def dynamics_step(state: UnicycleState, control: Control, dt: float) -> UnicycleState:
    """RK4 step of the unicycle kinematics (v*cos, v*sin, omega)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = _rk4(state.as_array(), control.v, control.omega, dt)
    return UnicycleState(out[0], out[1], out[2])


def _rk4_batch(states: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized RK4 step over M (state, control) pairs: (M,3),(M,2)->(M,3)."""
    v = controls[:, 0]
    om = controls[:, 1]

    def rhs(s):
        return np.column_stack([v * np.cos(s[:, 2]), v * np.sin(s[:, 2]), om])

    k1 = rhs(states)
    k2 = rhs(states + 0.5 * dt * k1)
    k3 = rhs(states + 0.5 * dt * k2)
    k4 = rhs(states + dt * k3)
    return states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_jacobians_batch(states: np.ndarray, controls: np.ndarray, dt: float):
    """Vectorized RK4 Jacobians: (M,3,3) w.r.t. state, (M,3,2) w.r.t. control."""
    M = states.shape[0]
    v = controls[:, 0]
    om = controls[:, 1]

    def rhs(s):
        return np.column_stack([v * np.cos(s[:, 2]), v * np.sin(s[:, 2]), om])

    def jac_s(s):
        J = np.zeros((M, 3, 3))
        J[:, 0, 2] = -v * np.sin(s[:, 2])
        J[:, 1, 2] = v * np.cos(s[:, 2])
        return J

    def jac_u(s):
        J = np.zeros((M, 3, 2))
        J[:, 0, 0] = np.cos(s[:, 2])
        J[:, 1, 0] = np.sin(s[:, 2])
        J[:, 2, 1] = 1.0
        return J

    eye = np.broadcast_to(np.eye(3), (M, 3, 3))
    k1 = rhs(states)
    s2 = states + 0.5 * dt * k1
    k2 = rhs(s2)
    s3 = states + 0.5 * dt * k2
    k3 = rhs(s3)
    s4 = states + dt * k3

    dk1_s = jac_s(states)
    dk1_u = jac_u(states)
    dk2_s = jac_s(s2) @ (eye + 0.5 * dt * dk1_s)
    dk2_u = jac_s(s2) @ (0.5 * dt * dk1_u) + jac_u(s2)
    dk3_s = jac_s(s3) @ (eye + 0.5 * dt * dk2_s)
    dk3_u = jac_s(s3) @ (0.5 * dt * dk2_u) + jac_u(s3)
    dk4_s = jac_s(s4) @ (eye + dt * dk3_s)
    dk4_u = jac_s(s4) @ (dt * dk3_u) + jac_u(s4)

    A = eye + (dt / 6.0) * (dk1_s + 2.0 * dk2_s + 2.0 * dk3_s + dk4_s)
    B = (dt / 6.0) * (dk1_u + 2.0 * dk2_u + 2.0 * dk3_u + dk4_u)
    return A, B


def _rk4_jacobians(state: np.ndarray, v: float, omega: float, dt: float):
    """d(next)/d(state) and d(next)/d(control) of the RK4 step."""

    def jac_s(s):
        return np.array([
            [0.0, 0.0, -v * math.sin(s[2])],
            [0.0, 0.0, v * math.cos(s[2])],
            [0.0, 0.0, 0.0],
        ])

    def jac_u(s):
        return np.array([
            [math.cos(s[2]), 0.0],
            [math.sin(s[2]), 0.0],
            [0.0, 1.0],
        ])

    eye = np.eye(3)
    k1 = _rhs(state, v, omega)
    s2 = state + 0.5 * dt * k1
    k2 = _rhs(s2, v, omega)
    s3 = state + 0.5 * dt * k2
    k3 = _rhs(s3, v, omega)
    s4 = state + dt * k3

    dk1_s = jac_s(state)
    dk1_u = jac_u(state)
    dk2_s = jac_s(s2) @ (eye + 0.5 * dt * dk1_s)
    dk2_u = jac_s(s2) @ (0.5 * dt * dk1_u) + jac_u(s2)
    dk3_s = jac_s(s3) @ (eye + 0.5 * dt * dk2_s)
    dk3_u = jac_s(s3) @ (0.5 * dt * dk2_u) + jac_u(s3)
    dk4_s = jac_s(s4) @ (eye + dt * dk3_s)
    dk4_u = jac_s(s4) @ (dt * dk3_u) + jac_u(s4)

    A = eye + (dt / 6.0) * (dk1_s + 2.0 * dk2_s + 2.0 * dk3_s + dk4_s)
    B = (dt / 6.0) * (dk1_u + 2.0 * dk2_u + 2.0 * dk3_u + dk4_u)
    return A, B


def rollout(init: UnicycleState, controls: np.ndarray, dt: float) -> np.ndarray:
    """States (T+1, 3) from exact RK4 propagation of a control sequence."""
    T = controls.shape[0]
    out = np.zeros((T + 1, 3))
    out[0] = init.as_array()
    for k in range(T):
        out[k + 1] = _rk4(out[k], controls[k, 0], controls[k, 1], dt)
    return out


# ---------------------------------------------------------------------------
# Costs and constraints
# ---------------------------------------------------------------------------

def potential_cost(problem: OcpProblem, states: np.ndarray, controls: np.ndarray):
    """Potential value and per-agent costs for given joint trajectories.

    J_i sums position-tracking and control effort over k < T plus a terminal
    position term; the potential is the plain sum of the J_i, so unilateral
    deviations move the potential exactly by the deviating agent's change.
    """
    cfg = problem.config
    n, T = problem.n_agents, cfg.horizon
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.shape != (n, T + 1, 3) or controls.shape != (n, T, 2):
        raise ValueError("trajectory dimensions do not match the problem horizon")
    w_pos = _expand(cfg.w_pos, n)
    w_v = _expand(cfg.w_v, n)
    w_om = _expand(cfg.w_omega, n)
    w_term = _expand(cfg.w_term, n)

    costs = np.zeros(n)
    for i in range(n):
        dev = states[i, :T, :2] - problem.references[i, :T]
        term = states[i, T, :2] - problem.references[i, T]
        costs[i] = (
            w_pos[i] * float(np.sum(dev * dev))
            + w_v[i] * float(np.sum(controls[i, :, 0] ** 2))
            + w_om[i] * float(np.sum(controls[i, :, 1] ** 2))
            + w_term[i] * float(term @ term)
        )
    return float(np.sum(costs)), costs


def homotopy_halfspace(x_j, ref_i, cfg: GameConfig):
    """Separating hyperplane pinning agent i to its reference side of agent j.

    Returns (A_hat, b_hat); the constraint value for a query point x_i is
    g = A_hat . x_i - b_hat, feasible when g <= 0.
    """
    x_j = np.asarray(x_j, dtype=float)
    ref_i = np.asarray(ref_i, dtype=float)
    d = x_j - ref_i
    den = float(np.linalg.norm(d)) + cfg.eps
    a_hat = d / den
    b_hat = float(a_hat @ (x_j - cfg.safety_radius * a_hat))
    return a_hat, b_hat


def halfspace_value(x_i, x_j, ref_i, cfg: GameConfig) -> float:
    a_hat, b_hat = homotopy_halfspace(x_j, ref_i, cfg)
    return float(a_hat @ np.asarray(x_i, dtype=float)) - b_hat


# ---------------------------------------------------------------------------
# OCP assembly
# ---------------------------------------------------------------------------

class _Layout:
    """Variable indexing: all states (agent-major, step-minor), then controls."""

    def __init__(self, n: int, T: int):
        self.n = n
        self.T = T
        self.nx = 3 * n * (T + 1)
        self.nu = 2 * n * T
        self.size = self.nx + self.nu

    def xs(self, i: int, k: int) -> int:
        return 3 * (i * (self.T + 1) + k)

    def us(self, i: int, k: int) -> int:
        return self.nx + 2 * (i * self.T + k)

    def states_of(self, z: np.ndarray) -> np.ndarray:
        return z[: self.nx].reshape(self.n, self.T + 1, 3)

    def controls_of(self, z: np.ndarray) -> np.ndarray:
        return z[self.nx:].reshape(self.n, self.T, 2)

    def pack(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return np.concatenate([states.reshape(-1), controls.reshape(-1)])


def _pair_rows(problem: OcpProblem):
    """Deterministic inequality row ordering: step-major, then agent pairs."""
    n, T = problem.n_agents, problem.config.horizon
    rows = []
    if problem.mode == HOMOTOPY:
        for k in range(T):
            for i in range(n):
                for j in range(n):
                    if i != j:
                        rows.append((k, i, j))
    else:
        for k in range(T):
            for i in range(n):
                for j in range(i + 1, n):
                    rows.append((k, i, j))
    return rows


def build_ocp(problem: OcpProblem) -> sqp.NlpDescription:
    """Assemble the joint OCP as an NlpDescription for the SQP solver.

    Decision variables are all states (k = 0..T) and controls (k < T).
    Equalities pin the initial states and the RK4 dynamics defects;
    inequalities are the mode's pairwise constraints for k < T; control
    boxes become variable bounds.
    """
    cfg = problem.config
    n, T = problem.n_agents, cfg.horizon
    lay = _Layout(n, T)
    refs = problem.references
    w_pos = _expand(cfg.w_pos, n)
    w_v = _expand(cfg.w_v, n)
    w_om = _expand(cfg.w_omega, n)
    w_term = _expand(cfg.w_term, n)

    # Constant Gauss-Newton Hessian (diagonal: the objective is a plain
    # weighted sum of squares in the decision variables).
    hdiag = np.zeros(lay.size)
    g_ref = np.zeros(lay.size)   # constant -2*w*ref offset of the gradient
    curv = np.zeros(lay.size)    # Hessian-only heading curvature (step shaping)
    for i in range(n):
        for k in range(T + 1):
            w = w_pos[i] if k < T else w_term[i]
            base = lay.xs(i, k)
            hdiag[base: base + 2] = 2.0 * w
            curv[base + 2] = cfg.w_theta_curv
            g_ref[base: base + 2] = -2.0 * w * refs[i, k]
        for k in range(T):
            hdiag[lay.us(i, k)] = 2.0 * w_v[i]
            hdiag[lay.us(i, k) + 1] = 2.0 * w_om[i]
    hess = sp.diags(hdiag + curv, format="csc")

    def objective_value(z):
        f, _ = potential_cost(problem, lay.states_of(z), lay.controls_of(z))
        return f

    def objective(z):
        f = objective_value(z)
        return f, hdiag * z + g_ref, hess

    # Equalities: initial conditions then dynamics defects, agent-major.
    # Defect blocks are indexed by (i, k) flattened agent-major.
    m_eq = 3 * n + 3 * n * T
    init_arr = np.array([s.as_array() for s in problem.init_states])
    prev_ik = np.array([(i, k) for i in range(n) for k in range(T)], dtype=int)

    def _defect_states(states, controls):
        s_prev = states[prev_ik[:, 0], prev_ik[:, 1]]
        u_prev = controls[prev_ik[:, 0], prev_ik[:, 1]]
        s_next = states[prev_ik[:, 0], prev_ik[:, 1] + 1]
        return s_prev, u_prev, s_next

    def equality_value(z):
        states = lay.states_of(z)
        controls = lay.controls_of(z)
        s_prev, u_prev, s_next = _defect_states(states, controls)
        c = np.zeros(m_eq)
        c[: 3 * n] = (states[:, 0] - init_arr).reshape(-1)
        c[3 * n:] = (s_next - _rk4_batch(s_prev, u_prev, cfg.dt)).reshape(-1)
        return c

    # Sparsity pattern (built once): init identities, then per-(i,k) blocks of
    # [identity(3) | -A (row-major) | -B (row-major)].
    eq_rows, eq_cols = [], []
    for i in range(n):
        for d in range(3):
            eq_rows.append(3 * i + d)
            eq_cols.append(lay.xs(i, 0) + d)
    r0 = 3 * n
    for b, (i, k) in enumerate(prev_ik):
        base_r = r0 + 3 * b
        for d in range(3):
            eq_rows.append(base_r + d)
            eq_cols.append(lay.xs(i, k + 1) + d)
        for d in range(3):
            for c2 in range(3):
                eq_rows.append(base_r + d)
                eq_cols.append(lay.xs(i, k) + c2)
        for d in range(3):
            for c2 in range(2):
                eq_rows.append(base_r + d)
                eq_cols.append(lay.us(i, k) + c2)
    eq_nnz = len(eq_rows)
    _eq_template = sp.coo_matrix(
        (np.arange(eq_nnz, dtype=float), (eq_rows, eq_cols)), shape=(m_eq, lay.size)
    ).tocsr()
    eq_perm = _eq_template.data.astype(int)
    n_init = 3 * n

    def equality(z):
        states = lay.states_of(z)
        controls = lay.controls_of(z)
        s_prev, u_prev, s_next = _defect_states(states, controls)
        c = np.zeros(m_eq)
        c[:n_init] = (states[:, 0] - init_arr).reshape(-1)
        c[n_init:] = (s_next - _rk4_batch(s_prev, u_prev, cfg.dt)).reshape(-1)
        A, B = _rk4_jacobians_batch(s_prev, u_prev, cfg.dt)
        nb = prev_ik.shape[0]
        fill = np.empty(eq_nnz)
        fill[:n_init] = 1.0
        blocks = np.empty((nb, 18))
        blocks[:, 0:3] = 1.0
        blocks[:, 3:12] = -A.reshape(nb, 9)
        blocks[:, 12:18] = -B.reshape(nb, 6)
        fill[n_init:] = blocks.reshape(-1)
        J = sp.csr_matrix(
            (fill[eq_perm], _eq_template.indices, _eq_template.indptr),
            shape=(m_eq, lay.size),
        )
        return c, J

    pair_rows = _pair_rows(problem)
    m_in = len(pair_rows)
    beta = cfg.safety_radius
    eps = cfg.eps
    if m_in:
        pk = np.array([k for (k, i, j) in pair_rows], dtype=int)
        pi_idx = np.array([i for (k, i, j) in pair_rows], dtype=int)
        pj_idx = np.array([j for (k, i, j) in pair_rows], dtype=int)
        in_rows, in_cols = [], []
        for r, (k, i, j) in enumerate(pair_rows):
            for d2 in range(2):
                in_rows.append(r)
                in_cols.append(lay.xs(i, k) + d2)
            for d2 in range(2):
                in_rows.append(r)
                in_cols.append(lay.xs(j, k) + d2)
        _in_template = sp.coo_matrix(
            (np.arange(len(in_rows), dtype=float), (in_rows, in_cols)),
            shape=(m_in, lay.size),
        ).tocsr()
        in_perm = _in_template.data.astype(int)
        ref_rows = refs[pi_idx, pk] if problem.mode == HOMOTOPY else None

    def _ineq_terms(states):
        pi = states[pi_idx, pk, :2]
        pj = states[pj_idx, pk, :2]
        if problem.mode == HOMOTOPY:
            d = pj - ref_rows
            nn = np.linalg.norm(d, axis=1)
            den = nn + eps
            a_hat = d / den[:, None]
            w = pi - pj
            c = np.einsum("ij,ij->i", a_hat, w) + beta * (nn / den) ** 2
            gi = a_hat
            dw = np.einsum("ij,ij->i", d, w)
            safe = nn > 1e-12
            scale = np.where(safe, dw / (np.where(safe, nn, 1.0) * den * den), 0.0)
            gj = w / den[:, None] - d * scale[:, None] - a_hat \
                + 2.0 * beta * eps * d / (den ** 3)[:, None]
        else:
            diff = pi - pj
            c = cfg.min_sep ** 2 - np.einsum("ij,ij->i", diff, diff)
            gi = -2.0 * diff
            gj = 2.0 * diff
        return c, gi, gj

    def inequality_value(z):
        c, _gi, _gj = _ineq_terms(lay.states_of(z))
        return c

    def inequality(z):
        c, gi, gj = _ineq_terms(lay.states_of(z))
        fill = np.column_stack([gi, gj]).reshape(-1)
        J = sp.csr_matrix(
            (fill[in_perm], _in_template.indices, _in_template.indptr),
            shape=(m_in, lay.size),
        )
        return c, J

    lb = np.full(lay.size, -np.inf)
    ub = np.full(lay.size, np.inf)
    v_lo, v_hi = cfg.v_box(n)
    om_lo, om_hi = cfg.omega_box(n)
    for i in range(n):
        for k in range(T):
            lb[lay.us(i, k)] = v_lo[i]
            ub[lay.us(i, k)] = v_hi[i]
            lb[lay.us(i, k) + 1] = om_lo[i]
            ub[lay.us(i, k) + 1] = om_hi[i]

    return sqp.NlpDescription(
        n=lay.size,
        objective=objective,
        equality=equality,
        inequality=inequality if m_in else None,
        lb=lb,
        ub=ub,
        x0=initial_guess(problem),
        objective_value=objective_value,
        equality_value=equality_value,
        inequality_value=inequality_value if m_in else None,
    )


def initial_guess(problem: OcpProblem) -> np.ndarray:
    """Dynamically feasible tracking rollout toward each reference."""
    cfg = problem.config
    n, T = problem.n_agents, cfg.horizon
    lay = _Layout(n, T)
    states = np.zeros((n, T + 1, 3))
    controls = np.zeros((n, T, 2))
    v_lo, v_hi = cfg.v_box(n)
    om_lo, om_hi = cfg.omega_box(n)
    for i in range(n):
        s = problem.init_states[i].as_array()
        states[i, 0] = s
        for k in range(T):
            target = problem.references[i, k + 1]
            delta = target - s[:2]
            dist = float(np.linalg.norm(delta))
            if dist > 1e-9:
                desired = math.atan2(delta[1], delta[0])
                err = wrap_angle(desired - s[2])
            else:
                err = 0.0
            omega = float(np.clip(err / cfg.dt, om_lo[i], om_hi[i]))
            v = float(np.clip(dist / cfg.dt * max(math.cos(err), 0.0), v_lo[i], v_hi[i]))
            controls[i, k] = (v, omega)
            s = _rk4(s, v, omega, cfg.dt)
            states[i, k + 1] = s
    return lay.pack(states, controls)


def solve_ocp(problem: OcpProblem, settings: Optional[sqp.SolverSettings] = None,
              warm_start: Optional[np.ndarray] = None) -> OcpSolution:
    """Solve the joint OCP and return trajectories with exact dynamics.

    The returned states are re-rolled from the solved controls through the
    RK4 dynamics, so defects vanish to machine precision; cost and the
    constraint slack are re-evaluated on the rolled trajectory.
    """
    settings = settings or sqp.SolverSettings()
    nlp = build_ocp(problem)
    if warm_start is not None and warm_start.shape == (nlp.n,):
        nlp.x0 = warm_start
    result = sqp.solve(nlp, settings)

    cfg = problem.config
    n, T = problem.n_agents, cfg.horizon
    lay = _Layout(n, T)
    controls = lay.controls_of(result.x).copy()
    states = np.zeros((n, T + 1, 3))
    for i in range(n):
        states[i] = rollout(problem.init_states[i], controls[i], cfg.dt)
    phi, costs = potential_cost(problem, states, controls)

    violation = constraint_violation(problem, states)
    max_slack = max(result.max_slack, violation)
    status = result.status
    if status == sqp.OPTIMAL and max_slack > settings.max_feasible_slack:
        status = sqp.INFEASIBLE
    return OcpSolution(
        states=states,
        controls=controls,
        potential=phi,
        individual_costs=costs,
        status=status,
        iterations=result.iterations,
        kkt_residual=result.kkt_residual,
        max_slack=max_slack,
    )


def constraint_violation(problem: OcpProblem, states: np.ndarray) -> float:
    """Max violation of the mode's pairwise constraints along a trajectory."""
    cfg = problem.config
    worst = 0.0
    for (k, i, j) in _pair_rows(problem):
        pi = states[i, k, :2]
        pj = states[j, k, :2]
        if problem.mode == HOMOTOPY:
            g = halfspace_value(pi, pj, problem.references[i, k], cfg)
        else:
            g = cfg.min_sep ** 2 - float(np.sum((pi - pj) ** 2))
        worst = max(worst, g)
    return worst


# ---------------------------------------------------------------------------
# Reference construction
# ---------------------------------------------------------------------------

def pad_reference(points: np.ndarray, T: int, start_index: int = 0) -> np.ndarray:
    """T+1 reference points from a discrete path: truncate from
    ``start_index`` and repeat the final point once the path runs out."""
    pts = np.asarray(points, dtype=float)
    idx = np.arange(start_index, start_index + T + 1)
    idx = np.clip(idx, 0, pts.shape[0] - 1)
    return pts[idx]


def progress_index(points: np.ndarray, position, prev_index: int = 0) -> int:
    """Closest-point index of ``position`` on a discrete path, clamped to be
    monotone non-decreasing across calls."""
    pts = np.asarray(points, dtype=float)
    p = np.asarray(position, dtype=float)
    idx = int(np.argmin(np.linalg.norm(pts - p, axis=1)))
    return max(idx, int(prev_index))


def candidate_references(candidate: JointCandidate, T: int,
                         progress: Optional[Sequence[int]] = None) -> np.ndarray:
    """Time-indexed references (N, T+1, 2) from a joint candidate's paths."""
    n = len(candidate.paths)
    progress = [0] * n if progress is None else list(progress)
    refs = np.zeros((n, T + 1, 2))
    for i, path in enumerate(candidate.paths):
        refs[i] = pad_reference(path.discrete.points, T, progress[i])
    return refs


def straight_references(positions, goals, v_refs, T: int, dt: float) -> np.ndarray:
    """Straight-line references from current positions to goals at v_ref*dt
    spacing (the baseline game's reference rule)."""
    n = len(positions)
    refs = np.zeros((n, T + 1, 2))
    for i in range(n):
        p = np.asarray(positions[i], dtype=float)
        g = np.asarray(goals[i], dtype=float)
        dist = float(np.linalg.norm(g - p))
        step = float(v_refs[i]) * dt
        if dist <= 1e-12:
            refs[i] = g
            continue
        direction = (g - p) / dist
        for k in range(T + 1):
            refs[i, k] = p + direction * min(k * step, dist)
    return refs
