"""Receding-horizon execution of the joint trajectory game.

Every ``replan_period`` steps the homotopy planner reruns from the current
joint configuration, the prefilter keeps the top-K joint candidates, one OCP
is solved per candidate, and the applied plan minimizes solved potential
plus a switching penalty that favors the previously selected homotopy class
per agent. Scripted (irrational) agents are planned for like everyone else
but execute their own controls, which is exactly what makes the robustness
scenarios interesting.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import game as game_mod
from . import planner as planner_mod
from . import prefilter as prefilter_mod
from . import sqp
from .game import BASELINE, HOMOTOPY, Control, GameConfig, OcpProblem, UnicycleState
from .planner import AgentSpec, PlannerConfig, PlanningError
from .prefilter import PrefilterConfig, ScoredCandidate

COMPLETED = "completed"
MAX_STEPS = "max_steps"
FAILED = "failed"

_FAILED_REPLAN_LIMIT = 10


class GamePlayer:
    """Marker policy: the agent applies the solved game controls."""

    kind = "game"

    def reset(self):
        pass


@dataclass
class ScheduledPolicy:
    """Scripted agent driven by an explicit (v, omega) schedule."""

    controls: Sequence
    hold_last: bool = False
    kind: str = field(default="scripted", init=False)

    def reset(self):
        pass

    def control(self, step: int, state: UnicycleState, dt: float) -> Control:
        if step < len(self.controls):
            v, om = self.controls[step]
        elif self.hold_last and len(self.controls):
            v, om = self.controls[-1]
        else:
            v, om = 0.0, 0.0
        return Control(float(v), float(om))


@dataclass
class WaypointPolicy:
    """Scripted agent steering through waypoints with a P-controller."""

    waypoints: Sequence
    speed: float = 0.3
    reach_tol: float = 0.15
    heading_gain: float = 2.0
    kind: str = field(default="scripted", init=False)
    _index: int = field(default=0, init=False, repr=False)

    def reset(self):
        self._index = 0

    def control(self, step: int, state: UnicycleState, dt: float) -> Control:
        wps = np.asarray(self.waypoints, dtype=float)
        while self._index < len(wps) and np.linalg.norm(wps[self._index] - state.pos) < self.reach_tol:
            self._index += 1
        if self._index >= len(wps):
            return Control(0.0, 0.0)
        target = wps[self._index]
        desired = math.atan2(target[1] - state.y, target[0] - state.x)
        err = game_mod.wrap_angle(desired - state.theta)
        omega = self.heading_gain * err
        v = self.speed * max(math.cos(err), 0.0)
        return Control(v, omega)


@dataclass
class ChaserPolicy:
    """Scripted agent that drives at another agent's current position.

    The canonical irrational behavior: the game models this agent as goal
    seeking, but it actually pursues its target, so its executed motion
    contradicts every plan made about it.
    """

    target_index: int
    speed: float = 0.3
    heading_gain: float = 2.0
    stop_distance: float = 0.0
    kind: str = field(default="scripted", init=False)

    def reset(self):
        pass

    def control_world(self, step: int, states: Sequence[UnicycleState],
                      self_index: int, dt: float) -> Control:
        me = states[self_index]
        target = states[self.target_index]
        delta = target.pos - me.pos
        dist = float(np.linalg.norm(delta))
        if dist <= self.stop_distance:
            return Control(0.0, 0.0)
        desired = math.atan2(delta[1], delta[0])
        err = game_mod.wrap_angle(desired - me.theta)
        return Control(self.speed * max(math.cos(err), 0.0), self.heading_gain * err)


@dataclass(frozen=True)
class ExecutorConfig:
    lambda_pen: float = 100.0
    replan_period: int = 1
    goal_tol: float = 0.1
    max_steps: int = 400
    top_k: int = 4
    mode: str = HOMOTOPY
    rti: bool = False

    def __post_init__(self):
        if self.replan_period < 1:
            raise ValueError("replan_period must be >= 1")
        if self.goal_tol <= 0.0:
            raise ValueError("goal_tol must be positive")
        if self.mode not in (HOMOTOPY, BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class StepRecord:
    step: int
    t: float
    states: np.ndarray          # (N, 3) before applying the controls
    controls: np.ndarray        # (N, 2) applied at this step
    replan: bool
    degraded: bool
    selected_rank: Optional[int] = None
    joint_signature: Optional[tuple] = None   # per-agent label strings
    solver_status: Optional[str] = None
    timing: Optional[dict] = None             # wall-clock; never serialized


@dataclass
class SimTrace:
    agents: list                 # AgentSpec
    mode: str
    dt: float
    records: list = field(default_factory=list)
    completion_steps: dict = field(default_factory=dict)   # agent id -> step
    termination: str = MAX_STEPS
    degraded_replans: int = 0
    final_states: Optional[np.ndarray] = None              # (N, 3) after last step
    policy_kinds: list = field(default_factory=list)       # "game" / "scripted"

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def executed_states(self) -> np.ndarray:
        """(steps+1, N, 3): recorded states plus the final propagated state."""
        arr = np.array([r.states for r in self.records])
        if self.final_states is not None:
            arr = np.concatenate([arr, self.final_states[None]], axis=0)
        return arr

    def to_jsonl(self) -> str:
        """Line-delimited trace: one record per step plus a summary line.

        Wall-clock timings are deliberately excluded so that reruns with the
        same seed produce byte-identical output.
        """
        lines = []
        for r in self.records:
            lines.append(json.dumps({
                "step": r.step,
                "t": round(r.t, 9),
                "states": [[float(v) for v in row] for row in r.states],
                "controls": [[float(v) for v in row] for row in r.controls],
                "replan": r.replan,
                "degraded": r.degraded,
                "selected_rank": r.selected_rank,
                "joint_signature": list(r.joint_signature) if r.joint_signature else None,
                "solver_status": r.solver_status,
            }, sort_keys=True))
        lines.append(json.dumps({"summary": {
            "termination": self.termination,
            "completion_steps": {str(k): v for k, v in sorted(self.completion_steps.items())},
            "degraded_replans": self.degraded_replans,
            "mode": self.mode,
            "dt": self.dt,
            "final_states": [[float(v) for v in row] for row in self.final_states]
            if self.final_states is not None else None,
            "policy_kinds": list(self.policy_kinds),
            "agents": [{
                "id": a.id, "start": list(a.start), "goal": list(a.goal),
                "radius": a.radius, "v_ref": a.v_ref,
            } for a in self.agents],
        }}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SimTrace":
        records = []
        summary = None
        for line in text.strip().splitlines():
            obj = json.loads(line)
            if "summary" in obj:
                summary = obj["summary"]
                continue
            records.append(StepRecord(
                step=obj["step"],
                t=obj["t"],
                states=np.asarray(obj["states"], dtype=float),
                controls=np.asarray(obj["controls"], dtype=float),
                replan=obj["replan"],
                degraded=obj["degraded"],
                selected_rank=obj["selected_rank"],
                joint_signature=tuple(obj["joint_signature"]) if obj["joint_signature"] else None,
                solver_status=obj["solver_status"],
            ))
        if summary is None:
            raise ValueError("trace has no summary line")
        agents = [AgentSpec(id=a["id"], start=tuple(a["start"]), goal=tuple(a["goal"]),
                            radius=a["radius"], v_ref=a["v_ref"]) for a in summary["agents"]]
        final = summary.get("final_states")
        trace = cls(agents=agents, mode=summary["mode"], dt=summary["dt"], records=records,
                    completion_steps={int(k): v for k, v in summary["completion_steps"].items()},
                    termination=summary["termination"],
                    degraded_replans=summary["degraded_replans"],
                    final_states=np.asarray(final, dtype=float) if final is not None else None,
                    policy_kinds=list(summary.get("policy_kinds", [])))
        return trace


def signature_key(sig) -> str:
    return ",".join(sig.labels) if sig is not None else ""


def candidate_penalty(candidate_sigs, prev_sigs, available, lambda_pen: float) -> float:
    """Switching penalty: lambda_pen per agent whose previous class is still
    available in the top-K slots but differs from this candidate's class."""
    pen = 0.0
    for i, sig in enumerate(candidate_sigs):
        prev = prev_sigs[i] if prev_sigs else None
        if prev is not None and prev in available[i] and sig != prev:
            pen += lambda_pen
    return pen


def select_candidate(solutions: Sequence, prev_sigs, lambda_pen: float) -> int:
    """Index of the best (ScoredCandidate, OcpSolution) pair.

    Minimizes solved potential plus the switching penalty over non-infeasible
    entries; ties resolve to the lower prefilter rank. Raises ValueError when
    every entry is infeasible.
    """
    n_agents = len(solutions[0][0].candidate.paths) if solutions else 0
    available = [set() for _ in range(n_agents)]
    for scored, _sol in solutions:
        for i, path in enumerate(scored.candidate.paths):
            available[i].add(path.signature)

    best_idx = None
    best_key = None
    for idx, (scored, sol) in enumerate(solutions):
        if sol.status == sqp.INFEASIBLE:
            continue
        sigs = [p.signature for p in scored.candidate.paths]
        score = sol.potential + candidate_penalty(sigs, prev_sigs, available, lambda_pen)
        key = (score, scored.rank)
        if best_key is None or key < best_key:
            best_key = key
            best_idx = idx
    if best_idx is None:
        raise ValueError("all candidate solutions are infeasible")
    return best_idx


def _shift_guess(solution: game_mod.OcpSolution, problem: OcpProblem, period: int) -> np.ndarray:
    """Warm start: previous solution shifted by the executed period."""
    cfg = problem.config
    n, T = problem.n_agents, cfg.horizon
    lay = game_mod._Layout(n, T)
    states = np.zeros((n, T + 1, 3))
    controls = np.zeros((n, T, 2))
    for i in range(n):
        states[i, : T + 1 - period] = solution.states[i, period:]
        states[i, T + 1 - period:] = solution.states[i, -1]
        controls[i, : T - period] = solution.controls[i, period:]
        controls[i, T - period:] = solution.controls[i, -1]
    return lay.pack(states, controls)


def _solver_settings(exec_cfg: ExecutorConfig, base: Optional[sqp.SolverSettings]) -> sqp.SolverSettings:
    if base is None:
        # In-loop stationarity can be looser than one-shot analysis solves;
        # feasibility (which separation rests on) converges within a few
        # iterations and keeps the tight default.
        base = sqp.SolverSettings(kkt_tol=1e-4, max_iter=8, qp_tol=1e-6)
    settings = base
    if exec_cfg.rti and not settings.rti_mode:
        settings = replace(settings, rti_mode=True)
    return settings


@dataclass
class _ReplanOutcome:
    controls: Optional[np.ndarray]      # (N, period, 2) or None when degraded
    rank: Optional[int]
    signature: Optional[tuple]
    status: Optional[str]
    timing: dict


def run(agents: Sequence[AgentSpec], policies: Sequence, planner_cfg: PlannerConfig,
        prefilter_cfg: PrefilterConfig, game_cfg: GameConfig, exec_cfg: ExecutorConfig,
        solver_settings: Optional[sqp.SolverSettings] = None) -> SimTrace:
    """Run the receding-horizon loop until all game players reach their goals.

    Scripted agents are full players inside the game (their intentions are
    modeled) but their executed controls come from their policy. On a replan
    where planning fails or every candidate is infeasible, all game players
    brake for one period; ten consecutive degraded replans terminate the run
    as failed.
    """
    agents = sorted(agents, key=lambda a: a.id)
    n = len(agents)
    if len(policies) != n:
        raise ValueError("one policy per agent is required")
    if abs(planner_cfg.dt - game_cfg.dt) > 1e-12:
        raise ValueError("planner and game dt must match")
    if exec_cfg.replan_period > game_cfg.horizon:
        raise ValueError("replan_period cannot exceed the game horizon")
    settings = _solver_settings(exec_cfg, solver_settings)
    for p in policies:
        p.reset()

    states = []
    for a in agents:
        heading = math.atan2(a.goal[1] - a.start[1], a.goal[0] - a.start[0])
        states.append(UnicycleState(a.start[0], a.start[1], heading))

    game_idx = [i for i, p in enumerate(policies) if getattr(p, "kind", "game") == "game"]
    v_lo, v_hi = game_cfg.v_box(n)
    om_lo, om_hi = game_cfg.omega_box(n)

    trace = SimTrace(agents=list(agents), mode=exec_cfg.mode, dt=game_cfg.dt,
                     policy_kinds=[getattr(p, "kind", "game") for p in policies])
    prev_sigs = [None] * n
    prev_selected = None            # (candidate, solution) of the last good replan
    prev_solutions = {}             # joint signature -> solution, for warm starts
    degraded_streak = 0
    step = 0

    def players_done() -> bool:
        return all(
            np.linalg.norm(states[i].pos - np.asarray(agents[i].goal)) <= exec_cfg.goal_tol
            for i in game_idx
        ) if game_idx else True

    def replan() -> _ReplanOutcome:
        nonlocal prev_sigs, prev_selected, prev_solutions
        timing = {"planner": 0.0, "prefilter": 0.0, "solver": 0.0}
        current = [replace(a, start=(states[i].x, states[i].y)) for i, a in enumerate(agents)]

        if exec_cfg.mode == BASELINE:
            t0 = time.perf_counter()
            refs = game_mod.straight_references(
                [s.pos for s in states], [a.goal for a in agents],
                [a.v_ref for a in agents], game_cfg.horizon, game_cfg.dt,
            )
            problem = OcpProblem(game_cfg, tuple(states), refs, mode=BASELINE)
            warm = None
            if prev_selected is not None:
                warm = _shift_guess(prev_selected[1], problem, exec_cfg.replan_period)
            sol = game_mod.solve_ocp(problem, settings, warm_start=warm)
            timing["solver"] = time.perf_counter() - t0
            if sol.status == sqp.INFEASIBLE:
                prev_selected = None
                return _ReplanOutcome(None, None, None, sol.status, timing)
            prev_selected = (None, sol)
            controls = sol.controls[:, : exec_cfg.replan_period]
            return _ReplanOutcome(controls, None, None, sol.status, timing)

        t0 = time.perf_counter()
        try:
            plan = planner_mod.plan_joint(current, planner_cfg)
        except (PlanningError, ValueError):
            timing["planner"] = time.perf_counter() - t0
            prev_selected = None
            return _ReplanOutcome(None, None, None, None, timing)
        timing["planner"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        pf_cfg = replace(prefilter_cfg, top_k=exec_cfg.top_k)
        _best, top = prefilter_mod.rank_candidates(plan.candidates, pf_cfg)
        timing["prefilter"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        solutions = []
        for scored in top:
            refs = game_mod.candidate_references(scored.candidate, game_cfg.horizon)
            problem = OcpProblem(game_cfg, tuple(states), refs, mode=HOMOTOPY,
                                 candidate=scored.candidate)
            sig_key = scored.candidate.joint_signature
            warm = None
            if sig_key in prev_solutions:
                warm = _shift_guess(prev_solutions[sig_key], problem, exec_cfg.replan_period)
            solutions.append((scored, game_mod.solve_ocp(problem, settings, warm_start=warm)))
        timing["solver"] = time.perf_counter() - t0
        prev_solutions = {
            scored.candidate.joint_signature: sol
            for scored, sol in solutions if sol.status != sqp.INFEASIBLE
        }

        try:
            idx = select_candidate(solutions, prev_sigs, exec_cfg.lambda_pen)
        except ValueError:
            prev_selected = None
            worst = solutions[0][1].status if solutions else None
            return _ReplanOutcome(None, None, None, worst, timing)
        scored, sol = solutions[idx]
        prev_sigs = [p.signature for p in scored.candidate.paths]
        prev_selected = (scored.candidate, sol)
        controls = sol.controls[:, : exec_cfg.replan_period]
        signature = tuple(signature_key(s) for s in prev_sigs)
        return _ReplanOutcome(controls, scored.rank, signature, sol.status, timing)

    outcome = None
    while step < exec_cfg.max_steps:
        if players_done():
            trace.termination = COMPLETED
            break
        if step % exec_cfg.replan_period == 0:
            outcome = replan()
            if outcome.controls is None:
                degraded_streak += 1
                trace.degraded_replans += 1
                if degraded_streak >= _FAILED_REPLAN_LIMIT:
                    trace.termination = FAILED
                    break
            else:
                degraded_streak = 0

        offset = step % exec_cfg.replan_period
        controls = np.zeros((n, 2))
        for i, policy in enumerate(policies):
            if getattr(policy, "kind", "game") == "game":
                if outcome.controls is not None:
                    controls[i] = outcome.controls[i, offset]
            else:
                if hasattr(policy, "control_world"):
                    u = policy.control_world(step, states, i, game_cfg.dt)
                else:
                    u = policy.control(step, states[i], game_cfg.dt)
                controls[i] = (
                    float(np.clip(u.v, v_lo[i], v_hi[i])),
                    float(np.clip(u.omega, om_lo[i], om_hi[i])),
                )

        trace.records.append(StepRecord(
            step=step,
            t=step * game_cfg.dt,
            states=np.array([s.as_array() for s in states]),
            controls=controls.copy(),
            replan=(offset == 0),
            degraded=outcome.controls is None,
            selected_rank=outcome.rank,
            joint_signature=outcome.signature,
            solver_status=outcome.status,
            timing=outcome.timing if offset == 0 else None,
        ))

        for i in range(n):
            states[i] = game_mod.dynamics_step(states[i], Control(*controls[i]), game_cfg.dt)
        step += 1

        for i in range(n):
            aid = agents[i].id
            if aid not in trace.completion_steps:
                if np.linalg.norm(states[i].pos - np.asarray(agents[i].goal)) <= exec_cfg.goal_tol:
                    trace.completion_steps[aid] = step

    if trace.termination == MAX_STEPS and players_done():
        trace.termination = COMPLETED
    trace.final_states = np.array([s.as_array() for s in states])
    return trace
