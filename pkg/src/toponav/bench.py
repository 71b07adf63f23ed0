"""Scenario generation, run metrics, and the experiment harnesses.

Three harnesses: the rank-sufficiency experiment (does the heuristic ranking
capture the true lowest-potential joint class within the top-K?); the paired
framework benchmark (homotopy-guided vs. straight-line baseline on identical
seeded scenarios); and the per-stage timing breakdown across agent counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import executor as ex
from . import game as game_mod
from . import planner as planner_mod
from . import prefilter as prefilter_mod
from . import sqp
from .executor import ExecutorConfig, GamePlayer, ScheduledPolicy, SimTrace
from .game import BASELINE, GameConfig, HOMOTOPY, OcpProblem, UnicycleState
from .planner import AgentSpec, PlannerConfig, PlanningError
from .prefilter import PrefilterConfig


@dataclass(frozen=True)
class ScenarioSpec:
    """Seeded random crossing scenario on a circular arena.

    Starts sit at random angles on the arena circle; goals near the antipode
    of each start with angular and radial jitter. Rejection sampling enforces
    pairwise separation of starts, of goals, and between any start and any
    other agent's goal. ``min_joint_classes`` additionally resamples until
    the planner finds at least that many joint homotopy candidates, which is
    how the rank experiment gets its rich configurations.
    """

    seed: int
    n_agents: int
    arena_radius: float = 2.8
    min_start_sep: float = 1.2
    goal_jitter: float = 0.7
    radial_jitter: float = 0.15
    cross_sep: float = 0.8
    agent_radius: float = 0.2
    v_ref: float = 0.5
    min_joint_classes: int = 1
    max_attempts: int = 10000

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.min_start_sep <= 2.0 * self.agent_radius:
            raise ValueError("min_start_sep must exceed the agent diameter")


def generate_scenario(spec: ScenarioSpec,
                      planner_cfg: Optional[PlannerConfig] = None) -> list:
    """Deterministic (seeded) rejection sampling of a crossing scenario."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_agents
    planner_cfg = planner_cfg or PlannerConfig()
    for _ in range(spec.max_attempts):
        angles = rng.uniform(0.0, 2.0 * math.pi, n)
        starts = spec.arena_radius * np.column_stack([np.cos(angles), np.sin(angles)])
        g_ang = angles + math.pi + rng.uniform(-spec.goal_jitter, spec.goal_jitter, n)
        g_rad = spec.arena_radius * (1.0 + rng.uniform(-spec.radial_jitter, spec.radial_jitter, n))
        goals = np.column_stack([g_rad * np.cos(g_ang), g_rad * np.sin(g_ang)])

        ok = all(
            np.linalg.norm(starts[i] - starts[j]) >= spec.min_start_sep
            and np.linalg.norm(goals[i] - goals[j]) >= spec.min_start_sep
            for i in range(n) for j in range(i + 1, n)
        )
        ok = ok and all(
            np.linalg.norm(starts[i] - goals[j]) >= spec.cross_sep
            for i in range(n) for j in range(n) if i != j
        )
        ok = ok and all(np.linalg.norm(starts[i] - goals[i]) > 1.0 for i in range(n))
        if not ok:
            continue
        agents = [
            AgentSpec(id=i, start=tuple(starts[i]), goal=tuple(goals[i]),
                      radius=spec.agent_radius, v_ref=spec.v_ref)
            for i in range(n)
        ]
        if spec.min_joint_classes > 1:
            try:
                plan = planner_mod.plan_joint(agents, planner_cfg)
            except PlanningError:
                continue
            if len(plan.candidates) < spec.min_joint_classes:
                continue
        return agents
    raise RuntimeError(f"could not sample a scenario for seed {spec.seed} (spec too tight)")


@dataclass
class RunMetrics:
    path_lengths: dict                  # agent id -> meters
    completion_times: dict              # agent id -> seconds (None: never)
    scenario_time: Optional[float]      # seconds until all game players done
    min_clearance: float                # min pairwise distance, all agents
    min_clearance_players: float        # min pairwise distance among players
    switch_count: int
    failure_count: int                  # infeasible or degraded replans
    termination: str
    timing_stats: Optional[dict] = None  # stage -> (mean, std); wall clock

    CSV_FIELDS = (
        "agent_id", "path_length", "completion_time", "scenario_time",
        "min_clearance", "min_clearance_players", "switch_count",
        "failure_count", "termination",
    )

    def csv_rows(self, prefix: Sequence[str] = ()) -> list:
        rows = []
        for aid in sorted(self.path_lengths):
            ct = self.completion_times[aid]
            rows.append(list(prefix) + [
                aid,
                repr(self.path_lengths[aid]),
                repr(ct) if ct is not None else "",
                repr(self.scenario_time) if self.scenario_time is not None else "",
                repr(self.min_clearance),
                repr(self.min_clearance_players),
                self.switch_count,
                self.failure_count,
                self.termination,
            ])
        return rows


def compute_metrics(trace: SimTrace) -> RunMetrics:
    """Deterministic run metrics from a trace (wall-clock stats separate)."""
    if not trace.records:
        raise ValueError("cannot compute metrics for an empty trace")
    states = trace.executed_states()    # (steps[+1], N, 3)
    n = trace.n_agents
    ids = [a.id for a in trace.agents]

    moves = np.diff(states[:, :, :2], axis=0)
    lengths = np.sum(np.linalg.norm(moves, axis=2), axis=0)
    path_lengths = {ids[i]: float(lengths[i]) for i in range(n)}

    completion = {
        ids[i]: (trace.completion_steps[ids[i]] * trace.dt
                 if ids[i] in trace.completion_steps else None)
        for i in range(n)
    }
    kinds = trace.policy_kinds or ["game"] * n
    player_idx = [i for i in range(n) if kinds[i] == "game"]
    player_times = [completion[ids[i]] for i in player_idx]
    scenario_time = None
    if player_times and all(t is not None for t in player_times):
        scenario_time = max(player_times)

    min_clear = math.inf
    min_clear_players = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.min(np.linalg.norm(states[:, i, :2] - states[:, j, :2], axis=1)))
            min_clear = min(min_clear, d)
            if i in player_idx and j in player_idx:
                min_clear_players = min(min_clear_players, d)

    switch_count = 0
    prev_sig = None
    failure_count = 0
    for r in trace.records:
        if not r.replan:
            continue
        if r.degraded or r.solver_status == "infeasible":
            failure_count += 1
        if r.joint_signature is not None:
            if prev_sig is not None:
                switch_count += sum(
                    1 for a, b in zip(prev_sig, r.joint_signature) if a != b
                )
            prev_sig = r.joint_signature

    timing_stats = None
    stage_samples = {}
    for r in trace.records:
        if r.timing:
            for k, v in r.timing.items():
                stage_samples.setdefault(k, []).append(v)
    if stage_samples:
        timing_stats = {}
        for k, vals in sorted(stage_samples.items()):
            arr = np.asarray(vals)
            timing_stats[k] = (float(arr.mean()), float(arr.std()))
        total = np.sum([np.asarray(v) for v in (stage_samples.get(k, [0.0]) for k in
                                                ("planner", "prefilter", "solver"))], axis=0)
        timing_stats["total"] = (float(np.mean(total)), float(np.std(total)))

    return RunMetrics(
        path_lengths=path_lengths,
        completion_times=completion,
        scenario_time=scenario_time,
        min_clearance=float(min_clear) if n > 1 else float("inf"),
        min_clearance_players=float(min_clear_players) if len(player_idx) > 1 else float("inf"),
        switch_count=switch_count,
        failure_count=failure_count,
        termination=trace.termination,
        timing_stats=timing_stats,
    )


# ---------------------------------------------------------------------------
# Experiment: heuristic rank sufficiency
# ---------------------------------------------------------------------------

@dataclass
class Exp1Result:
    histogram: dict                 # rank -> count
    skipped: int
    trials: list                    # (seed, n_candidates, best_rank)

    def mass(self) -> int:
        return sum(self.histogram.values())

    def fraction_within(self, k: int) -> float:
        total = self.mass()
        if total == 0:
            return 0.0
        return sum(c for r, c in self.histogram.items() if r <= k) / total

    def csv(self) -> str:
        lines = ["seed,n_candidates,best_rank"]
        for seed, n_cands, rank in self.trials:
            lines.append(f"{seed},{n_cands},{rank}")
        return "\n".join(lines) + "\n"


def open_loop_potential(agents: Sequence[AgentSpec], candidate, game_cfg: GameConfig,
                        settings: Optional[sqp.SolverSettings] = None):
    """Solve the joint OCP once (open loop) for a candidate; returns the
    solved potential and the solution."""
    init = tuple(
        UnicycleState(a.start[0], a.start[1],
                      math.atan2(a.goal[1] - a.start[1], a.goal[0] - a.start[0]))
        for a in agents
    )
    refs = game_mod.candidate_references(candidate, game_cfg.horizon)
    problem = OcpProblem(game_cfg, init, refs, mode=HOMOTOPY, candidate=candidate)
    sol = game_mod.solve_ocp(problem, settings or sqp.SolverSettings())
    return sol.potential, sol


def experiment1(n_agents: int, n_trials: int, seed: int,
                planner_cfg: Optional[PlannerConfig] = None,
                prefilter_cfg: Optional[PrefilterConfig] = None,
                game_cfg: Optional[GameConfig] = None,
                min_joint_classes: int = 4,
                solver_settings: Optional[sqp.SolverSettings] = None,
                progress: Optional[callable] = None) -> Exp1Result:
    """Rank-sufficiency experiment: disable the top-K cut, solve the OCP for
    every joint candidate, and record the heuristic rank of the best one."""
    if n_agents < 2:
        raise ValueError("the rank experiment needs at least two agents")
    planner_cfg = planner_cfg or PlannerConfig()
    prefilter_cfg = prefilter_cfg or PrefilterConfig()
    game_cfg = game_cfg or GameConfig()
    settings = solver_settings or sqp.SolverSettings(kkt_tol=1e-4, max_iter=15, qp_tol=1e-6)

    histogram: dict = {}
    trials = []
    skipped = 0
    for t in range(n_trials):
        spec = ScenarioSpec(seed=seed + t, n_agents=n_agents,
                            min_joint_classes=min_joint_classes)
        try:
            agents = generate_scenario(spec, planner_cfg)
            plan = planner_mod.plan_joint(agents, planner_cfg)
        except (RuntimeError, PlanningError):
            skipped += 1
            continue
        if not plan.candidates:
            skipped += 1
            continue
        _, ranked = prefilter_mod.rank_all(plan.candidates, prefilter_cfg)

        best_rank = None
        best_phi = math.inf
        for scored in ranked:
            phi, sol = open_loop_potential(agents, scored.candidate, game_cfg, settings)
            if sol.status == sqp.INFEASIBLE:
                continue
            if phi < best_phi:
                best_phi = phi
                best_rank = scored.rank
        if best_rank is None:
            skipped += 1
            continue
        histogram[best_rank] = histogram.get(best_rank, 0) + 1
        trials.append((spec.seed, len(plan.candidates), best_rank))
        if progress is not None:
            progress(t + 1, n_trials)
    return Exp1Result(histogram=histogram, skipped=skipped, trials=trials)


# ---------------------------------------------------------------------------
# Paired framework benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    n_scenarios: int = 30
    seed: int = 0
    n_agents: int = 3
    replan_period: int = 10
    max_steps: int = 400
    goal_tol: float = 0.1
    top_k: int = 4
    lambda_pen: float = 100.0
    rti: bool = False


@dataclass
class BenchResult:
    rows: list            # (framework, seed, RunMetrics)
    traces: dict          # (framework, seed) -> SimTrace

    def csv(self) -> str:
        header = ["framework", "seed"] + list(RunMetrics.CSV_FIELDS)
        lines = [",".join(header)]
        for framework, seed, metrics in self.rows:
            for row in metrics.csv_rows(prefix=[framework, str(seed)]):
                lines.append(",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    def aggregate(self) -> dict:
        """Mean/std of scenario time, path length, min clearance per framework,
        plus per-agent win counts (fastest time, shortest path)."""
        out = {}
        frameworks = sorted({fw for fw, _, _ in self.rows})
        for fw in frameworks:
            times, lengths, clears, completed = [], [], [], 0
            for f, _seed, m in self.rows:
                if f != fw:
                    continue
                if m.scenario_time is not None:
                    times.append(m.scenario_time)
                    completed += 1
                lengths.extend(m.path_lengths.values())
                clears.append(m.min_clearance)
            out[fw] = {
                "completed": completed,
                "completion_mean": float(np.mean(times)) if times else float("nan"),
                "completion_std": float(np.std(times)) if times else float("nan"),
                "path_length_mean": float(np.mean(lengths)) if lengths else float("nan"),
                "path_length_std": float(np.std(lengths)) if lengths else float("nan"),
                "min_clearance_mean": float(np.mean(clears)) if clears else float("nan"),
            }
        if len(frameworks) == 2:
            out["wins"] = self._wins(frameworks)
        return out

    def _wins(self, frameworks) -> dict:
        """Per agent instance: 1 point to the framework with the strictly
        shorter path / faster completion (ties, at 4 decimals, to neither)."""
        by_key = {}
        for fw, seed, m in self.rows:
            by_key[(fw, seed)] = m
        wins = {fw: {"shortest_path": 0, "fastest_time": 0} for fw in frameworks}
        seeds = sorted({seed for _, seed, _ in self.rows})
        fa, fb = frameworks
        for seed in seeds:
            ma = by_key.get((fa, seed))
            mb = by_key.get((fb, seed))
            if ma is None or mb is None:
                continue
            for aid in sorted(ma.path_lengths):
                la = round(ma.path_lengths[aid], 4)
                lb = round(mb.path_lengths[aid], 4)
                if la < lb:
                    wins[fa]["shortest_path"] += 1
                elif lb < la:
                    wins[fb]["shortest_path"] += 1
                ta = ma.completion_times.get(aid)
                tb = mb.completion_times.get(aid)
                if ta is not None and (tb is None or round(ta, 4) < round(tb, 4)):
                    wins[fa]["fastest_time"] += 1
                elif tb is not None and (ta is None or round(tb, 4) < round(ta, 4)):
                    wins[fb]["fastest_time"] += 1
        return wins

    def summary_text(self) -> str:
        agg = self.aggregate()
        lines = ["framework  completed  completion[s]       path[m]            min-dist[m]"]
        for fw, row in agg.items():
            if fw == "wins":
                continue
            lines.append(
                f"{fw:<10} {row['completed']:>9}  "
                f"{row['completion_mean']:6.2f} +/- {row['completion_std']:<5.2f}  "
                f"{row['path_length_mean']:6.2f} +/- {row['path_length_std']:<5.2f}  "
                f"{row['min_clearance_mean']:6.2f}"
            )
        if "wins" in agg:
            for fw, w in agg["wins"].items():
                lines.append(f"wins[{fw}]: shortest_path={w['shortest_path']} fastest_time={w['fastest_time']}")
        return "\n".join(lines) + "\n"


def run_scenario(agents: Sequence[AgentSpec], mode: str, cfg: BenchConfig,
                 planner_cfg: PlannerConfig, prefilter_cfg: PrefilterConfig,
                 game_cfg: GameConfig, policies: Optional[list] = None) -> SimTrace:
    exec_cfg = ExecutorConfig(
        lambda_pen=cfg.lambda_pen, replan_period=cfg.replan_period,
        goal_tol=cfg.goal_tol, max_steps=cfg.max_steps, top_k=cfg.top_k,
        mode=mode, rti=cfg.rti,
    )
    policies = policies or [GamePlayer() for _ in agents]
    return ex.run(agents, policies, planner_cfg, prefilter_cfg, game_cfg, exec_cfg)


def benchmark(cfg: BenchConfig,
              planner_cfg: Optional[PlannerConfig] = None,
              prefilter_cfg: Optional[PrefilterConfig] = None,
              game_cfg: Optional[GameConfig] = None,
              frameworks: Sequence[str] = (HOMOTOPY, BASELINE),
              progress: Optional[callable] = None) -> BenchResult:
    """Run both frameworks on identical seeded scenarios (paired seeds)."""
    planner_cfg = planner_cfg or PlannerConfig()
    prefilter_cfg = prefilter_cfg or PrefilterConfig()
    game_cfg = game_cfg or GameConfig()
    rows = []
    traces = {}
    for s in range(cfg.n_scenarios):
        spec = ScenarioSpec(seed=cfg.seed + s, n_agents=cfg.n_agents)
        try:
            agents = generate_scenario(spec, planner_cfg)
        except RuntimeError:
            continue
        for fw in frameworks:
            trace = run_scenario(agents, fw, cfg, planner_cfg, prefilter_cfg, game_cfg)
            metrics = compute_metrics(trace)
            rows.append((fw, spec.seed, metrics))
            traces[(fw, spec.seed)] = trace
            if progress is not None:
                progress(s + 1, cfg.n_scenarios, fw)
    return BenchResult(rows=rows, traces=traces)


# ---------------------------------------------------------------------------
# Irrational-agent scenario
# ---------------------------------------------------------------------------

def irrational_scenario():
    """Two game players crossing plus a scripted chaser aimed at player 0.

    The game models the chaser as a goal-seeking agent (full information),
    but it actually pursues player 0, so its executed motion contradicts the
    plans. A homotopy detour reference clears it by construction; the
    baseline's straight reference counts on a mutual dodge the chaser never
    performs.
    """
    agents = [
        AgentSpec(id=0, start=(0.0, 0.0), goal=(6.0, 0.0), v_ref=0.5),
        AgentSpec(id=1, start=(6.0, 1.4), goal=(0.0, 1.4), v_ref=0.5),
        AgentSpec(id=2, start=(4.2, -0.3), goal=(-2.0, -0.3), v_ref=0.2),
    ]
    policies = [GamePlayer(), GamePlayer(),
                ex.ChaserPolicy(target_index=0, speed=0.2)]
    return agents, policies


# ---------------------------------------------------------------------------
# Timing breakdown
# ---------------------------------------------------------------------------

def timing_report(traces_by_n: dict) -> str:
    """Per-stage wall-clock table over agent counts (Table-style text).

    ``traces_by_n`` maps N -> list of SimTrace. Values are milliseconds.
    """
    stages = ("planner", "prefilter", "solver", "total")
    ns = sorted(traces_by_n)
    header = "stage       " + "  ".join(f"N={n:<14}" for n in ns)
    lines = [header]
    for stage in stages:
        cells = []
        for n in ns:
            samples = []
            for trace in traces_by_n[n]:
                for r in trace.records:
                    if not r.timing:
                        continue
                    if stage == "total":
                        samples.append(sum(r.timing.values()))
                    else:
                        samples.append(r.timing.get(stage, 0.0))
            if samples:
                arr = 1e3 * np.asarray(samples)
                cells.append(f"{arr.mean():8.1f} +/- {arr.std():6.1f}")
            else:
                cells.append(" " * 17)
        lines.append(f"{stage:<10}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def timing_traces(n_agents_list: Sequence[int], n_scenarios: int, seed: int,
                  planner_cfg: Optional[PlannerConfig] = None,
                  prefilter_cfg: Optional[PrefilterConfig] = None,
                  game_cfg: Optional[GameConfig] = None,
                  cfg: Optional[BenchConfig] = None) -> dict:
    """Run homotopy-mode scenarios per agent count and keep the traces."""
    planner_cfg = planner_cfg or PlannerConfig()
    prefilter_cfg = prefilter_cfg or PrefilterConfig()
    game_cfg = game_cfg or GameConfig()
    out = {}
    for n in n_agents_list:
        bcfg = replace(cfg or BenchConfig(), n_agents=n, n_scenarios=n_scenarios, seed=seed)
        traces = []
        for s in range(n_scenarios):
            spec = ScenarioSpec(seed=seed + s, n_agents=n)
            try:
                agents = generate_scenario(spec, planner_cfg)
            except RuntimeError:
                continue
            traces.append(run_scenario(agents, HOMOTOPY, bcfg, planner_cfg,
                                        prefilter_cfg, game_cfg))
        out[n] = traces
    return out
