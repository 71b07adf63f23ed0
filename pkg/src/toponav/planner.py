"""Deterministic homotopy-class path planner.

For each agent the other agents become static disk obstacles. Detour nodes
are placed perpendicular to the agent-to-obstacle direction, a visibility
graph is built over them, simple start-goal paths are enumerated, grouped by
winding signature, and the shortest representative per class is smoothed and
discretized. Joint candidates are the Cartesian product across agents.

Everything is deterministic: node order, DFS neighbor order, tie-breaking,
and the joint product order are all fixed by agent id and node index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .geometry import Disk, HSignature, Polyline

# Radius used when a disk is only needed as a winding center.
_SIGNATURE_EPS_RADIUS = 1e-9


class PlanningError(Exception):
    """Raised when a scenario cannot be planned (caller decides fallback)."""


@dataclass(frozen=True)
class AgentSpec:
    """Static description of one agent."""

    id: int
    start: tuple
    goal: tuple
    radius: float = 0.2
    v_ref: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        if self.radius <= 0.0:
            raise ValueError("agent radius must be positive")
        if self.v_ref <= 0.0:
            raise ValueError("agent v_ref must be positive")
        if math.dist(self.start, self.goal) <= 1e-12:
            raise ValueError("agent start and goal coincide")

    @property
    def start_arr(self) -> np.ndarray:
        return np.asarray(self.start, dtype=float)

    @property
    def goal_arr(self) -> np.ndarray:
        return np.asarray(self.goal, dtype=float)


@dataclass(frozen=True)
class PlannerConfig:
    delta: float = 1.2                 # perpendicular node offset from obstacle centers
    inflate_margin: float = 0.1        # clearance added to every obstacle disk
    spline_degree: int = 3
    spline_smoothing: float = 1.0
    dt: float = 0.1                    # discretization timestep; spacing is v_ref * dt
    theta_s: float = geo.STRAIGHT_THRESHOLD
    max_path_nodes: Optional[int] = None   # None: 2 + 2*(N-1)
    max_classes_per_agent: int = 6
    max_joint_candidates: int = 4096
    max_enumerated_paths: int = 50000      # DFS safety bound for dense graphs

    def __post_init__(self):
        if self.delta <= 0.0 or self.dt <= 0.0:
            raise ValueError("delta and dt must be positive")
        if self.max_classes_per_agent < 1 or self.max_joint_candidates < 1:
            raise ValueError("candidate caps must be >= 1")
        if self.max_path_nodes is not None and self.max_path_nodes < 2:
            raise ValueError("max_path_nodes must allow at least start and goal")

    def path_node_cap(self, n_agents: int) -> int:
        if self.max_path_nodes is not None:
            return self.max_path_nodes
        return 2 + 2 * max(0, n_agents - 1)


@dataclass(frozen=True)
class PlanNode:
    position: tuple
    kind: str  # "start", "goal", "side_L(j)", "side_R(j)", "mid_L(j,k)", "comp_L(j,k)", ...

    @property
    def pos(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class CompositeObstacle:
    member_ids: frozenset
    disk: Disk


@dataclass(frozen=True)
class CandidatePath:
    agent_id: int
    nodes: tuple              # PlanNode sequence actually traversed
    smoothed: Polyline
    discrete: Polyline        # spaced at v_ref * dt along arc length
    signature: HSignature
    length: float             # arc length of the discrete path


@dataclass(frozen=True)
class JointCandidate:
    paths: tuple  # one CandidatePath per agent, ordered by agent id

    def __post_init__(self):
        ids = [p.agent_id for p in self.paths]
        if ids != sorted(ids):
            raise ValueError("joint candidate paths must be ordered by agent id")

    @property
    def joint_signature(self) -> tuple:
        return tuple(p.signature for p in self.paths)


@dataclass
class PlanGraph:
    """Visibility graph over plan nodes; neighbor lists sorted ascending."""

    nodes: tuple                 # PlanNode
    positions: np.ndarray        # (n, 2)
    adjacency: list              # list[list[int]]
    start_index: int
    goal_index: int

    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2


@dataclass
class JointPlan:
    candidates: list             # list[JointCandidate]
    truncated: bool
    per_agent: list              # list[list[CandidatePath]], ascending agent id


def _inflated(agent: AgentSpec, margin: float) -> Disk:
    return Disk(tuple(agent.start), agent.radius + margin)


def sample_nodes(agent: AgentSpec, others: Sequence[AgentSpec], cfg: PlannerConfig):
    """Place detour nodes around every other agent.

    Returns (nodes, composites). For each obstacle agent j, left/right
    candidates sit at ``delta`` along the perpendiculars of the start->j
    direction. A candidate conflicting with a third agent k falls back to the
    j-k midpoint offset; if that also fails, j and k merge into a composite
    obstacle with its own pair of side nodes.
    """
    p_i = agent.start_arr
    others = sorted(others, key=lambda a: a.id)
    inflated = {a.id: _inflated(a, cfg.inflate_margin) for a in others}
    for other in others:
        if inflated[other.id].contains(p_i):
            raise PlanningError(
                f"agent {agent.id} starts inside the inflated disk of agent {other.id}"
            )

    def node_valid(q: np.ndarray, skip=()) -> bool:
        return not any(
            inflated[a.id].contains(q) for a in others if a.id not in skip
        )

    nodes = [PlanNode(tuple(p_i), "start")]
    composites: dict = {}

    for other in others:
        p_j = np.asarray(other.start, dtype=float)
        d_ij = geo.unit(p_j - p_i)
        for side, left in (("L", True), ("R", False)):
            d_perp = geo.rotate90(d_ij, left=left)
            q = p_j + cfg.delta * d_perp
            conflicts = [
                k for k in others
                if k.id != other.id and inflated[k.id].contains(q)
            ]
            if not conflicts:
                # delta is expected to exceed radius + margin; drop the node
                # rather than emit one inside its own obstacle disk.
                if node_valid(q):
                    nodes.append(PlanNode(tuple(q), f"side_{side}({other.id})"))
                continue
            k = min(
                conflicts,
                key=lambda a: (float(np.linalg.norm(np.asarray(a.start) - q)), a.id),
            )
            p_k = np.asarray(k.start, dtype=float)
            fallback = 0.5 * (p_j + p_k) + cfg.delta * d_perp
            if node_valid(fallback):
                nodes.append(PlanNode(tuple(fallback), f"mid_{side}({other.id},{k.id})"))
                continue
            key = frozenset((other.id, k.id))
            if key not in composites:
                mid = 0.5 * (p_j + p_k)
                radius = (
                    0.5 * float(np.linalg.norm(p_j - p_k))
                    + max(other.radius, k.radius)
                    + cfg.inflate_margin
                )
                composites[key] = (CompositeObstacle(key, Disk(tuple(mid), radius)), d_perp, other.id, k.id)

    composite_list = []
    for key in sorted(composites, key=lambda s: tuple(sorted(s))):
        comp, d_perp, j_id, k_id = composites[key]
        composite_list.append(comp)
        center = np.asarray(comp.disk.center)
        for side, sign in (("L", 1.0), ("R", -1.0)):
            q = center + sign * (comp.disk.radius + cfg.delta) * d_perp
            if node_valid(q, skip=key):
                nodes.append(PlanNode(tuple(q), f"comp_{side}({j_id},{k_id})"))

    nodes.append(PlanNode(tuple(agent.goal), "goal"))
    return nodes, composite_list


def clearance_disks(others: Sequence[AgentSpec], composites: Sequence[CompositeObstacle],
                    margin: float) -> list:
    """Inflated obstacle disks with composite members replaced by the cover."""
    merged = set()
    for comp in composites:
        merged |= comp.member_ids
    disks = [
        _inflated(a, margin) for a in sorted(others, key=lambda a: a.id)
        if a.id not in merged
    ]
    disks.extend(comp.disk for comp in composites)
    return disks


def signature_disks(others: Sequence[AgentSpec]) -> list:
    """Winding centers (ascending agent id) for signature computation.

    Near-zero radii: signatures only depend on the centers, and endpoint
    containment must not trip when a third agent is transiently near a goal.
    """
    return [
        Disk(tuple(a.start), _SIGNATURE_EPS_RADIUS)
        for a in sorted(others, key=lambda a: a.id)
    ]


def build_graph(nodes: Sequence[PlanNode], obstacles: Sequence[Disk]) -> PlanGraph:
    """Connect every node pair whose segment clears all obstacle disks."""
    positions = np.array([n.pos for n in nodes], dtype=float)
    n = len(nodes)
    adjacency = [[] for _ in range(n)]
    for u in range(n):
        for v in range(u + 1, n):
            if all(geo.segment_clears_disk(positions[u], positions[v], d) for d in obstacles):
                adjacency[u].append(v)
                adjacency[v].append(u)
    start_index = next(i for i, nd in enumerate(nodes) if nd.kind == "start")
    goal_index = next(i for i, nd in enumerate(nodes) if nd.kind == "goal")
    return PlanGraph(tuple(nodes), positions, adjacency, start_index, goal_index)


def enumerate_paths(graph: PlanGraph, max_nodes: int, max_paths: int = 50000) -> list:
    """All simple start-goal paths with at most ``max_nodes`` nodes (DFS,
    ascending neighbor order). Empty list when disconnected. ``max_paths``
    bounds the search in pathologically dense graphs; enumeration order is
    deterministic so a truncated result is still reproducible."""
    paths = []
    start, goal = graph.start_index, graph.goal_index
    stack = [start]
    on_stack = {start}

    def dfs():
        if len(paths) >= max_paths:
            return
        node = stack[-1]
        if node == goal:
            paths.append(tuple(stack))
            return
        if len(stack) >= max_nodes:
            return
        for nxt in graph.adjacency[node]:
            if nxt in on_stack:
                continue
            stack.append(nxt)
            on_stack.add(nxt)
            dfs()
            stack.pop()
            on_stack.remove(nxt)

    dfs()
    return paths


def _path_length(positions: np.ndarray, path: tuple) -> float:
    pts = positions[list(path)]
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def classify_and_select(paths: Sequence[tuple], graph: PlanGraph,
                        sig_disks: Sequence[Disk], cfg: PlannerConfig) -> list:
    """Group node paths by signature and keep the shortest per class.

    Ties break on fewer nodes, then lexicographic node indices. Classes are
    capped at ``max_classes_per_agent`` by ascending representative length.
    """
    groups: dict = {}
    for path in paths:
        pts = graph.positions[list(path)]
        sig = geo.h_signature(pts, sig_disks, cfg.theta_s)
        key = (
            _path_length(graph.positions, path),
            len(path),
            path,
        )
        best = groups.get(sig)
        if best is None or key < best[0]:
            groups[sig] = (key, path)
    reps = sorted(
        ((sig, key, path) for sig, (key, path) in groups.items()),
        key=lambda item: item[1],
    )
    reps = reps[: cfg.max_classes_per_agent]
    return [(sig, path) for sig, key, path in reps]


def _discretize(points: np.ndarray, agent: AgentSpec, cfg: PlannerConfig) -> np.ndarray:
    return geo.resample_arclength(points, agent.v_ref * cfg.dt)


def _points_clear(points: np.ndarray, disks: Sequence[Disk]) -> bool:
    for d in disks:
        c = np.asarray(d.center)
        if np.any(np.linalg.norm(points - c, axis=1) <= d.radius):
            return False
    return True


def plan_agent(agent: AgentSpec, others: Sequence[AgentSpec], cfg: PlannerConfig) -> list:
    """Candidate paths for one agent, one per reachable homotopy class.

    Each class representative is B-spline smoothed and discretized at
    ``v_ref * dt``. If smoothing changes the signature or grazes an inflated
    obstacle, the unsmoothed node polyline is used instead, which is always
    topology-exact. Returns [] when no class reaches the goal.
    """
    others = sorted(others, key=lambda a: a.id)
    if not others:
        straight = np.array([agent.start, agent.goal], dtype=float)
        discrete = _discretize(straight, agent, cfg)
        return [
            CandidatePath(
                agent_id=agent.id,
                nodes=(PlanNode(tuple(agent.start), "start"), PlanNode(tuple(agent.goal), "goal")),
                smoothed=Polyline(straight),
                discrete=Polyline(discrete),
                signature=HSignature(()),
                length=geo.polyline_length(discrete),
            )
        ]

    nodes, composites = sample_nodes(agent, others, cfg)
    obstacles = clearance_disks(others, composites, cfg.inflate_margin)
    sig_disks = signature_disks(others)
    graph = build_graph(nodes, obstacles)
    raw_paths = enumerate_paths(graph, cfg.path_node_cap(len(others) + 1),
                                cfg.max_enumerated_paths)
    if not raw_paths:
        return []

    results = []
    for sig, node_path in classify_and_select(raw_paths, graph, sig_disks, cfg):
        node_pts = graph.positions[list(node_path)]
        # Densify the control polygon so the spline hugs the node path and
        # smoothing rounds corners instead of erasing whole detours.
        ctrl_pts = geo.resample_arclength(node_pts, max(0.5 * cfg.delta, 1e-6))
        smooth_pts = geo.bspline_smooth(ctrl_pts, cfg.spline_degree, cfg.spline_smoothing)
        discrete_pts = _discretize(smooth_pts, agent, cfg)
        ok = (
            _points_clear(discrete_pts, obstacles)
            and geo.h_signature(discrete_pts, sig_disks, cfg.theta_s) == sig
        )
        if not ok:
            # Smoothing perturbed the topology; the node polyline is exact.
            smooth_pts = node_pts
            discrete_pts = _discretize(node_pts, agent, cfg)
            if geo.h_signature(discrete_pts, sig_disks, cfg.theta_s) != sig:
                continue
        results.append(
            CandidatePath(
                agent_id=agent.id,
                nodes=tuple(graph.nodes[i] for i in node_path),
                smoothed=Polyline(smooth_pts),
                discrete=Polyline(discrete_pts),
                signature=sig,
                length=geo.polyline_length(discrete_pts),
            )
        )
    return results


def plan_joint(agents: Sequence[AgentSpec], cfg: PlannerConfig) -> JointPlan:
    """Cartesian product of per-agent candidate lists.

    Candidates appear in lexicographic order of per-agent class indices and
    the product is truncated at ``max_joint_candidates``.
    """
    if not agents:
        raise PlanningError("need at least one agent")
    agents = sorted(agents, key=lambda a: a.id)
    per_agent = []
    for agent in agents:
        others = [a for a in agents if a.id != agent.id]
        cands = plan_agent(agent, others, cfg)
        if not cands:
            raise PlanningError(f"agent {agent.id} has no candidate path to its goal")
        per_agent.append(cands)

    candidates = []
    truncated = False
    for combo in itertools.product(*per_agent):
        if len(candidates) >= cfg.max_joint_candidates:
            truncated = True
            break
        candidates.append(JointCandidate(tuple(combo)))
    return JointPlan(candidates, truncated, per_agent)


def graph_debug_text(agent: AgentSpec, others: Sequence[AgentSpec], cfg: PlannerConfig) -> str:
    """Human-readable dump of one agent's plan graph and classes."""
    others = sorted(others, key=lambda a: a.id)
    lines = [f"agent {agent.id}: start={agent.start} goal={agent.goal}"]
    if not others:
        lines.append("  no obstacles; single straight class")
        return "\n".join(lines)
    nodes, composites = sample_nodes(agent, others, cfg)
    obstacles = clearance_disks(others, composites, cfg.inflate_margin)
    graph = build_graph(nodes, obstacles)
    for idx, node in enumerate(graph.nodes):
        lines.append(f"  node {idx}: {node.kind} at ({node.position[0]:.3f}, {node.position[1]:.3f})")
    for comp in composites:
        ids = ",".join(str(i) for i in sorted(comp.member_ids))
        lines.append(f"  composite {{{ids}}} disk center={comp.disk.center} r={comp.disk.radius:.3f}")
    for u, neigh in enumerate(graph.adjacency):
        for v in neigh:
            if v > u:
                lines.append(f"  edge {u} -- {v}")
    for cand in plan_agent(agent, others, cfg):
        lines.append(
            f"  class {cand.signature}: length={cand.length:.3f} nodes="
            + "->".join(n.kind for n in cand.nodes)
        )
    return "\n".join(lines)
