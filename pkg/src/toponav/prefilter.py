"""Heuristic scoring of joint homotopy candidates.

Each joint candidate is scored as

    total = w_length * L + w_prox * S_prox + w_smooth * S_smooth

where L sums the resampled path lengths, S_smooth the squared second
differences of the P-point resamplings, and S_prox penalizes time-aligned
congestion: at every resample index a proximity graph connects agents
closer than ``d_th``, and each edge contributes its penetration depth
weighted by (component size - 1), so tight clusters cost more than isolated
pairs at the same distance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .planner import JointCandidate


@dataclass(frozen=True)
class PrefilterConfig:
    resample_count: int = 40    # points per path used for scoring
    w_length: float = 1.0
    w_prox: float = 2.0
    w_smooth: float = 1.0
    d_th: float = 1.5           # proximity threshold in meters
    top_k: int = 4

    def __post_init__(self):
        if self.resample_count < 2:
            raise ValueError("resample_count must be >= 2")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.d_th <= 0.0:
            raise ValueError("d_th must be positive")
        if min(self.w_length, self.w_prox, self.w_smooth) < 0.0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: JointCandidate
    total: float
    length_term: float
    prox_term: float
    smooth_term: float
    rank: Optional[int] = None   # 1-based, assigned by rank_candidates


def _components(edges, n: int):
    """Connected components of an edge list; returns a label per node."""
    label = list(range(n))

    def find(a):
        while label[a] != a:
            label[a] = label[label[a]]
            a = label[a]
        return a

    for i, j in edges:
        ra, rb = find(i), find(j)
        if ra != rb:
            label[rb] = ra
    return [find(i) for i in range(n)]


def proximity_cost(points: np.ndarray, d_th: float) -> float:
    """Congestion cost over time-aligned resampled points (n_agents, P, 2)."""
    n, P, _ = points.shape
    total = 0.0
    for t in range(P):
        pos = points[:, t]
        edges = []
        dists = {}
        for i in range(n):
            for j in range(i + 1, n):
                d = float(np.linalg.norm(pos[i] - pos[j]))
                if d < d_th:
                    edges.append((i, j))
                    dists[(i, j)] = d
        if not edges:
            continue
        comp = _components(edges, n)
        sizes = {}
        for lab in comp:
            sizes[lab] = sizes.get(lab, 0) + 1
        for (i, j) in edges:
            total += (1.0 - dists[(i, j)] / d_th) * (sizes[comp[i]] - 1)
    return total


def score_candidate(candidate: JointCandidate, cfg: PrefilterConfig) -> ScoredCandidate:
    """Score one joint candidate; the stored terms reproduce ``total``
    exactly as w_length*L + w_prox*S_prox + w_smooth*S_smooth."""
    resampled = np.stack([
        geo.resample_by_count(path.discrete, cfg.resample_count)
        for path in candidate.paths
    ])
    length = float(sum(
        np.sum(np.linalg.norm(np.diff(resampled[i], axis=0), axis=1))
        for i in range(resampled.shape[0])
    ))
    d2 = resampled[:, 2:] - 2.0 * resampled[:, 1:-1] + resampled[:, :-2]
    smooth = float(np.sum(d2 * d2))
    prox = proximity_cost(resampled, cfg.d_th)
    total = cfg.w_length * length + cfg.w_prox * prox + cfg.w_smooth * smooth
    return ScoredCandidate(candidate, total, length, prox, smooth)


def rank_candidates(candidates: Sequence[JointCandidate], cfg: PrefilterConfig):
    """Score, sort ascending, and keep the top-K.

    Returns (best_total, ranked) where ranked carries 1-based ranks. Ties
    break on the smaller length term, then on input order.
    """
    if not candidates:
        raise ValueError("cannot rank an empty candidate set")
    scored = [score_candidate(c, cfg) for c in candidates]
    order = sorted(range(len(scored)), key=lambda i: (scored[i].total, scored[i].length_term, i))
    ranked = [
        replace(scored[idx], rank=pos + 1)
        for pos, idx in enumerate(order[: min(cfg.top_k, len(scored))])
    ]
    return scored[order[0]].total, ranked


def rank_all(candidates: Sequence[JointCandidate], cfg: PrefilterConfig):
    """Full ordering (rank over every candidate, ignoring top_k)."""
    return rank_candidates(candidates, replace(cfg, top_k=len(candidates)))


def to_csv(scored: Sequence[ScoredCandidate]) -> str:
    """CSV dump of scored candidates (rank, terms, joint signature)."""
    lines = ["rank,total,length_term,prox_term,smooth_term,joint_signature"]
    for s in scored:
        sig = "|".join(",".join(p.signature.labels) for p in s.candidate.paths)
        lines.append(
            f"{s.rank},{s.total!r},{s.length_term!r},{s.prox_term!r},{s.smooth_term!r},{sig}"
        )
    return "\n".join(lines) + "\n"
