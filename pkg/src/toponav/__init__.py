"""Congestion-aware multi-agent navigation.

Deterministic homotopy-class path enumeration, heuristic joint-candidate
prefiltering, and a receding-horizon potential game solved by SQP, plus the
simulation/benchmark harnesses, a FastAPI service, and a thin CLI client.
"""

__version__ = "0.1.0"
