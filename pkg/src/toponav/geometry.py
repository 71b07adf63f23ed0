"""Planar geometry primitives for topological navigation.

Conventions used throughout the package:

- Points are ``(x, y)`` pairs in meters; paths are ``(n, 2)`` float arrays
  (or :class:`Polyline` wrappers) ordered from start to goal.
- Winding angles are signed, CCW-positive, in radians.
- Winding labels classify how a path passes an obstacle: ``CCW`` / ``CW``
  when the net swept angle exceeds the straight threshold, ``S`` otherwise.
- Signatures are only comparable between paths evaluated against the same
  ordered obstacle list (callers order obstacles by ascending agent id).

All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.interpolate import BSpline

# Winding labels.
CCW = "CCW"
CW = "CW"
S = "S"
WINDING_LABELS = (CCW, CW, S)

# Default straight-vs-encircled threshold: a net sweep below a quarter turn
# on either side counts as passing beside the obstacle, not around it.
STRAIGHT_THRESHOLD = math.pi / 2.0

_DUPLICATE_TOL = 1e-12
_ON_PATH_TOL = 1e-9


def _as_points(path) -> np.ndarray:
    """Coerce a path argument (Polyline or array-like) to an (n, 2) array."""
    if isinstance(path, Polyline):
        return path.points
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"path must be an (n, 2) array, got shape {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError("path needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("path contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Polyline:
    """Ordered planar path. Consecutive vertices must be distinct."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("Polyline needs an (n>=2, 2) array of points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("Polyline contains non-finite coordinates")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= _DUPLICATE_TOL):
            raise ValueError("Polyline has duplicate consecutive points")
        object.__setattr__(self, "points", pts)

    @property
    def length(self) -> float:
        return polyline_length(self.points)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.points)


@dataclass(frozen=True)
class Disk:
    """Closed disk obstacle region."""

    center: tuple
    radius: float

    def __post_init__(self):
        cx, cy = float(self.center[0]), float(self.center[1])
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise ValueError("Disk center must be finite")
        if not (self.radius > 0.0):
            raise ValueError("Disk radius must be positive")
        object.__setattr__(self, "center", (cx, cy))
        object.__setattr__(self, "radius", float(self.radius))

    def inflate(self, margin: float) -> "Disk":
        return Disk(self.center, self.radius + margin)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return float(np.hypot(p[0] - self.center[0], p[1] - self.center[1])) <= self.radius + margin


@dataclass(frozen=True)
class HSignature:
    """Per-obstacle winding-label vector identifying a homotopy class.

    ``labels[j]`` is the label for the j-th obstacle of the ordered obstacle
    list the signature was computed against.
    """

    labels: tuple = field(default=())

    def __post_init__(self):
        labels = tuple(self.labels)
        for lab in labels:
            if lab not in WINDING_LABELS:
                raise ValueError(f"invalid winding label {lab!r}")
        object.__setattr__(self, "labels", labels)

    def mirrored(self) -> "HSignature":
        """Element-wise CCW/CW swap (signature of the mirrored path)."""
        flip = {CCW: CW, CW: CCW, S: S}
        return HSignature(tuple(flip[lab] for lab in self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __str__(self) -> str:
        return "(" + ",".join(self.labels) + ")"


def polyline_length(path) -> float:
    """Total arc length of a path."""
    pts = _as_points(path)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def point_segment_distance(p, a, b) -> float:
    """Distance from point ``p`` to segment ``ab`` (projection clamped to [0, 1])."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom <= _DUPLICATE_TOL * _DUPLICATE_TOL:
        return float(np.linalg.norm(p - a))
    t = float(np.clip(((p - a) @ ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _min_distance_to_path(point, pts: np.ndarray) -> float:
    """Min distance from a point to every segment of a path (vectorized)."""
    p = np.asarray(point, dtype=float)
    a = pts[:-1]
    d = pts[1:] - a
    denom = np.einsum("ij,ij->i", d, d)
    denom = np.where(denom <= 0.0, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / denom, 0.0, 1.0)
    closest = a + t[:, None] * d
    return float(np.min(np.linalg.norm(closest - p, axis=1)))


def winding_angle(path, center) -> float:
    """Net signed angle swept by the center-to-point vector along the path.

    Each per-segment increment is wrapped to (-pi, pi], so the result is the
    accumulated sweep rather than a principal angle: a closed CCW loop around
    ``center`` yields +2*pi per turn, and reversing the path negates the
    result. Raises ValueError if the center lies on the path (within 1e-9 m).
    """
    pts = _as_points(path)
    c = np.asarray(center, dtype=float)
    if _min_distance_to_path(c, pts) <= _ON_PATH_TOL:
        raise ValueError("winding center lies on the path")
    rel = pts - c
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    inc = np.diff(ang)
    inc = (inc + np.pi) % (2.0 * np.pi) - np.pi
    # The modulo form maps an exact half-turn to -pi; the convention is +pi.
    inc[inc == -np.pi] = np.pi
    return float(np.sum(inc))


def winding_label(angle: float, theta_s: float) -> str:
    if angle >= theta_s:
        return CCW
    if angle <= -theta_s:
        return CW
    return S


def h_signature(path, obstacles: Sequence[Disk], theta_s: float = STRAIGHT_THRESHOLD) -> HSignature:
    """Winding-label signature of a path against an ordered obstacle list.

    Labels follow the obstacle order as given; callers compare signatures
    only between paths evaluated against the same ordered list. Both path
    endpoints must lie strictly outside every obstacle disk.
    """
    if not (0.0 < theta_s < math.pi):
        raise ValueError("theta_s must lie in (0, pi)")
    pts = _as_points(path)
    for j, disk in enumerate(obstacles):
        for end in (pts[0], pts[-1]):
            if disk.contains(end):
                raise ValueError(f"path endpoint lies inside obstacle disk {j}")
    labels = tuple(winding_label(winding_angle(pts, d.center), theta_s) for d in obstacles)
    return HSignature(labels)


def segment_clears_disk(a, b, disk: Disk) -> bool:
    """True iff segment ``ab`` stays strictly outside the disk.

    Tangency (min distance equal to the radius) counts as a hit; ties go to
    the conservative side.
    """
    return point_segment_distance(disk.center, a, b) > disk.radius


def path_clears_disk(path, disk: Disk) -> bool:
    """True iff every segment of the path stays strictly outside the disk."""
    pts = _as_points(path)
    return _min_distance_to_path(disk.center, pts) > disk.radius


def _cumulative_arclength(pts: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _interp_along(pts: np.ndarray, cum: np.ndarray, targets: np.ndarray) -> np.ndarray:
    out = np.column_stack([
        np.interp(targets, cum, pts[:, 0]),
        np.interp(targets, cum, pts[:, 1]),
    ])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_arclength(path, step: float) -> np.ndarray:
    """Resample a path at a fixed arc-length step.

    Output points lie on the input polyline at arc positions 0, step,
    2*step, ...; the original endpoint is always kept as the final point
    (its gap may be shorter than ``step``).
    """
    if not (step > 0.0):
        raise ValueError("resample step must be positive")
    pts = _as_points(path)
    cum = _cumulative_arclength(pts)
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("cannot resample a zero-length path")
    targets = np.arange(0.0, total, step)
    if total - targets[-1] < _DUPLICATE_TOL:
        targets[-1] = total
    else:
        targets = np.append(targets, total)
    return _interp_along(pts, cum, targets)


def resample_by_count(path, count: int) -> np.ndarray:
    """Resample a path to exactly ``count`` points at uniform arc-length
    fractions, endpoints included."""
    if count < 2:
        raise ValueError("resample count must be >= 2")
    pts = _as_points(path)
    cum = _cumulative_arclength(pts)
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("cannot resample a zero-length path")
    targets = np.linspace(0.0, total, count)
    return _interp_along(pts, cum, targets)


def turning_energy(path) -> float:
    """Sum of squared second differences; a discrete proxy for curvature."""
    pts = _as_points(path)
    if pts.shape[0] < 3:
        return 0.0
    d2 = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    return float(np.sum(d2 * d2))


def _laplacian_presmooth(ctrl: np.ndarray, smoothing: float) -> np.ndarray:
    """Endpoint-fixed Laplacian smoothing of control points.

    ``smoothing`` is split into ceil(smoothing) passes of weight <= 1 so the
    update stays a convex step regardless of magnitude.
    """
    if smoothing <= 0.0 or ctrl.shape[0] < 3:
        return ctrl
    passes = int(math.ceil(smoothing))
    weight = smoothing / passes
    out = ctrl.copy()
    for _ in range(passes):
        out[1:-1] += 0.5 * weight * (out[:-2] - 2.0 * out[1:-1] + out[2:])
    return out


def bspline_smooth(path, degree: int, smoothing: float) -> np.ndarray:
    """Smooth a path with a clamped B-spline over its vertices.

    The control polygon is the (optionally Laplacian-presmoothed) vertex
    list; the knot vector is clamped and uniform, so the curve starts and
    ends exactly at the path endpoints. The effective degree is capped at
    ``n_points - 1``. Returns a dense sampling (10x the input point count,
    at least 50 points).
    """
    if degree < 1:
        raise ValueError("spline degree must be >= 1")
    if smoothing < 0.0:
        raise ValueError("spline smoothing must be >= 0")
    pts = _as_points(path)
    n = pts.shape[0]
    k = min(degree, n - 1)
    ctrl = _laplacian_presmooth(pts.astype(float), smoothing)

    interior = np.linspace(0.0, 1.0, n - k + 1)[1:-1]
    knots = np.concatenate([np.zeros(k + 1), interior, np.ones(k + 1)])
    spline = BSpline(knots, ctrl, k, extrapolate=False)

    num = max(10 * n, 50)
    u = np.linspace(0.0, 1.0, num)
    out = spline(u)
    # Clamped endpoints equal the end control points; pin them exactly.
    out[0] = ctrl[0]
    out[-1] = ctrl[-1]
    if not np.all(np.isfinite(out)):
        raise ValueError("B-spline evaluation produced non-finite points")
    return _dedupe_consecutive(out)


def _dedupe_consecutive(pts: np.ndarray) -> np.ndarray:
    """Drop consecutive duplicates so the result is a valid Polyline."""
    if pts.shape[0] < 2:
        return pts
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > _DUPLICATE_TOL])
    out = pts[keep]
    if out.shape[0] < 2:
        # Degenerate (all points identical): keep the two endpoints.
        return pts[[0, -1]]
    # Always retain the true endpoint.
    if not np.array_equal(out[-1], pts[-1]):
        out = np.vstack([out[:-1], pts[-1]])
    return out


def rotate90(v, left: bool = True) -> np.ndarray:
    """Rotate a 2-vector by +90 deg (left) or -90 deg (right)."""
    v = np.asarray(v, dtype=float)
    if left:
        return np.array([-v[1], v[0]])
    return np.array([v[1], -v[0]])


def unit(v) -> np.ndarray:
    """Unit vector along ``v``; raises on (near-)zero input."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= _DUPLICATE_TOL:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def disks_from_agents(centers: Iterable, radius) -> list:
    """Convenience: one Disk per center; scalar or per-center radii."""
    centers = list(centers)
    if np.isscalar(radius):
        radii = [float(radius)] * len(centers)
    else:
        radii = [float(r) for r in radius]
    return [Disk((float(c[0]), float(c[1])), r) for c, r in zip(centers, radii)]
