"""Convex target sets in reward space, Euclidean projection and steering.

A target set is an intersection of half-spaces ``{x : <a_i, x> <= b_i}``
with unit normals ``a_i``.  Axis-aligned boxes get a closed-form
projection (per-coordinate clamping); anything else goes through Dykstra's
alternating projections.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ._jit import kernel

DEFAULT_EPS_PROJ = 1e-3
MAX_CYCLES = 10_000
MOVE_TOL = 1e-10
FEAS_TOL = 1e-9


class ProjectionError(ArithmeticError):
    """Dykstra's iteration ran out of cycles before settling."""

    def __init__(self, cycles: int, residual: float):
        super().__init__(
            f"projection iteration budget exhausted after {cycles} cycles "
            f"(last move {residual:.3e})"
        )
        self.cycles = cycles
        self.residual = residual


class EmptySetError(ValueError):
    pass


def as_point(s, k: int | None = None) -> np.ndarray:
    p = np.asarray(s, dtype=np.float64).reshape(-1)
    if k is not None and p.shape[0] != k:
        raise ValueError(f"point has dimension {p.shape[0]}, expected {k}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point has non-finite coordinates: {p}")
    return p


@kernel
def dykstra_halfspaces(s, normals, offsets, max_cycles, tol):
    """Project ``s`` onto the intersection of half-spaces by Dykstra's method.

    Returns ``(x, cycles, last_move)``; ``cycles > max_cycles`` signals that
    the budget ran out.  ``last_move`` measures the change over one cycle of
    both ``x`` and the correction vectors: ``x`` alone can stall for several
    cycles while the corrections are still growing.
    """
    m, k = normals.shape
    x = s.copy()
    incr = np.zeros((m, k))
    z = np.empty(k)
    prev = np.empty(k)
    last_move = np.inf
    for cycle in range(1, max_cycles + 1):
        for j in range(k):
            prev[j] = x[j]
        move = 0.0
        for i in range(m):
            viol = -offsets[i]
            for j in range(k):
                z[j] = x[j] + incr[i, j]
                viol += normals[i, j] * z[j]
            if viol > 0.0:
                for j in range(k):
                    x[j] = z[j] - viol * normals[i, j]
            else:
                for j in range(k):
                    x[j] = z[j]
            for j in range(k):
                d = z[j] - x[j]
                move += (d - incr[i, j]) ** 2
                incr[i, j] = d
        for j in range(k):
            move += (x[j] - prev[j]) ** 2
        last_move = np.sqrt(move)
        if last_move < tol:
            return x, cycle, last_move
    return x, max_cycles + 1, last_move


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Closed convex polytope ``{x : normals @ x <= offsets}`` in R^k.

    ``lower``/``upper`` are set when the polytope is exactly an axis-aligned
    box, which enables the clamping fast path.  Use :meth:`box` or
    :meth:`polytope` rather than the raw constructor.
    """

    normals: np.ndarray
    offsets: np.ndarray
    interior_point: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        for name in ("normals", "offsets", "interior_point", "lower", "upper"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)
        norms = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("half-space normals must have unit norm")
        if not self.contains(self.interior_point, tol=FEAS_TOL):
            raise EmptySetError("stored feasible point violates the constraints")

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def is_box(self) -> bool:
        return self.lower is not None

    @classmethod
    def box(cls, lower, upper) -> "TargetSet":
        lo = as_point(lower)
        hi = as_point(upper, lo.shape[0])
        if np.any(lo > hi):
            raise EmptySetError(f"box lower {lo} exceeds upper {hi}")
        k = lo.shape[0]
        eye = np.eye(k)
        normals = np.vstack([eye, -eye])
        offsets = np.concatenate([hi, -lo])
        return cls(normals, offsets, 0.5 * (lo + hi), lo, hi)

    @classmethod
    def polytope(cls, normals, offsets, box=None) -> "TargetSet":
        """Intersection of ``<a_i, x> <= b_i``, optionally clipped to a box.

        Normals are rescaled to unit length (offsets scaled alongside).
        """
        a = np.atleast_2d(np.asarray(normals, dtype=np.float64))
        b = np.asarray(offsets, dtype=np.float64).reshape(-1)
        if a.shape[0] != b.shape[0]:
            raise ValueError("need one offset per normal")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise ValueError("normals must be finite and nonzero")
        a = a / norms[:, None]
        b = b / norms
        if box is not None:
            bx = cls.box(*box)
            a = np.vstack([a, bx.normals])
            b = np.concatenate([b, bx.offsets])
        return cls(a, b, _chebyshev_center(a, b))

    def contains(self, s, tol: float = FEAS_TOL) -> bool:
        s = np.asarray(s, dtype=np.float64)
        return bool(np.all(self.normals @ s - self.offsets <= tol))

    def max_violation(self, s) -> float:
        return float(max(0.0, np.max(self.normals @ s - self.offsets)))


def _chebyshev_center(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # max r s.t. a_i.x + r <= b_i (unit normals), r >= 0
    m, k = a.shape
    c = np.zeros(k + 1)
    c[-1] = -1.0
    res = linprog(
        c,
        A_ub=np.hstack([a, np.ones((m, 1))]),
        b_ub=b,
        bounds=[(None, None)] * k + [(0, None)],
        method="highs",
    )
    if res.status == 3:
        # unbounded radius: the polytope contains arbitrarily large balls
        res = linprog(
            c,
            A_ub=np.hstack([a, np.ones((m, 1))]),
            b_ub=b,
            bounds=[(None, None)] * k + [(0, 1.0)],
            method="highs",
        )
    if res.status != 0:
        raise EmptySetError("target set is empty")
    return res.x[:k]


def project(s, T: TargetSet) -> np.ndarray:
    """Euclidean projection of ``s`` onto ``T``."""
    s = as_point(s, T.dim)
    if T.is_box:
        return np.clip(s, T.lower, T.upper)
    if T.contains(s, tol=0.0):
        return s.copy()
    x, cycles, move = dykstra_halfspaces(s, T.normals, T.offsets, MAX_CYCLES, MOVE_TOL)
    if cycles > MAX_CYCLES:
        raise ProjectionError(MAX_CYCLES, move)
    return x


def distance(s, T: TargetSet) -> float:
    s = as_point(s, T.dim)
    return float(np.linalg.norm(s - project(s, T)))


def steering_direction(s, T: TargetSet, eps_proj: float = DEFAULT_EPS_PROJ) -> np.ndarray:
    """Unit vector from ``s`` toward its projection on ``T``.

    Zero when ``s`` is within ``eps_proj`` of the set.
    """
    if not eps_proj > 0:
        raise ValueError("eps_proj must be positive")
    s = as_point(s, T.dim)
    gap = project(s, T) - s
    d = np.linalg.norm(gap)
    if d <= eps_proj:
        return np.zeros_like(s)
    return gap / d


def distances(points: np.ndarray, T: TargetSet) -> np.ndarray:
    """Row-wise distance of ``points`` (n, k) to ``T``."""
    if not T.is_box:
        return np.array([distance(p, T) for p in points])
    return np.linalg.norm(points - np.clip(points, T.lower, T.upper), axis=1)
