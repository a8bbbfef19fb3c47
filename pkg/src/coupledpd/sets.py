"""Compact convex local constraint sets.

Four variants are supported: boxes, Euclidean balls, bounded polytopes given
as intersections of halfspaces ``a . x <= b``, and Cartesian products of the
former. Projections live in :mod:`coupledpd.geometry`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-9


def _vec(v) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float)).copy()
    if a.ndim != 1:
        raise ValueError("expected a vector")
    a.setflags(write=False)
    return a


class ConvexSet:
    """Common interface of the set variants."""

    def dimension(self) -> int:
        raise NotImplementedError

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        raise NotImplementedError

    def violation(self, x) -> float:
        """Nonnegative measure of how far ``x`` is outside the set (0 inside)."""
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _vec(self.lower), _vec(self.upper)
        if lo.shape != up.shape:
            raise ValueError("Box bounds have different lengths")
        if np.any(lo > up) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            raise ValueError("Box needs finite bounds with lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    def dimension(self):
        return self.lower.size

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        return float(max(np.max(self.lower - x, initial=0.0), np.max(x - self.upper, initial=0.0)))

    def contains(self, x, tol=FEAS_TOL):
        return self.violation(x) <= tol

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def vertices(self) -> np.ndarray:
        n = self.dimension()
        corners = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
        return np.where(corners == 1, self.upper, self.lower)


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        r = float(self.radius)
        if not (np.isfinite(r) and r > 0):
            raise ValueError("Ball radius must be positive")
        object.__setattr__(self, "radius", r)

    def dimension(self):
        return self.center.size

    def violation(self, x):
        return max(float(np.linalg.norm(np.asarray(x, dtype=float) - self.center)) - self.radius, 0.0)

    def contains(self, x, tol=FEAS_TOL):
        return self.violation(x) <= tol

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True, eq=False)
class Halfspaces(ConvexSet):
    """Polytope ``{x : normals @ x <= offsets}``; must be nonempty and bounded.

    Boundedness is the caller's responsibility. Construction spot-checks it by
    projecting ``2 * dim`` far-away points and rejecting the set when a
    projection escapes to infinity.
    """

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float)).copy()
        b = _vec(self.offsets)
        if A.shape[0] != b.size or A.shape[0] == 0:
            raise ValueError("Halfspaces needs one offset per normal and at least one row")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ValueError("Halfspaces has a zero normal")
        A.setflags(write=False)
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        self._certify()

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[Sequence[float], float]]) -> "Halfspaces":
        return cls(np.array([r[0] for r in rows], dtype=float), np.array([r[1] for r in rows], dtype=float))

    def _certify(self):
        from .geometry import project  # circular at import time only

        n = self.dimension()
        try:
            p0 = project(self, np.zeros(n)).point
        except Exception as exc:  # NonConvergence on an empty set
            raise ValueError("Halfspaces intersection appears to be empty") from exc
        if not self.contains(p0, 1e-7):
            raise ValueError("Halfspaces intersection appears to be empty")
        far = 1e6
        for k in range(n):
            for sgn in (1.0, -1.0):
                z = np.zeros(n)
                z[k] = sgn * far
                p = project(self, z).point
                if not np.all(np.isfinite(p)) or np.linalg.norm(p - p0) > 1e-2 * far:
                    raise ValueError("Halfspaces intersection appears to be unbounded")

    def dimension(self):
        return self.normals.shape[1]

    def violation(self, x):
        r = self.normals @ np.asarray(x, dtype=float) - self.offsets
        return float(max(np.max(r), 0.0))

    def contains(self, x, tol=FEAS_TOL):
        return self.violation(x) <= tol

    def bounding_box(self):
        from scipy.optimize import linprog

        n = self.dimension()
        lo, up = np.empty(n), np.empty(n)
        for k in range(n):
            c = np.zeros(n)
            c[k] = 1.0
            bounds = [(None, None)] * n
            lo[k] = linprog(c, A_ub=self.normals, b_ub=self.offsets, bounds=bounds).fun
            up[k] = -linprog(-c, A_ub=self.normals, b_ub=self.offsets, bounds=bounds).fun
        return lo, up


@dataclass(frozen=True, eq=False)
class ProductSet(ConvexSet):
    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts or not all(isinstance(p, ConvexSet) for p in parts):
            raise ValueError("ProductSet needs at least one ConvexSet factor")
        object.__setattr__(self, "parts", parts)

    def dimension(self):
        return sum(p.dimension() for p in self.parts)

    def slices(self):
        out, start = [], 0
        for p in self.parts:
            out.append(slice(start, start + p.dimension()))
            start += p.dimension()
        return out

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        return max(p.violation(x[s]) for p, s in zip(self.parts, self.slices()))

    def contains(self, x, tol=FEAS_TOL):
        return self.violation(x) <= tol

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        return np.concatenate([b[0] for b in boxes]), np.concatenate([b[1] for b in boxes])


def leaves(s: ConvexSet, offset: int = 0):
    """Yield ``(slice, leaf_set)`` pairs with products flattened."""
    if isinstance(s, ProductSet):
        for part, sl in zip(s.parts, s.slices()):
            yield from leaves(part, offset + sl.start)
    else:
        yield slice(offset, offset + s.dimension()), s
