"""Euclidean projections and the project-after-step update.

Boxes, balls and single halfspaces are handled in closed form. General
polytopes go through Dykstra's alternating projections, finished with an
exact active-set polish when the active rows can be identified.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import InfeasibleState, NonConvergence
from .sets import Ball, Box, ConvexSet, Halfspaces, ProductSet

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10_000
STATE_TOL = 1e-6
ENUM_MAX_FACES = 64  # polytopes with fewer candidate faces are projected exactly by enumeration


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    distance: float
    iterations: int = 0


def project(cset: ConvexSet, z) -> ProjectionResult:
    """Euclidean projection of ``z`` onto ``cset``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (cset.dimension(),):
        raise ValueError(f"point has shape {z.shape}, set dimension is {cset.dimension()}")
    p, it = _project(cset, z)
    return ProjectionResult(p, float(np.linalg.norm(z - p)), it)


def project_point(cset: ConvexSet, z) -> np.ndarray:
    return _project(cset, np.asarray(z, dtype=float))[0]


def _project(cset, z):
    if isinstance(cset, Box):
        return np.clip(z, cset.lower, cset.upper), 0
    if isinstance(cset, Ball):
        return _project_ball(cset.center, cset.radius, z), 0
    if isinstance(cset, Halfspaces):
        return _project_polytope(cset.normals, cset.offsets, z)
    if isinstance(cset, ProductSet):
        out = np.empty_like(z)
        total = 0
        for part, sl in zip(cset.parts, cset.slices()):
            out[sl], it = _project(part, z[sl])
            total += it
        return out, total
    raise TypeError(f"unsupported set type {type(cset).__name__}")


def _project_ball(c, r, z):
    d = z - c
    nd = np.linalg.norm(d)
    if nd <= r:
        return z.copy()
    return c + (r / nd) * d


def _halfspace(a, b, y):
    viol = a @ y - b
    if viol <= 0:
        return y
    return y - (viol / (a @ a)) * a


def _project_polytope(A, b, z):
    resid = A @ z - b
    if np.all(resid <= 0):
        return z.copy(), 0
    # a single violated row whose own projection is feasible is the answer
    for j in np.flatnonzero(resid > 0):
        p = _halfspace(A[j], b[j], z)
        if np.all(A @ p - b <= 1e-12):
            return p, 0
    if _n_faces(A.shape[0], A.shape[1]) <= ENUM_MAX_FACES:
        return _enumerate_faces(A, b, z), 0
    return _active_set(A, b, z)


def dykstra_project(A, b, z, tol=DYKSTRA_TOL, max_sweeps=DYKSTRA_MAX_SWEEPS):
    """Dykstra's alternating projections onto ``{A x <= b}``; returns ``(point, sweeps)``.

    Kept as an independent cross-check of the active-set solver; its linear
    rate degrades badly on sharp vertices, so it is not the production path.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    z = np.asarray(z, dtype=float)
    m = A.shape[0]
    scale = tol * max(1.0, float(np.max(np.abs(z))), float(np.max(np.abs(b))))
    x = z.copy()
    incr = np.zeros((m, z.size))
    for sweep in range(1, max_sweeps + 1):
        x_prev = x
        for j in range(m):
            y = x + incr[j]
            x = _halfspace(A[j], b[j], y)
            incr[j] = y - x
        if np.linalg.norm(x - x_prev) <= scale and np.max(A @ x - b) <= scale:
            polished = _polish(A, b, z, x)
            return (polished if polished is not None else x), sweep
    raise NonConvergence(f"Dykstra did not converge in {max_sweeps} sweeps")


_CENTERS: dict = {}


def _interior_point(A, b):
    """Chebyshev centre of ``{A x <= b}``, cached for immutable matrices."""
    key = (id(A), id(b))
    hit = _CENTERS.get(key)
    if hit is not None and hit[0] is A and hit[1] is b:
        return hit[2]
    from scipy.optimize import linprog

    m, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.column_stack([A, norms]), b_ub=b, bounds=[(None, None)] * n + [(0, None)])
    if res.status != 0:
        raise NonConvergence(f"cannot find a point of the polytope: {res.message}")
    x = res.x[:n]
    if not (A.flags.writeable or b.flags.writeable):
        _CENTERS[key] = (A, b, x)
    return x


def _active_set(A, b, z, max_iter=None):
    """Primal active-set method for ``min 1/2 ||y - z||^2, A y <= b``; exact up to round-off."""
    m, n = A.shape
    max_iter = max_iter or 50 * (m + n)
    y = _interior_point(A, b).copy()
    work: list = []
    for it in range(1, max_iter + 1):
        if work:
            Aw = A[work]
            Ginv = np.linalg.inv(Aw @ Aw.T)
            step = (z - y) - Aw.T @ (Ginv @ (Aw @ (z - y)))
        else:
            step = z - y
        if np.linalg.norm(step) <= 1e-13 * (1.0 + np.linalg.norm(z)):
            if not work:
                return y, it
            mu = Ginv @ (Aw @ (z - y))
            k = int(np.argmin(mu))
            if mu[k] >= -1e-13:
                return y, it
            work.pop(k)
            continue
        Ap = A @ step
        slack = b - A @ y
        alpha, block = 1.0, None
        for j in np.flatnonzero(Ap > 1e-15):
            if j in work:
                continue
            a = max(slack[j], 0.0) / Ap[j]
            if a < alpha:
                alpha, block = a, j
        y = y + alpha * step
        if block is not None:
            work.append(int(block))
    raise NonConvergence(f"active-set projection did not finish in {max_iter} iterations")


def _n_faces(m, n):
    return sum(math.comb(m, k) for k in range(1, min(m, n) + 1))


_FACES: dict = {}


def _faces(A):
    """Linearly independent active sets of ``A`` with their Gram inverses, cached per matrix."""
    hit = _FACES.get(id(A))
    if hit is not None and hit[0] is A:
        return hit[1]
    m, n = A.shape
    out = []
    for k in range(1, min(m, n) + 1):
        for act in itertools.combinations(range(m), k):
            Aa = A[list(act)]
            G = Aa @ Aa.T
            if np.linalg.matrix_rank(G) == k:
                out.append((np.array(act), Aa, np.linalg.inv(G)))
    if not A.flags.writeable:  # only immutable matrices are safe to key by identity
        _FACES[id(A)] = (A, out)
    return out


def _enumerate_faces(A, b, z):
    """Exact projection for small polytopes: the nearest KKT point over candidate active sets."""
    feas = 1e-10 * max(1.0, float(np.max(np.abs(z))), float(np.max(np.abs(b))))
    best, best_d = None, np.inf
    r = A @ z - b
    for act, Aa, Ginv in _faces(A):
        mu = Ginv @ r[act]
        if np.any(mu < 0):
            continue
        p = z - Aa.T @ mu
        if np.all(A @ p - b <= feas):
            d = float(np.sum((p - z) ** 2))
            if d < best_d:
                best, best_d = p, d
    if best is None:
        raise NonConvergence("no feasible face found; polytope may be empty")
    return best


def _polish(A, b, z, x, active_tol=1e-7):
    """Exact projection onto the affine hull of the detected active rows."""
    act = np.flatnonzero(A @ x - b >= -active_tol)
    if act.size == 0:
        return None
    Aa = A[act]
    lam, *_ = np.linalg.lstsq(Aa @ Aa.T, Aa @ z - b[act], rcond=None)
    p = z - Aa.T @ lam
    if np.all(lam >= -1e-12) and np.all(A @ p - b <= 1e-12) and np.linalg.norm(p - x) <= 1e-6:
        return p
    return None


def project_nonneg(z) -> np.ndarray:
    """Projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(z, dtype=float), 0.0)


def projected_step(cset: ConvexSet, x, direction, h: float) -> np.ndarray:
    """``P(x + h * direction)``: the discrete surrogate of the tangent-cone flow."""
    x = np.asarray(x, dtype=float)
    if cset.violation(x) > STATE_TOL:
        raise InfeasibleState(f"state is {cset.violation(x):.3e} outside its set")
    return project_point(cset, x + h * np.asarray(direction, dtype=float))


def normal_cone_project(cset: ConvexSet, x, v, active_tol: float = 1e-8) -> np.ndarray:
    """Projection of ``v`` onto the normal cone of ``cset`` at ``x``.

    Constraints within ``active_tol`` of being tight are treated as active.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if isinstance(cset, Box):
        lo_act = x <= cset.lower + active_tol
        up_act = x >= cset.upper - active_tol
        out = np.zeros_like(v)
        both = lo_act & up_act
        out[both] = v[both]
        only_lo = lo_act & ~up_act
        out[only_lo] = np.minimum(v[only_lo], 0.0)
        only_up = up_act & ~lo_act
        out[only_up] = np.maximum(v[only_up], 0.0)
        return out
    if isinstance(cset, Ball):
        d = x - cset.center
        nd = np.linalg.norm(d)
        if nd < cset.radius - active_tol or nd == 0:
            return np.zeros_like(v)
        u = d / nd
        return max(float(u @ v), 0.0) * u
    if isinstance(cset, Halfspaces):
        act = np.flatnonzero(cset.normals @ x - cset.offsets >= -active_tol)
        if act.size == 0:
            return np.zeros_like(v)
        G = cset.normals[act]
        mu, _ = nnls(G.T, v)
        return G.T @ mu
    if isinstance(cset, ProductSet):
        out = np.empty_like(v)
        for part, sl in zip(cset.parts, cset.slices()):
            out[sl] = normal_cone_project(part, x[sl], v[sl], active_tol)
        return out
    raise TypeError(f"unsupported set type {type(cset).__name__}")
