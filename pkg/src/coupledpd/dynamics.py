"""Discretized primal-dual dynamics: distributed and centralized steppers, the run loop.

Two schemes are available.

``"explicit"``
    Projected forward Euler on the set-valued fields with the minimal-norm
    selection. At kinks of the cost and of ``K * phi`` this chatters with
    amplitude of order ``h * K``.
``"semi-implicit"`` (default)
    Same Euler step for every smooth term, but the nonsmooth terms are taken
    implicitly: the consensus penalty through its proximal map and the
    prox-friendly cost kinks through theirs. The scheme has exactly the same
    fixed points as the explicit one and leaves a consensus multiplier in
    consensus once the penalty dominates, which is what the exact-penalty
    argument predicts for the continuous flow.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .calculus import as_stack
from .engine import Engine
from .errors import Diverged
from .functions import Affine
from .geometry import project_point
from .problem import CoupledProblem
from .sets import Box, leaves

SCHEMES = ("semi-implicit", "explicit")

_engines: "weakref.WeakKeyDictionary[CoupledProblem, Engine]" = weakref.WeakKeyDictionary()


def engine_for(problem: CoupledProblem) -> Engine:
    eng = _engines.get(problem)
    if eng is None:
        eng = _engines[problem] = Engine(problem)
    return eng


@dataclass(frozen=True)
class NetworkState:
    """Stacked primal vector, ``(N, M)`` multiplier stack and time."""

    x: np.ndarray
    lam: np.ndarray
    t: float = 0.0

    def blocks(self, problem: CoupledProblem) -> list:
        return problem.split(self.x)


@dataclass(frozen=True)
class CentralState:
    x: np.ndarray
    lam: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    step_h: float = 1e-3
    horizon_T: float = 100.0
    K: Optional[float] = None
    record_every: int = 100
    seed: int = 0
    scheme: str = "semi-implicit"
    diminishing: bool = False
    record_times: tuple = ()
    kkt_diagnostic: bool = True

    def __post_init__(self):
        if not (0 < self.step_h < 1):
            raise ValueError("step_h must lie in (0, 1)")
        if self.horizon_T <= 0:
            raise ValueError("horizon_T must be positive")
        if self.horizon_T / self.step_h > 1e8:
            raise ValueError("horizon_T / step_h exceeds 1e8 rounds")
        if self.K is not None and self.K < 0:
            raise ValueError("K must be nonnegative when given (0 disables the consensus penalty)")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        object.__setattr__(self, "record_every", int(self.record_every))
        object.__setattr__(self, "record_times", tuple(float(t) for t in self.record_times))


@dataclass
class RunRecord:
    times: np.ndarray
    xs: np.ndarray  # (S, n)
    lams: np.ndarray  # (S, N, M)
    xhat: np.ndarray  # trapezoidal running means at ``times``
    lamhat: np.ndarray
    diagnostics: dict  # V, W, phi, viol, kkt, lagrangian_avg: arrays of length S
    final_state: NetworkState
    K: float
    config: SolverConfig
    max_step_speed: float = 0.0  # max over rounds of ||state change|| / h
    stats: dict = field(default_factory=dict)

    @property
    def samples(self):
        return list(zip(self.times, self.xs, self.lams))

    @property
    def averages(self):
        return list(zip(self.times, self.xhat, self.lamhat))

    def at(self, t: float) -> int:
        """Index of the recorded sample closest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))


# ----------------------------------------------------------------------------
# penalty gain


def _row_is_affine(fam) -> bool:
    return all(isinstance(a, Affine) for a in fam.atoms())


def _affine_row_extreme(fam, lo, up) -> float:
    p = np.sum([a.p for a in fam.atoms()], axis=0)
    q = sum(a.q for a in fam.atoms())
    hi = q + np.sum(np.maximum(p * lo, p * up))
    lw = q + np.sum(np.minimum(p * lo, p * up))
    return max(abs(hi), abs(lw))


def _box_bounds(cset):
    parts = list(leaves(cset))
    if not all(isinstance(leaf, Box) for _, leaf in parts):
        return None
    lo = np.concatenate([leaf.lower for _, leaf in parts])
    up = np.concatenate([leaf.upper for _, leaf in parts])
    return lo, up


def _sample_points(cset, n_samples: int, seed: int):
    """Low-discrepancy points in an inflated bounding box, projected onto the set.

    Inflating the box before projecting pushes a large share of the samples
    onto the boundary, where norms of convex maps peak.
    """
    lo, up = cset.bounding_box()
    mid, half = (lo + up) / 2, (up - lo) / 2
    d = lo.size
    m = max(1, math.ceil(math.log2(n_samples)))
    raw = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n_samples]
    pts = mid + (2 * raw - 1) * 1.5 * half
    corners = mid + np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T * half if d <= 10 else np.empty((0, d))
    return [project_point(cset, p) for p in np.vstack([pts, corners])]


def agent_bound(agent, n_samples: int = 1000, inflation: float = 1.2, seed: int = 0) -> float:
    """Upper estimate of ``max_{x in Omega_i} ||g_i(x)||``."""
    rows = agent.constraint.rows
    if all(_row_is_affine(r) and not np.any(np.sum([a.p for a in r.atoms()], axis=0)) for r in rows):
        return float(np.linalg.norm(agent.constraint.value(np.zeros(agent.dim))))
    box = _box_bounds(agent.set)
    if box is not None and all(_row_is_affine(r) for r in rows):
        return float(np.sqrt(sum(_affine_row_extreme(r, *box) ** 2 for r in rows)))
    best = 0.0
    for p in _sample_points(agent.set, n_samples, seed):
        best = max(best, float(np.linalg.norm(agent.constraint.value(p))))
    return inflation * best


def penalty_gain(problem: CoupledProblem, n_samples: int = 1000, safety: float = 1.5) -> float:
    """``safety * sqrt(N) * K0_hat`` with ``K0_hat = sqrt(sum_i M_i^2)``."""
    k0 = math.sqrt(sum(agent_bound(a, n_samples, seed=i) ** 2 for i, a in enumerate(problem.agents)))
    return safety * math.sqrt(problem.n_agents) * k0


# ----------------------------------------------------------------------------
# steppers


def initial_state(problem: CoupledProblem, x0=None, lam0=None) -> NetworkState:
    x = problem.initial_point() if x0 is None else np.asarray(x0, dtype=float).copy()
    lam = np.zeros((problem.n_agents, problem.m_constraints)) if lam0 is None else as_stack(lam0).copy()
    return NetworkState(x, lam, 0.0)


def distributed_step(problem: CoupledProblem, state: NetworkState, h: float, K: float,
                     scheme: str = "semi-implicit") -> NetworkState:
    """One synchronous round; every field is read from ``state``."""
    x, lam, _ = engine_for(problem).distributed_step(state.x, as_stack(state.lam), h, K, scheme)
    return NetworkState(x, lam, state.t + h)


def centralized_step(problem: CoupledProblem, state: CentralState, h: float,
                     scheme: str = "semi-implicit") -> CentralState:
    x, lam, _ = engine_for(problem).central_step(state.x, np.asarray(state.lam, dtype=float), h, scheme)
    return CentralState(x, lam, state.t + h)


def _schedule(config: SolverConfig):
    """Step sizes and their cumulative times, stopping once ``t >= T``."""
    h, T = config.step_h, config.horizon_T
    if not config.diminishing:
        n = math.ceil(T / h - 1e-9)
        return np.full(n, h)
    steps = []
    t, k = 0.0, 0
    while t < T - 1e-12:
        hk = h / (1.0 + k) ** 0.51
        steps.append(hk)
        t += hk
        k += 1
        if k > 1e8:
            raise ValueError("diminishing schedule needs more than 1e8 rounds")
    return np.array(steps)


def run(problem: CoupledProblem, config: SolverConfig = SolverConfig(), saddle=None,
        x0=None, lam0=None) -> RunRecord:
    """Iterate the distributed stepper over ``[0, T]``.

    ``saddle`` is an optional ``(x_star, lam_star)`` pair (``lam_star`` an
    M-vector) used for the ``V`` and ``W`` diagnostics; without it those
    series are NaN.
    """
    from .certify import kkt_residual  # certify depends on dynamics for the record type

    eng = engine_for(problem)
    eng.reset()
    K = float(config.K) if config.K is not None else penalty_gain(problem)
    state = initial_state(problem, x0, lam0)
    x, lam = state.x, state.lam
    steps = _schedule(config)
    n_steps = steps.size
    times_cum = np.concatenate([[0.0], np.cumsum(steps)])
    record = np.zeros(n_steps + 1, bool)
    record[:: config.record_every] = True
    record[-1] = True
    for tr in config.record_times:
        k = int(np.searchsorted(times_cum, tr - 1e-9))
        if k <= n_steps:
            record[k] = True

    xs_star = lam_star_stack = None
    if saddle is not None:
        xs_star = np.asarray(saddle[0], dtype=float)
        lam_star_stack = np.tile(np.asarray(saddle[1], dtype=float), (problem.n_agents, 1))

    idx = np.flatnonzero(record)
    S = idx.size
    out_x = np.empty((S, problem.n_total))
    out_l = np.empty((S, problem.n_agents, problem.m_constraints))
    out_xh = np.empty_like(out_x)
    out_lh = np.empty_like(out_l)
    diag = {k: np.full(S, np.nan) for k in ("V", "W", "phi", "viol", "kkt", "lagrangian_avg")}

    int_x = np.zeros_like(x)
    int_l = np.zeros_like(lam)
    bound = 1e6 * (1.0 + K)
    speed = 0.0
    s = 0

    def emit(k, x, lam, t):
        nonlocal s
        xh = int_x / t if t > 0 else x
        lh = int_l / t if t > 0 else lam
        out_x[s], out_l[s], out_xh[s], out_lh[s] = x, lam, xh, lh
        G = eng.local_constraints(x)
        diag["phi"][s] = eng.phi(lam)
        diag["viol"][s] = max(float(np.max(G.sum(axis=0))), 0.0)
        diag["lagrangian_avg"][s] = eng.modified_lagrangian(xh, lh, K)
        if config.kkt_diagnostic:
            rep = kkt_residual(problem, x, lam.mean(axis=0))
            diag["kkt"][s] = rep.max
        if xs_star is not None:
            diag["V"][s] = 0.5 * (np.sum((x - xs_star) ** 2) + np.sum((lam - lam_star_stack) ** 2))
            diag["W"][s] = (eng.modified_lagrangian(x, lam_star_stack, K)
                            - eng.modified_lagrangian(xs_star, lam, K))
        s += 1

    if record[0]:
        emit(0, x, lam, 0.0)
    for k in range(n_steps):
        h = steps[k]
        x_new, lam_new, _ = eng.distributed_step(x, lam, h, K, config.scheme)
        int_x += 0.5 * h * (x + x_new)
        int_l += 0.5 * h * (lam + lam_new)
        move = math.sqrt(float(np.sum((x_new - x) ** 2) + np.sum((lam_new - lam) ** 2))) / h
        if move > speed:
            speed = move
        x, lam = x_new, lam_new
        if not np.isfinite(lam).all() or np.linalg.norm(lam) > bound:
            raise Diverged(f"multiplier norm exceeded {bound:.3g} at t = {times_cum[k + 1]:.4g}")
        if record[k + 1]:
            emit(k + 1, x, lam, times_cum[k + 1])

    return RunRecord(
        times=times_cum[idx].copy(), xs=out_x, lams=out_l, xhat=out_xh, lamhat=out_lh,
        diagnostics=diag, final_state=NetworkState(x, lam, float(times_cum[-1])), K=K, config=config,
        max_step_speed=speed, stats={"rounds": n_steps, "prox_iterations": eng.prox_iters},
    )
