"""Certificates: KKT residual, merit and Lyapunov values, the dual ball, the rate check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calculus import as_stack, modified_lagrangian
from .errors import SlaterViolation
from .geometry import normal_cone_project, project_point
from .problem import CoupledProblem


@dataclass(frozen=True)
class KktReport:
    stationarity_residual: float
    complementarity_residual: float
    primal_violation: float
    dual_feasibility: float

    @property
    def max(self) -> float:
        return max(self.stationarity_residual, self.complementarity_residual,
                   self.primal_violation, self.dual_feasibility)

    def ok(self, tol: float) -> bool:
        return self.max < tol


def _agent_stationarity(agent, xi, lam, kink_tol, active_tol, sweeps=500):
    """``min ||s|| over s in df(x) + sum_k lam_k dg_k(x) + N(x)``.

    Every kink contributes a scaled ball or interval; the sum of those sets
    and the normal cone is searched by exact block-coordinate minimization,
    which converges because the objective is a convex quadratic in the
    blocks and the block constraints are separable.
    """
    sel, kinks = agent.cost.family.subdifferential(xi, kink_tol)
    sel = np.array(sel, dtype=float)
    for lk, row in zip(lam, agent.constraint.rows):
        s, ks = row.subdifferential(xi, kink_tol)
        sel += lk * s
        kinks.extend(k._replace(weight=abs(lk) * k.weight) for k in ks)
    kinks = [k for k in kinks if k.weight > 0]
    nvec = normal_cone_project(agent.set, xi, -sel, active_tol)
    if not kinks:
        return float(np.linalg.norm(sel + nvec))
    us = [np.zeros(len(k.coords)) for k in kinks]
    total = sel + nvec
    best = np.linalg.norm(total)
    for _ in range(sweeps):
        prev = best
        for j, k in enumerate(kinks):
            c = list(k.coords)
            rest = total[c] - us[j]
            target = -rest
            if k.kind == "interval":
                u = np.clip(target, -k.weight, k.weight)
            else:
                nt = np.linalg.norm(target)
                u = target if nt <= k.weight else target * (k.weight / nt)
            total[c] = rest + u
            us[j] = u
        rest = total - nvec
        nvec = normal_cone_project(agent.set, xi, -rest, active_tol)
        total = rest + nvec
        best = np.linalg.norm(total)
        if prev - best <= 1e-15 * (1.0 + prev):
            break
    return float(best)


def kkt_residual(problem: CoupledProblem, x, lam, kink_tol: float = 1e-8,
                 active_tol: float = 1e-8) -> KktReport:
    """KKT residuals of ``(x, lam)`` with a single shared multiplier ``lam``.

    Stationarity is the exact distance from 0 to the subdifferential of the
    Lagrangian plus the normal cone, with kinks and active constraints
    detected within the given tolerances.
    """
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    stat = 0.0
    for a, xi in zip(problem.agents, problem.split(x)):
        stat += _agent_stationarity(a, xi, lam, kink_tol, active_tol) ** 2
    G = problem.coupled_constraint(x)
    return KktReport(
        stationarity_residual=float(np.sqrt(stat)),
        complementarity_residual=float(np.sum(np.abs(lam * G))),
        primal_violation=float(np.linalg.norm(np.maximum(G, 0.0))),
        dual_feasibility=float(np.linalg.norm(np.minimum(lam, 0.0))),
    )


def projected_gradient_norm(problem: CoupledProblem, x, lam, h0: float = 1e-6) -> float:
    """``||(P(x - h0 s) - x) / h0||`` for the minimal-norm Lagrangian selection ``s``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = 0.0
    for a, xi in zip(problem.agents, problem.split(x)):
        s = a.cost.subgradient(xi) + a.constraint.jacobian_selection(xi).T @ lam
        out += float(np.sum(((project_point(a.set, xi - h0 * s) - xi) / h0) ** 2))
    return float(np.sqrt(out))


def _saddle_stack(problem, saddle):
    x_star, lam_star = saddle
    lam_star = np.asarray(lam_star, dtype=float)
    if lam_star.ndim == 1:
        lam_star = np.tile(lam_star, (problem.n_agents, 1))
    return np.asarray(x_star, dtype=float), lam_star


def merit(problem: CoupledProblem, x, L, saddle, K: float) -> float:
    """``W = Lt(x, Lam*) - Lt(x*, Lam)`` for the modified Lagrangian ``Lt``."""
    x_star, lam_star = _saddle_stack(problem, saddle)
    return modified_lagrangian(problem, x, lam_star, K) - modified_lagrangian(problem, x_star, as_stack(L), K)


def lyapunov(problem: CoupledProblem, x, L, saddle) -> float:
    x_star, lam_star = _saddle_stack(problem, saddle)
    x = np.asarray(x, dtype=float)
    return 0.5 * float(np.sum((x - x_star) ** 2) + np.sum((as_stack(L) - lam_star) ** 2))


@dataclass(frozen=True)
class DualBound:
    """Radius of the ball holding every dual optimum.

    ``q_tilde`` comes from a finite inner descent, so it overestimates the
    true dual value and ``radius`` may underestimate the true bound.
    """

    radius: float
    gamma: float
    q_tilde: float
    estimate: bool = True


def dual_ball(problem: CoupledProblem, x_bar, lam_tilde, inner_budget: int = 5000) -> DualBound:
    from .dynamics import engine_for

    x_bar = np.asarray(x_bar, dtype=float)
    lam_tilde = np.atleast_1d(np.asarray(lam_tilde, dtype=float))
    gsum = problem.coupled_constraint(x_bar)
    gamma = float(np.min(-gsum))
    if gamma <= 0 or not problem.contains(x_bar):
        raise SlaterViolation(f"x_bar is not strictly feasible (gamma = {gamma:.3e})")
    eng = engine_for(problem)
    w = eng.weights(np.tile(lam_tilde, (problem.n_agents, 1)))
    lo = np.concatenate([a.set.bounding_box()[0] for a in problem.agents])
    up = np.concatenate([a.set.bounding_box()[1] for a in problem.agents])
    diam = float(np.linalg.norm(up - lo)) or 1.0

    def lag(x):
        return eng.lagrangian(x, lam_tilde)

    x = x_bar.copy()
    best = lag(x)
    g0 = np.linalg.norm(eng.full_grad(x, w))
    h0 = diam / max(1.0, g0)
    for k in range(inner_budget):
        g = eng.full_grad(x, w)
        x = eng.project(x - (h0 / np.sqrt(k + 1.0)) * g)
        best = min(best, lag(x))
    f_bar = problem.cost(x_bar)
    return DualBound(radius=(f_bar - best) / gamma, gamma=gamma, q_tilde=best)


class RateCertificate(NamedTuple):
    times: np.ndarray
    products: np.ndarray
    sup: float
    at_one: float

    def bounded(self, factor: float = 10.0) -> bool:
        return bool(self.sup <= factor * self.at_one)


def rate_certificate(record, saddle_value: float, t_min: float = 1.0) -> RateCertificate:
    """Series ``t * |Lt(xhat(t), lamhat(t)) - saddle_value|`` over recorded ``t >= t_min``."""
    t = np.asarray(record.times, dtype=float)
    vals = np.asarray(record.diagnostics["lagrangian_avg"], dtype=float)
    keep = t >= t_min - 1e-9
    t, vals = t[keep], vals[keep]
    prod = t * np.abs(vals - saddle_value)
    return RateCertificate(t, prod, float(prod.max()) if prod.size else float("nan"),
                           float(prod[0]) if prod.size else float("nan"))
