"""Lagrangian machinery over local multipliers.

Multiplier stacks are ``(N, M)`` arrays whose row ``i`` is agent ``i``'s
private copy ``lam_i``. The consensus penalty uses l1 differences over the
graph's undirected edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import CommGraph, CoupledProblem


@dataclass(frozen=True, eq=False)
class MultiplierStack:
    per_agent: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.per_agent, dtype=float)).copy()
        if np.any(v < 0):
            raise ValueError("multipliers must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "per_agent", v)

    @classmethod
    def zeros(cls, n_agents: int, m: int) -> "MultiplierStack":
        return cls(np.zeros((n_agents, m)))

    @classmethod
    def consensus(cls, lam, n_agents: int) -> "MultiplierStack":
        return cls(np.tile(np.asarray(lam, dtype=float), (n_agents, 1)))

    def is_consensus(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.per_agent - self.per_agent[0]) <= tol))

    def mean(self) -> np.ndarray:
        return self.per_agent.mean(axis=0)


def as_stack(L) -> np.ndarray:
    if isinstance(L, MultiplierStack):
        return L.per_agent
    return np.atleast_2d(np.asarray(L, dtype=float))


def sign_select(y) -> np.ndarray:
    """Selection from the set-valued sign: +-1 off zero, 0 at exact ties."""
    return np.sign(np.asarray(y, dtype=float))


def consensus_penalty(graph: CommGraph, L) -> float:
    """``phi = 1/2 sum_i sum_{j in N_i} |lam_i - lam_j|_1``, i.e. one l1 term per edge."""
    lam = as_stack(L)
    if lam.shape[0] != graph.n_nodes:
        raise ValueError("multiplier stack length does not match the graph")
    edges = graph.sorted_edges()
    if not edges:
        return 0.0
    E = np.array(edges)
    return float(np.abs(lam[E[:, 0]] - lam[E[:, 1]]).sum())


def consensus_distance(L) -> float:
    """Euclidean distance from a nonnegative stack to the consensus cone."""
    lam = as_stack(L)
    return float(np.linalg.norm(lam - lam.mean(axis=0)))


def max_disagreement(L) -> float:
    """``max_{i,j} |lam_i - lam_j|_1``."""
    lam = as_stack(L)
    diffs = np.abs(lam[:, None, :] - lam[None, :, :]).sum(axis=2)
    return float(diffs.max())


def lagrangian(problem: CoupledProblem, x, lam) -> float:
    """Classical Lagrangian ``f(x) + lam^T sum_i g_i(x_i)`` with a shared multiplier."""
    lam = np.asarray(lam, dtype=float)
    return problem.cost(x) + float(lam @ problem.coupled_constraint(x))


def modified_lagrangian(problem: CoupledProblem, x, L, K: float) -> float:
    """``sum_i [f_i(x_i) + lam_i^T g_i(x_i)] - K * phi(lam)``."""
    lam = as_stack(L)
    xs = problem.split(x)
    total = 0.0
    for a, xi, li in zip(problem.agents, xs, lam):
        total += a.cost.value(xi) + float(li @ a.constraint.value(xi))
    return total - K * consensus_penalty(problem.graph, lam)


def primal_field(problem: CoupledProblem, x, L, K: float, i: int) -> np.ndarray:
    """Negative selection ``-(s_f + J^T lam_i)`` for agent ``i``; uses only agent-local data."""
    a = problem.agents[i]
    xi = problem.split(x)[i]
    li = as_stack(L)[i]
    return -(a.cost.subgradient(xi) + a.constraint.jacobian_selection(xi).T @ li)


def dual_field(problem: CoupledProblem, x, L, K: float, i: int) -> np.ndarray:
    """``g_i(x_i) - K sum_{j in N_i} sign(lam_i - lam_j)`` with the tie rule sign(0) = 0."""
    a = problem.agents[i]
    lam = as_stack(L)
    xi = problem.split(x)[i]
    push = np.zeros(problem.m_constraints)
    for j in problem.graph.neighbors(i):
        push += sign_select(lam[i] - lam[j])
    return a.constraint.value(xi) - K * push
