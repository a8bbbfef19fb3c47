"""Instance builders: the four-agent nonsmooth example and the random scalar benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..functions import AbsDeviation, Affine, EuclideanNorm, LogAffine, QuadraticForm, Sum
from ..problem import AgentSpec, CommGraph, ConstraintOracle, CostOracle, CoupledProblem
from ..sets import Ball, Box, Halfspaces


@dataclass(frozen=True)
class Example1Spec:
    d: tuple = ((6, 2), (6, 3), (6, 4), (6, 5))
    a: tuple = ((8, 2), (4, 7), (0.13, 8), (4, 20))
    x0: tuple = ((2, 6), (1, 1), (5, 4), (10, 5))


EXAMPLE1 = Example1Spec()
EXAMPLE1_EDGES = ((0, 1), (1, 2), (2, 3), (0, 3))
# strictly feasible: sum of norms 12.96 < 24 and sum of coordinates 18 > 14
EXAMPLE1_SLATER = ((3, 3), (1, 1), (4, 2), (2, 2))


def example1_sets():
    return (
        Ball([2.0, 3.0], 5.0),
        Halfspaces([[-1.0, 0.0], [0.0, -1.0], [1.0, 2.0]], [0.0, 0.0, 4.0]),
        Box([4.0, 2.0], [6.0, 5.0]),
        Box([0.0, 0.0], [15.0, 20.0]),
    )


def build_example1(spec: Example1Spec = EXAMPLE1) -> CoupledProblem:
    """Four agents on a 4-cycle.

    ``f_i(x) = (x_1 + a_1 x_2)^2 + x_1 + a_2 x_2 + ||x||``,
    ``g_i(x) = (||x|| - d_1, -x_1 - x_2 + d_2)``.
    """
    agents = []
    for i, (cset, (a1, a2), (d1, d2), x0) in enumerate(zip(example1_sets(), spec.a, spec.d, spec.x0)):
        v = np.array([1.0, a1])
        cost = Sum((QuadraticForm(np.outer(v, v), [1.0, a2]), EuclideanNorm(1.0)))
        rows = (Sum((EuclideanNorm(1.0), Affine([0.0, 0.0], -d1))), Affine([-1.0, -1.0], d2))
        agents.append(AgentSpec(i + 1, cset, CostOracle(cost), ConstraintOracle(rows), x0=np.array(x0, float)))
    slater = np.concatenate([np.array(p, float) for p in EXAMPLE1_SLATER])
    return CoupledProblem(tuple(agents), CommGraph(4, EXAMPLE1_EDGES), 2, slater, name="example1")


@dataclass(frozen=True)
class RandomInstanceSpec:
    """Scalar agents on ``[0, 1]``.

    ``f_i(x) = a x^2 + ln(1 + b x) + c |x - d| + e x`` and ``g(x) = P x - q``
    with ``q = P x_bar + margin``; coefficients are uniform on ``[0, 1]``.
    """

    N: int
    M: int = 5
    seed: int = 0
    margin: float = 0.1
    x_bar_range: tuple = (0.2, 0.8)

    def __post_init__(self):
        if self.N < 2 or self.M < 1:
            raise ValueError("need N >= 2 and M >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")


def random_connected_edges(n: int, rng: np.random.Generator, p: float | None = None, max_tries: int = 10_000):
    """Erdos-Renyi draws with ``p = min(1, 2 ln n / n)``, repeated until connected."""
    if p is None:
        p = min(1.0, 2.0 * math.log(n) / n)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_tries):
        keep = rng.random(iu.size) < p
        edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
        if CommGraph(n, edges).connected:
            return edges
    raise RuntimeError(f"no connected graph after {max_tries} draws (p = {p})")


def gen_random_instance(spec: RandomInstanceSpec) -> CoupledProblem:
    """Deterministic per ``spec.seed`` (numpy PCG64 via ``default_rng``).

    Draw order: a, b, c, d, e (N each), P (M x N), x_bar (N), graph edges.
    """
    rng = np.random.default_rng(spec.seed)
    N, M = spec.N, spec.M
    a, b, c, d, e = (rng.random(N) for _ in range(5))
    P = rng.random((M, N))
    x_bar = rng.uniform(*spec.x_bar_range, size=N)
    q = P @ x_bar + spec.margin
    edges = random_connected_edges(N, rng)
    agents = []
    for i in range(N):
        cost = Sum((QuadraticForm([[a[i]]], [e[i]]), LogAffine([b[i]]), AbsDeviation(c[i], [d[i]])))
        rows = tuple(Affine([P[k, i]], -q[k] / N) for k in range(M))
        agents.append(AgentSpec(i + 1, Box([0.0], [1.0]), CostOracle(cost), ConstraintOracle(rows), x0=np.array([0.5])))
    return CoupledProblem(tuple(agents), CommGraph(N, edges), M, x_bar, name=f"random-N{N}-M{M}-seed{spec.seed}")
