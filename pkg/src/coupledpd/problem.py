"""Problem model: agents, communication graph, the coupled problem and its validation.

The problem is

    minimize   sum_i f_i(x_i)
    subject to sum_i g_i(x_i) <= 0   (M coupled rows)
               x_i in Omega_i        (local compact convex sets).

Agents are indexed ``0..N-1`` internally; instance files use ``1..N``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError
from .functions import Family
from .sets import ConvexSet


class CostOracle:
    """Value and subgradient selection of a local cost ``f_i``."""

    def __init__(self, family: Family):
        self.family = family

    def value(self, x) -> float:
        return self.family.value(x)

    def subgradient(self, x) -> np.ndarray:
        return self.family.subgrad(x)


class ConstraintOracle:
    """Vector map ``g_i`` assembled from one scalar family per coupled row."""

    def __init__(self, rows: Sequence[Family]):
        self.rows = tuple(rows)
        if not self.rows:
            raise ValueError("a constraint map needs at least one row")

    @property
    def m(self) -> int:
        return len(self.rows)

    def value(self, x) -> np.ndarray:
        return np.array([r.value(x) for r in self.rows])

    def jacobian_selection(self, x) -> np.ndarray:
        return np.array([r.subgrad(x) for r in self.rows])


@dataclass(frozen=True, eq=False)
class AgentSpec:
    id: int
    set: ConvexSet
    cost: CostOracle
    constraint: ConstraintOracle
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.set.dimension()
        for fam in (self.cost.family, *self.constraint.rows):
            if fam.dim is not None and fam.dim != n:
                raise ValueError(f"agent {self.id}: function of dimension {fam.dim} on a set of dimension {n}")
        if self.x0 is not None:
            x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).copy()
            if x0.shape != (n,):
                raise ValueError(f"agent {self.id}: x0 has shape {x0.shape}")
            x0.setflags(write=False)
            object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.set.dimension()


class CommGraph:
    """Undirected simple graph on ``n_nodes`` nodes.

    Connectivity is computed once at construction (``connected``); it is
    reported by :func:`validate` rather than raised, so broken instance files
    can still be inspected.
    """

    def __init__(self, n_nodes: int, edges):
        self.n_nodes = int(n_nodes)
        norm = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range")
            norm.add((min(i, j), max(i, j)))
        self.edges = frozenset(norm)
        nbrs = [set() for _ in range(self.n_nodes)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        self._nbrs = tuple(tuple(sorted(s)) for s in nbrs)
        self.connected = self._traverse()

    def _traverse(self) -> bool:
        if self.n_nodes == 0:
            return False
        seen = {0}
        todo = deque([0])
        while todo:
            for j in self._nbrs[todo.popleft()]:
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return len(seen) == self.n_nodes

    def neighbors(self, i: int) -> tuple:
        return self._nbrs[i]

    def sorted_edges(self) -> list:
        return sorted(self.edges)

    def incidence(self) -> np.ndarray:
        """Edge-by-node matrix ``D`` with ``(D lam)_e = lam_i - lam_j`` for ``e = (i, j), i < j``."""
        E = self.sorted_edges()
        D = np.zeros((len(E), self.n_nodes))
        for e, (i, j) in enumerate(E):
            D[e, i] = 1.0
            D[e, j] = -1.0
        return D

    def laplacian(self) -> np.ndarray:
        D = self.incidence()
        return D.T @ D

    def __eq__(self, other):
        return isinstance(other, CommGraph) and self.n_nodes == other.n_nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.n_nodes, self.edges))

    def __repr__(self):
        return f"CommGraph(n_nodes={self.n_nodes}, edges={self.sorted_edges()})"


@dataclass(frozen=True, eq=False)
class CoupledProblem:
    agents: tuple
    graph: CommGraph
    m_constraints: int
    slater_point: Optional[np.ndarray] = None
    name: str = ""
    offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        if len(agents) != self.graph.n_nodes:
            raise ValueError(f"{len(agents)} agents but the graph has {self.graph.n_nodes} nodes")
        for a in agents:
            if a.constraint.m != self.m_constraints:
                raise ValueError(f"agent {a.id}: {a.constraint.m} constraint rows, expected {self.m_constraints}")
        offs = [0]
        for a in agents:
            offs.append(offs[-1] + a.dim)
        object.__setattr__(self, "offsets", tuple(offs))
        if self.slater_point is not None:
            xb = np.asarray(self.slater_point, dtype=float).copy()
            if xb.shape != (offs[-1],):
                raise ValueError("slater_point must be a stacked vector of all agents' variables")
            xb.setflags(write=False)
            object.__setattr__(self, "slater_point", xb)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_total(self) -> int:
        return self.offsets[-1]

    def block(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def split(self, x) -> list:
        x = np.asarray(x, dtype=float)
        return [x[self.block(i)] for i in range(self.n_agents)]

    def stack(self, xs) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in xs])

    def cost(self, x) -> float:
        return float(sum(a.cost.value(xi) for a, xi in zip(self.agents, self.split(x))))

    def coupled_constraint(self, x) -> np.ndarray:
        """``sum_i g_i(x_i)``."""
        return np.sum([a.constraint.value(xi) for a, xi in zip(self.agents, self.split(x))], axis=0)

    def local_constraints(self, x) -> np.ndarray:
        """``(N, M)`` array of the per-agent values ``g_i(x_i)``."""
        return np.array([a.constraint.value(xi) for a, xi in zip(self.agents, self.split(x))])

    def contains(self, x, tol: float = 1e-9) -> bool:
        return all(a.set.contains(xi, tol) for a, xi in zip(self.agents, self.split(x)))

    def initial_point(self) -> np.ndarray:
        """Instance-supplied ``x(0)``, defaulting per agent to the projection of the origin."""
        from .geometry import project_point

        parts = []
        for a in self.agents:
            parts.append(a.x0 if a.x0 is not None else project_point(a.set, np.zeros(a.dim)))
        return self.stack(parts)


# ----------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    advisory: bool = False


@dataclass
class ValidationReport:
    entries: list

    @property
    def ok(self) -> bool:
        """True when every non-advisory check passed."""
        return all(e.passed for e in self.entries if not e.advisory)

    def failures(self, include_advisory: bool = True):
        return [e for e in self.entries if not e.passed and (include_advisory or not e.advisory)]

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __str__(self):
        lines = []
        for e in self.entries:
            tag = "PASS" if e.passed else ("WARN" if e.advisory else "FAIL")
            lines.append(f"[{tag}] {e.name}: {e.detail}")
        return "\n".join(lines)


def _neighborhood_sampler(cset, rng, inflate=0.05):
    lo, up = cset.bounding_box()
    pad = inflate * np.maximum(up - lo, 1e-3)
    lo, up = lo - pad, up + pad
    return lambda: rng.uniform(lo, up)


def _convexity(fam: Family, draw, n_pairs: int, tol: float = 1e-9):
    worst = 0.0
    tested = 0
    for _ in range(n_pairs):
        x, y = draw(), draw()
        try:
            fx, fy, gx = fam.value(x), fam.value(y), fam.subgrad(x)
        except DomainError:
            continue
        tested += 1
        gap = fy - fx - gx @ (y - x)
        worst = min(worst, gap / (1.0 + abs(fx) + abs(fy)))
    return worst >= -tol, worst, tested


def validate(problem: CoupledProblem, n_pairs: int = 200, seed: int = 0) -> ValidationReport:
    """Check the verifiable part of the standing assumptions.

    Convexity can only be sampled, never certified, so those entries are
    marked advisory and do not affect ``report.ok``.
    """
    rng = np.random.default_rng(seed)
    out = []
    g = problem.graph
    out.append(CheckResult("graph_connected", g.connected, f"{g.n_nodes} nodes, {len(g.edges)} edges"))
    out.append(CheckResult("graph_size", len(problem.agents) == g.n_nodes,
                           f"{len(problem.agents)} agents for {g.n_nodes} nodes"))

    dims_ok, bounded_ok, bnd_detail = True, True, []
    for a in problem.agents:
        if a.set.dimension() != a.dim or a.constraint.m != problem.m_constraints:
            dims_ok = False
        lo, up = a.set.bounding_box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            bounded_ok = False
        bnd_detail.append(f"{a.id}:[{np.max(up - lo):.3g}]")
    out.append(CheckResult("dimensions", dims_ok, f"n={[a.dim for a in problem.agents]}, M={problem.m_constraints}"))
    out.append(CheckResult("sets_bounded", bounded_ok, "max extents " + " ".join(bnd_detail)))

    for a in problem.agents:
        draw = _neighborhood_sampler(a.set, rng)
        ok, worst, tested = _convexity(a.cost.family, draw, n_pairs)
        out.append(CheckResult(f"convexity_cost[{a.id}]", ok,
                               f"{tested} pairs, worst scaled gap {worst:.2e}", advisory=True))
        row_ok, row_worst = True, 0.0
        for r in a.constraint.rows:
            ok, worst, _ = _convexity(r, draw, n_pairs)
            row_ok &= ok
            row_worst = min(row_worst, worst)
        out.append(CheckResult(f"convexity_constraint[{a.id}]", row_ok,
                               f"{problem.m_constraints} rows, worst scaled gap {row_worst:.2e}", advisory=True))

    if problem.slater_point is not None:
        xb = problem.slater_point
        inside = problem.contains(xb)
        try:
            gsum = problem.coupled_constraint(xb)
            strict = bool(np.all(gsum < 0))
            detail = f"in Omega: {inside}, max_k sum_i g_ik = {np.max(gsum):.3e}"
        except DomainError as exc:
            strict, detail = False, str(exc)
        out.append(CheckResult("slater", inside and strict, detail))
    return ValidationReport(out)
