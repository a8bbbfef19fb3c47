"""Vectorized evaluation of a whole :class:`CoupledProblem`.

The per-agent functions in :mod:`coupledpd.calculus` are the readable
definition of the fields; this module compiles the same functions into flat
index arrays so one synchronous round costs a fixed number of numpy calls
instead of a Python loop over agents and atoms. ``tests/test_engine.py``
checks both paths against each other.

Rows: ``r < N`` is agent ``r``'s cost, ``r = N + i*M + k`` is ``g_ik``. A
weight vector ``w`` over rows turns row gradients into a single stacked
gradient ``sum_r w_r grad_r``; cost rows always carry weight 1 and
constraint rows carry the multiplier that agent ``i`` applies to row ``k``.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .functions import AbsDeviation, Affine, EuclideanNorm, LogAffine, QuadraticForm
from .geometry import _project
from .sets import Box, leaves


class Engine:
    def __init__(self, problem):
        self.problem = problem
        N, M = problem.n_agents, problem.m_constraints
        self.N, self.M, self.n = N, M, problem.n_total
        self.R = N + N * M
        n = self.n
        self.agent_of_coord = np.concatenate(
            [np.full(a.dim, i, dtype=int) for i, a in enumerate(problem.agents)]) if n else np.zeros(0, int)

        Q = np.zeros((n, n))
        qlin = np.zeros(n)
        qrow_const = np.zeros(self.R)
        self._cquad = []  # (row, slice, A, b, c) for quadratics inside constraints
        aff_row, aff_coord, aff_p = [], [], []
        log_atom_row, log_coord, log_b, log_atom = [], [], [], []
        nrm_row, nrm_agent, nrm_w = [], [], []
        abs_row, abs_coord, abs_c, abs_d = [], [], [], []
        has_norm = np.zeros(N, bool)
        has_abs = np.zeros(N, bool)

        def add(fam, row, i):
            sl = problem.block(i)
            for atom in fam.atoms():
                if isinstance(atom, QuadraticForm):
                    if row < N:
                        Q[sl, sl] += atom.A
                        qlin[sl] += atom.b
                        qrow_const[row] += atom.c
                    else:
                        self._cquad.append((row, sl, atom.A, atom.b, atom.c))
                elif isinstance(atom, Affine):
                    qrow_const[row] += atom.q
                    for k in range(sl.stop - sl.start):
                        aff_row.append(row)
                        aff_coord.append(sl.start + k)
                        aff_p.append(atom.p[k])
                elif isinstance(atom, LogAffine):
                    aid = len(log_atom_row)
                    log_atom_row.append(row)
                    for k in range(sl.stop - sl.start):
                        log_atom.append(aid)
                        log_coord.append(sl.start + k)
                        log_b.append(atom.b[k])
                elif isinstance(atom, EuclideanNorm):
                    nrm_row.append(row)
                    nrm_agent.append(i)
                    nrm_w.append(atom.weight)
                    has_norm[i] = True
                elif isinstance(atom, AbsDeviation):
                    for k in range(sl.stop - sl.start):
                        abs_row.append(row)
                        abs_coord.append(sl.start + k)
                        abs_c.append(atom.c)
                        abs_d.append(atom.d[k])
                    has_abs[i] = True
                else:  # pragma: no cover - closed enumeration
                    raise TypeError(f"unsupported atom {type(atom).__name__}")

        for i, a in enumerate(problem.agents):
            add(a.cost.family, i, i)
            for k, fam in enumerate(a.constraint.rows):
                add(fam, N + i * M + k, i)

        self.Q, self.qlin, self.row_const = Q, qlin, qrow_const
        self.has_cost_quad = bool(np.any(Q) or np.any(qlin))
        self.cost_lin_by_agent = None
        ia = lambda v: np.asarray(v, dtype=int)
        fa = lambda v: np.asarray(v, dtype=float)
        self.aff_row, self.aff_coord, self.aff_p = ia(aff_row), ia(aff_coord), fa(aff_p)
        self.log_atom_row, self.log_atom, self.log_coord, self.log_b = ia(log_atom_row), ia(log_atom), ia(log_coord), fa(log_b)
        self.nrm_row, self.nrm_agent, self.nrm_w = ia(nrm_row), ia(nrm_agent), fa(nrm_w)
        self.abs_row, self.abs_coord, self.abs_c, self.abs_d = ia(abs_row), ia(abs_coord), fa(abs_c), fa(abs_d)
        self.n_log = len(log_atom_row)
        counts = np.bincount(self.abs_coord, minlength=n) if n else np.zeros(0, int)
        self.abs_single = bool(np.all(counts <= 1))

        # projection layout
        box_idx, box_lo, box_up, others = [], [], [], []
        agent_all_box = np.ones(N, bool)
        for i, a in enumerate(problem.agents):
            for sl, leaf in leaves(a.set, problem.offsets[i]):
                if isinstance(leaf, Box):
                    box_idx.extend(range(sl.start, sl.stop))
                    box_lo.extend(leaf.lower)
                    box_up.extend(leaf.upper)
                else:
                    others.append((sl, leaf))
                    agent_all_box[i] = False
        self.box_idx, self.box_lo, self.box_up = ia(box_idx), fa(box_lo), fa(box_up)
        self.other_leaves = others

        kinky = has_norm | has_abs
        # agents whose kink prox composed with the set projection is exact
        self.exact_agents = np.flatnonzero(kinky & agent_all_box & ~has_norm)
        self.fallback_agents = np.flatnonzero(kinky & ~(agent_all_box & ~has_norm))
        self.has_norm, self.has_abs = has_norm, has_abs
        exact_mask = np.zeros(N, bool)
        exact_mask[self.exact_agents] = True
        self.exact_coords = np.flatnonzero(exact_mask[self.agent_of_coord]) if n else np.zeros(0, int)
        self.abs_exact = exact_mask[self.agent_of_coord[self.abs_coord]] if self.abs_coord.size else np.zeros(0, bool)
        fb = set(self.fallback_agents.tolist())
        self.agent_leaves = [list(leaves(a.set, problem.offsets[i])) for i, a in enumerate(problem.agents)]
        fbi, fbl, fbu, fo = [], [], [], []
        for i in range(N):
            if i in fb:
                continue
            for sl, leaf in self.agent_leaves[i]:
                if isinstance(leaf, Box):
                    fbi.extend(range(sl.start, sl.stop))
                    fbl.extend(leaf.lower)
                    fbu.extend(leaf.upper)
                else:
                    fo.append((sl, leaf))
        self.fast_box_idx, self.fast_box_lo, self.fast_box_up = ia(fbi), fa(fbl), fa(fbu)
        self.fast_other_leaves = fo
        fb_mask = np.zeros(N, bool)
        fb_mask[self.fallback_agents] = True
        self.fb_coords = np.flatnonzero(fb_mask[self.agent_of_coord]) if n else np.zeros(0, int)
        norm_only = fb_mask & has_norm & ~has_abs
        abs_only = fb_mask & has_abs & ~has_norm
        self.fb_norm_agents = np.flatnonzero(norm_only)
        self.fb_norm_coords = np.flatnonzero(norm_only[self.agent_of_coord]) if n else np.zeros(0, int)
        self.fb_abs_mask = abs_only[self.agent_of_coord[self.abs_coord]] if self.abs_coord.size else np.zeros(0, bool)
        self.fb_prox_ok = norm_only | abs_only  # mixed kinks have no closed-form prox
        self.fb_other_leaves = [(i, sl, leaf) for i in self.fallback_agents
                                for sl, leaf in self.agent_leaves[i] if not isinstance(leaf, Box)]

        # graph operators
        self.D = problem.graph.incidence()
        self.Dt = self.D.T.copy()
        self.n_edges = self.D.shape[0]
        if self.n_edges:
            Lap = self.Dt @ self.D
            self.lap_max = float(np.linalg.eigvalsh(Lap).max())
            self.flow = self.D @ np.linalg.pinv(Lap)  # min-norm edge flow for a given node divergence
        else:
            self.lap_max = 0.0
            self.flow = np.zeros((0, N))
        self._s = np.zeros((self.n_edges, M))  # warm start of the consensus prox dual
        self.prox_iters = 0
        self.prox_calls = 0

    def reset(self) -> None:
        """Forget warm starts so repeated runs are bit-identical."""
        self._s[:] = 0.0
        self.prox_iters = 0
        self.prox_calls = 0

    # ------------------------------------------------------------------ values
    def weights(self, lam_rows) -> np.ndarray:
        return np.concatenate([np.ones(self.N), np.asarray(lam_rows, dtype=float).ravel()])

    def row_values(self, x) -> np.ndarray:
        R, N = self.R, self.N
        vals = self.row_const.copy()
        if self.has_cost_quad:
            vals[:N] += np.bincount(self.agent_of_coord, x * (self.Q @ x) + self.qlin * x, minlength=N)
        for row, sl, A, b, c in self._cquad:
            xi = x[sl]
            vals[row] += xi @ A @ xi + b @ xi + c
        if self.aff_row.size:
            vals += np.bincount(self.aff_row, self.aff_p * x[self.aff_coord], minlength=R)
        if self.n_log:
            u = self._log_args(x)
            vals += np.bincount(self.log_atom_row, np.log(u), minlength=R)
        if self.nrm_row.size:
            nrm = self._block_norms(x)
            vals += np.bincount(self.nrm_row, self.nrm_w * nrm[self.nrm_agent], minlength=R)
        if self.abs_row.size:
            vals += np.bincount(self.abs_row, self.abs_c * np.abs(x[self.abs_coord] - self.abs_d), minlength=R)
        return vals

    def split_rows(self, vals):
        return vals[: self.N], vals[self.N:].reshape(self.N, self.M)

    def local_constraints(self, x) -> np.ndarray:
        return self.split_rows(self.row_values(x))[1]

    def _log_args(self, x):
        u = 1.0 + np.bincount(self.log_atom, self.log_b * x[self.log_coord], minlength=self.n_log)
        if np.any(u <= 0):
            raise DomainError("log argument 1 + b.x is not positive")
        return u

    def _block_norms(self, x):
        return np.sqrt(np.bincount(self.agent_of_coord, x * x, minlength=self.N))

    # --------------------------------------------------------------- gradients
    def smooth_grad(self, x, w) -> np.ndarray:
        n = self.n
        g = np.zeros(n)
        if self.has_cost_quad:
            g += 2.0 * (self.Q @ x) + self.qlin
        for row, sl, A, b, _ in self._cquad:
            g[sl] += w[row] * (2.0 * (A @ x[sl]) + b)
        if self.aff_row.size:
            g += np.bincount(self.aff_coord, w[self.aff_row] * self.aff_p, minlength=n)
        if self.n_log:
            u = self._log_args(x)
            g += np.bincount(self.log_coord, w[self.log_atom_row[self.log_atom]] * self.log_b / u[self.log_atom],
                             minlength=n)
        return g

    def norm_weights(self, w) -> np.ndarray:
        return np.bincount(self.nrm_agent, w[self.nrm_row] * self.nrm_w, minlength=self.N)

    def kink_grad(self, x, w) -> np.ndarray:
        """Minimal-norm selection of the nonsmooth atoms at ``x``."""
        n = self.n
        g = np.zeros(n)
        if self.nrm_row.size:
            alpha = self.norm_weights(w)
            nrm = self._block_norms(x)[self.agent_of_coord]
            safe = np.where(nrm > 0, nrm, 1.0)
            g += np.where(nrm > 0, alpha[self.agent_of_coord] * x / safe, 0.0)
        if self.abs_row.size:
            g += np.bincount(self.abs_coord, w[self.abs_row] * self.abs_c * np.sign(x[self.abs_coord] - self.abs_d),
                             minlength=n)
        return g

    def full_grad(self, x, w) -> np.ndarray:
        return self.smooth_grad(x, w) + self.kink_grad(x, w)

    # ------------------------------------------------------------- projections
    def project(self, z) -> np.ndarray:
        out = z.copy()
        if self.box_idx.size:
            out[self.box_idx] = np.clip(z[self.box_idx], self.box_lo, self.box_up)
        for sl, leaf in self.other_leaves:
            out[sl] = _project(leaf, z[sl])[0]
        return out

    def _prox_abs(self, z, w, h, mask=None):
        """Prox of ``h * sum w c |y_k - d|`` coordinatewise (restricted to ``mask`` entries)."""
        y = z.copy()
        if not self.abs_row.size:
            return y
        sel = slice(None) if mask is None else mask
        coord, d = self.abs_coord[sel], self.abs_d[sel]
        tau = h * w[self.abs_row[sel]] * self.abs_c[sel]
        if self.abs_single:
            t = z[coord] - d
            y[coord] = d + np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)
            return y
        for k in np.unique(coord):
            on = coord == k
            y[k] = _prox_abs_sum(z[k], d[on], tau[on])
        return y

    # ----------------------------------------------------------------- updates
    def primal_update(self, x, w, h, scheme) -> np.ndarray:
        z0 = x - h * self.smooth_grad(x, w)
        if scheme == "explicit":
            return self.project(z0 - h * self.kink_grad(x, w))
        # agents outside the fallback set: exact prox (abs kinks on boxes) or plain projection
        y = self._prox_abs(z0, w, h, self.abs_exact) if self.exact_agents.size else z0
        out = y.copy()
        if self.fast_box_idx.size:
            out[self.fast_box_idx] = np.clip(y[self.fast_box_idx], self.fast_box_lo, self.fast_box_up)
        for sl, leaf in self.fast_other_leaves:
            out[sl] = _project(leaf, y[sl])[0]
        if self.fallback_agents.size:
            out[self.fb_coords] = self._fallback(x, z0, w, h)[self.fb_coords]
        return out

    def _fallback(self, x, z0, w, h):
        """Prox step where its result stays feasible, explicit projected step elsewhere."""
        y = z0.copy()
        if self.fb_norm_agents.size:
            tau = h * self.norm_weights(w)
            nz = self._block_norms(z0)
            safe = np.where(nz > 0, nz, 1.0)
            scale = np.where(nz <= tau, 0.0, 1.0 - tau / safe)
            c = self.fb_norm_coords
            y[c] = z0[c] * scale[self.agent_of_coord[c]]
        if self.fb_abs_mask.any():
            y = self._prox_abs(y, w, h, self.fb_abs_mask)
        ok = self.fb_prox_ok.copy()
        if self.box_idx.size:
            bad = (y[self.box_idx] < self.box_lo - 1e-12) | (y[self.box_idx] > self.box_up + 1e-12)
            ok &= np.bincount(self.agent_of_coord[self.box_idx], bad, minlength=self.N) == 0
        for i, sl, leaf in self.fb_other_leaves:
            if ok[i] and not leaf.contains(y[sl], 1e-12):
                ok[i] = False
        if ok[self.fallback_agents].all():
            return y
        explicit = self.project(z0 - h * self.kink_grad(x, w))
        return np.where(ok[self.agent_of_coord], y, explicit)

    def _project_agent(self, i, zi):
        off = self.problem.offsets[i]
        out = zi.copy()
        for sl, leaf in self.agent_leaves[i]:
            loc = slice(sl.start - off, sl.stop - off)
            out[loc] = _project(leaf, zi[loc])[0]
        return out

    def consensus_prox(self, v, c, tol=1e-13, max_iter=5000):
        """``argmin_{mu >= 0} 1/2 ||mu - v||^2 + c * sum_edges |mu_i - mu_j|_1`` columnwise.

        Columns admitting an exact consensus certificate (a bounded edge flow
        reproducing ``v - mean(v)``) are solved in closed form; the rest run
        projected gradient on the edge dual, warm-started across calls.
        """
        self.prox_calls += 1
        if c <= 0 or self.n_edges == 0:
            return np.maximum(v, 0.0)
        mean = v.mean(axis=0)
        s_cert = self.flow @ (v - mean) / c
        ok = np.max(np.abs(s_cert), axis=0) <= 1.0
        mu = np.empty_like(v)
        if np.any(ok):
            mu[:, ok] = np.maximum(mean[ok], 0.0)
            self._s[:, ok] = s_cert[:, ok]
        bad = ~ok
        if np.any(bad):
            vb = v[:, bad]
            s = self._s[:, bad]
            step = 1.0 / (c * self.lap_max)
            for it in range(max_iter):
                m = np.maximum(vb - c * (self.Dt @ s), 0.0)
                Dm = self.D @ m
                gap = c * float(np.sum(np.abs(Dm) - s * Dm))
                if gap <= tol * max(1.0, c):
                    break
                s = np.clip(s + step * Dm, -1.0, 1.0)
            self.prox_iters += it + 1
            self._s[:, bad] = s
            mu[:, bad] = m
        return mu

    def dual_update(self, lam, G, h, K, scheme) -> np.ndarray:
        v = lam + h * G
        if scheme == "explicit":
            push = self.Dt @ np.sign(self.D @ lam) if self.n_edges else 0.0
            return np.maximum(v - h * K * push, 0.0)
        return self.consensus_prox(v, h * K)

    def distributed_step(self, x, lam, h, K, scheme="semi-implicit"):
        w = self.weights(lam)
        _, G = self.split_rows(self.row_values(x))
        x_new = self.primal_update(x, w, h, scheme)
        lam_new = self.dual_update(lam, G, h, K, scheme)
        return x_new, lam_new, G

    def central_step(self, x, lam, h, scheme="semi-implicit"):
        w = self.weights(np.tile(lam, (self.N, 1)))
        _, G = self.split_rows(self.row_values(x))
        x_new = self.primal_update(x, w, h, scheme)
        lam_new = np.maximum(lam + h * G.sum(axis=0), 0.0)
        return x_new, lam_new, G

    # ---------------------------------------------------------- scalar values
    def phi(self, lam) -> float:
        return float(np.abs(self.D @ lam).sum()) if self.n_edges else 0.0

    def modified_lagrangian(self, x, lam, K) -> float:
        cost, G = self.split_rows(self.row_values(x))
        return float(cost.sum() + np.sum(lam * G) - K * self.phi(lam))

    def lagrangian(self, x, lam) -> float:
        cost, G = self.split_rows(self.row_values(x))
        return float(cost.sum() + lam @ G.sum(axis=0))


def _prox_abs_sum(z, d, tau):
    """Scalar ``argmin_y 1/2 (y - z)^2 + sum_j tau_j |y - d_j|``."""
    d, inv = np.unique(d, return_inverse=True)
    tau = np.bincount(inv, tau)
    total = tau.sum()
    below = 0.0  # weight of breakpoints left of the current piece
    for k in range(d.size + 1):
        slope = below - (total - below)
        y = z - slope
        lo = -np.inf if k == 0 else d[k - 1]
        hi = np.inf if k == d.size else d[k]
        if lo < y < hi:
            return float(y)
        if k < d.size:
            # 0 in (d_k - z) + (slope + tau_k) + tau_k [-1, 1]
            if abs(d[k] - z + slope + tau[k]) <= tau[k] * (1 + 1e-15) + 1e-300:
                return float(d[k])
            below += tau[k]
    raise AssertionError("unreachable: the objective is coercive")  # pragma: no cover
