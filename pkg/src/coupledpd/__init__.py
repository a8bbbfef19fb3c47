"""Distributed projected primal-dual subgradient dynamics with local multipliers.

``N`` agents jointly solve ``min sum_i f_i(x_i)`` subject to coupled
inequalities ``sum_i g_i(x_i) <= 0`` and local sets ``x_i in Omega_i``. Each
agent keeps its own multiplier copy; an l1 consensus penalty ``K * phi``
drives the copies together.
"""

from .calculus import (MultiplierStack, consensus_distance, consensus_penalty, dual_field, lagrangian,
                       max_disagreement, modified_lagrangian, primal_field)
from .certify import DualBound, KktReport, dual_ball, kkt_residual, lyapunov, merit, rate_certificate
from .dynamics import (CentralState, NetworkState, RunRecord, SolverConfig, centralized_step, distributed_step,
                       penalty_gain, run)
from .errors import (CoupledPDError, DegenerateReference, Diverged, DomainError, InfeasibleState,
                     InstanceFormatError, LowAccuracy, NonConvergence, SlaterViolation)
from .geometry import normal_cone_project, project, project_nonneg, projected_step
from .problem import AgentSpec, CommGraph, ConstraintOracle, CostOracle, CoupledProblem, ValidationReport, validate
from .sets import Ball, Box, ConvexSet, Halfspaces, ProductSet

__all__ = [n for n in dir() if not n.startswith("_")]
