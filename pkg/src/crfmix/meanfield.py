"""Fully factorized approximation by damped coordinate ascent.

The variational objective maximized here is the free energy
``A(Q) = E_Q[-E] + H(Q)``, a lower bound on the log-partition function.
Updates run sequentially in ascending variable order; with zero damping a
full sweep never decreases the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import backend
from .graphs import FactorGraph, adjacency

_EMPTY_I32 = np.zeros(0, dtype=np.int32)
_EMPTY_F64 = np.zeros(0, dtype=np.float64)
_NO_CLAUSES = (
    np.zeros(1, dtype=np.int32),  # cl_ptr
    _EMPTY_I32,  # mem_var
    _EMPTY_I32,  # mem_label
    _EMPTY_I32,  # cl_c
    _EMPTY_F64,  # cl_sign
    _EMPTY_F64,  # cl_lam
)


@dataclass(frozen=True)
class SolverConfig:
    max_sweeps: int = 500
    damping: float = 0.5
    tol: float = 1e-6
    floor: float = 1e-12

    def __post_init__(self):
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if not (0.0 < self.floor < 0.5):
            raise ValueError("floor must lie in (0, 0.5)")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


@dataclass(frozen=True)
class MFResult:
    q: np.ndarray
    free_energy: float
    converged: bool
    sweeps: int


def validate_marginals(g: FactorGraph, q) -> np.ndarray:
    q = np.ascontiguousarray(np.asarray(q, dtype=np.float64))
    if q.shape != (g.num_vars, g.num_labels):
        raise ValueError(
            f"marginals must have shape ({g.num_vars}, {g.num_labels}), got {q.shape}"
        )
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("marginal entries must lie in [0, 1]")
    if np.abs(q.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("marginal rows must sum to 1")
    return q


def uniform_init(g: FactorGraph, rng: np.random.Generator | None = None,
                 noise: float = 1e-3) -> np.ndarray:
    """Uniform rows plus seeded noise; the noise breaks symmetric saddles."""
    q = np.full((g.num_vars, g.num_labels), 1.0 / g.num_labels)
    if noise:
        rng = np.random.default_rng(0) if rng is None else rng
        q += noise * rng.uniform(-1.0, 1.0, size=q.shape)
        q /= q.sum(axis=1, keepdims=True)
    return q


def entropy(row, floor: float = 1e-12) -> float:
    """Entropy of one probability row, normalized by log(num_labels) into [0, 1]."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] < 2:
        raise ValueError("expected a probability row with at least two entries")
    if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-6:
        raise ValueError("expected a normalized probability row")
    h = -(row * np.log(np.maximum(row, floor))).sum()
    return float(h / np.log(row.shape[0]))


def entropies(q: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Row-wise normalized entropies."""
    q = np.asarray(q, dtype=np.float64)
    h = -(q * np.log(np.maximum(q, floor))).sum(axis=1)
    return h / np.log(q.shape[1])


def free_energy(g: FactorGraph, q, floor: float = 1e-12) -> float:
    """E_Q[-E] + H(Q) with 0 log 0 = 0."""
    q = validate_marginals(g, q)
    total = -float((q * g.unaries).sum())
    for e in g.edges:
        total -= float(q[e.i] @ e.w @ q[e.j])
    total -= float((q * np.log(np.maximum(q, floor))).sum())
    return total


def _run(g: FactorGraph, q: np.ndarray, cfg: SolverConfig,
         extra_unaries: np.ndarray | None = None,
         clause_arrays=None, max_sweeps: int | None = None):
    """Shared sweep driver; mutates and returns ``q``."""
    indptr, nbr, arc_w = adjacency(g)
    unaries = g.unaries if extra_unaries is None else g.unaries + extra_unaries
    unaries = np.ascontiguousarray(unaries)
    cl = _NO_CLAUSES if clause_arrays is None else clause_arrays
    sweeps, delta, converged = backend.run_sweeps(
        unaries, indptr, nbr, arc_w, q,
        cfg.damping, cfg.floor, cfg.tol,
        cfg.max_sweeps if max_sweeps is None else max_sweeps,
        *cl,
    )
    return q, sweeps, converged


def mf_solve(g: FactorGraph, init, cfg: SolverConfig = SolverConfig()) -> MFResult:
    """Damped fixed-point iteration from ``init``; returns the final field,
    its free energy, and whether the max-norm change dropped below tol."""
    if not (0.0 < cfg.floor < 1.0 / g.num_labels):
        raise ValueError("floor must lie in (0, 1/num_labels)")
    q = validate_marginals(g, init).copy()
    q, sweeps, converged = _run(g, q, cfg)
    return MFResult(q, free_energy(g, q, cfg.floor), converged, sweeps)
