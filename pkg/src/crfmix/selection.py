"""Choosing which variables to clamp: temperature sweeps and detectors.

Raising the temperature smooths the distribution; variables whose marginals
are definite at T = 1 but become uncertain at higher temperature sit on a
local phase transition and mark groups that can take different labels in
different modes. For the uniform dense Gaussian binary grid the transition
temperature has the closed form gamma * theta_rgb / 2.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .cardinality import constrained_mf_solve
from .graphs import DenseGaussianSpec, FactorGraph, adjacency, temper
from .meanfield import SolverConfig, entropies, entropy, uniform_init

DEFAULT_H_LOW = 0.3
DEFAULT_H_HIGH = 0.7
DEFAULT_T_MAX = 8.0
DEFAULT_T_STEPS = 8


@dataclass(frozen=True)
class TemperatureSchedule:
    """Strictly ascending temperatures, all above the base T = 1."""

    temps: tuple[float, ...]

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temps)
        object.__setattr__(self, "temps", temps)
        if not temps:
            raise ValueError("schedule must contain at least one temperature")
        if any(t <= 1.0 for t in temps):
            raise ValueError("all schedule temperatures must exceed 1")
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValueError("schedule temperatures must be strictly ascending")

    @classmethod
    def geometric(cls, t_max: float = DEFAULT_T_MAX,
                  steps: int = DEFAULT_T_STEPS) -> "TemperatureSchedule":
        if not (t_max > 1.0):
            raise ValueError("t_max must exceed 1")
        return cls(tuple(t_max ** (k / steps) for k in range(1, steps + 1)))

    @classmethod
    def for_dense_gaussian(cls, spec: DenseGaussianSpec,
                           steps: int = DEFAULT_T_STEPS,
                           headroom: float = 1.2) -> "TemperatureSchedule":
        """Covers the closed-form critical temperature with 20% headroom."""
        return cls.geometric(headroom * critical_temperature(spec), steps)


@dataclass(frozen=True)
class ClampCandidate:
    var: int
    label: int
    gap: float
    temp: float


@dataclass(frozen=True)
class GroupSelection:
    members: tuple[int, ...]
    values: tuple[int, ...]
    temp: float
    seed_var: int
    candidates: tuple[ClampCandidate, ...]


def _check_thresholds(h_high: float, h_low: float) -> None:
    if not (0.0 < h_low < h_high < 1.0):
        raise ValueError("need 0 < h_low < h_high < 1 (normalized entropies)")


def delta(q_temp_row, q_base_row, h_high: float, h_low: float) -> bool:
    """Transition indicator for one variable: uncertain when heated, definite at base."""
    _check_thresholds(h_high, h_low)
    return entropy(q_temp_row) > h_high and entropy(q_base_row) < h_low


def deltas(q_temp: np.ndarray, q_base: np.ndarray,
           h_high: float, h_low: float) -> np.ndarray:
    _check_thresholds(h_high, h_low)
    return (entropies(q_temp) > h_high) & (entropies(q_base) < h_low)


def sweep(g: FactorGraph, sched: TemperatureSchedule, clauses=(),
          cfg: SolverConfig = SolverConfig(), init=None,
          rng: np.random.Generator | None = None):
    """Constrained solves at T = 1 and each schedule temperature.

    Solves ascend from the base temperature, warm-starting each solve from
    the previous solution. Returns [(T, marginals), ...] with T = 1 first.
    """
    if init is None:
        init = uniform_init(g, rng)
    out = []
    res = constrained_mf_solve(g, clauses, init, cfg)
    out.append((1.0, res.q))
    prev = res.q
    for t in sched.temps:
        res = constrained_mf_solve(temper(g, t), clauses, prev, cfg)
        out.append((t, res.q))
        prev = res.q
    return out


def _graph_ball(g: FactorGraph, seed: int, radius: int) -> set[int]:
    indptr, nbr, _ = adjacency(g)
    seen = {seed}
    frontier = deque([(seed, 0)])
    while frontier:
        v, d = frontier.popleft()
        if d == radius:
            continue
        for u in nbr[indptr[v]:indptr[v + 1]]:
            if int(u) not in seen:
                seen.add(int(u))
                frontier.append((int(u), d + 1))
    return seen


def select_clamp_group(sweep_result, g: FactorGraph, *,
                       h_high: float = DEFAULT_H_HIGH,
                       h_low: float = DEFAULT_H_LOW,
                       grouping_radius: int | None = None,
                       seed_mode: str = "max_gap",
                       rng: np.random.Generator | None = None) -> GroupSelection | None:
    """Scan the sweep for the first temperature that flags any variable.

    Flagged variables near the seed (within ``grouping_radius`` graph hops;
    None means unrestricted) form the group; each member's value is its
    T = 1 argmax label. Returns None when no temperature flags anything.
    """
    _check_thresholds(h_high, h_low)
    if seed_mode not in ("max_gap", "random"):
        raise ValueError(f"unknown seed_mode {seed_mode!r}")
    base_t, q_base = sweep_result[0]
    if base_t != 1.0:
        raise ValueError("sweep result must start with the T = 1 entry")
    h_base = entropies(q_base)
    for t, q_t in sweep_result[1:]:
        h_t = entropies(q_t)
        flags = (h_t > h_high) & (h_base < h_low)
        if not flags.any():
            continue
        gaps = h_t - h_base
        flagged = np.flatnonzero(flags)
        if seed_mode == "random":
            rng = np.random.default_rng(0) if rng is None else rng
            seed_var = int(rng.choice(flagged))
        else:
            seed_var = int(flagged[np.argmax(gaps[flagged])])
        if grouping_radius is None:
            members = flagged
        else:
            ball = _graph_ball(g, seed_var, grouping_radius)
            members = np.array([v for v in flagged if int(v) in ball])
        values = tuple(int(np.argmax(q_base[v])) for v in members)
        candidates = tuple(
            ClampCandidate(int(v), int(np.argmax(q_base[v])), float(gaps[v]), float(t))
            for v in flagged
        )
        return GroupSelection(tuple(int(v) for v in members), values,
                              float(t), seed_var, candidates)
    return None


def maxw_select(g: FactorGraph, already_clamped=()) -> int:
    """Unclamped variable with the largest total absolute pairwise weight
    over its incident edges; ties go to the lowest index."""
    clamped = set(already_clamped)
    scores = np.zeros(g.num_vars)
    for e in g.edges:
        s = float(np.abs(e.w).sum())
        scores[e.i] += s
        scores[e.j] += s
    candidates = [v for v in range(g.num_vars) if v not in clamped]
    if not candidates:
        raise ValueError("every variable is already clamped")
    return max(candidates, key=lambda v: (scores[v], -v))


def critical_temperature(spec: DenseGaussianSpec) -> float:
    """Closed form gamma * theta_rgb / 2 for zero unary bias; with nonzero
    bias the same value is an upper bound (weaker unaries transition lower)."""
    return spec.gamma * spec.theta_rgb / 2.0


def tanh_fixed_points(gamma_eff: float, u: float, t: float, *,
                      grid: int = 41, max_iter: int = 20000,
                      tol: float = 1e-12, damping: float = 0.5) -> list[float]:
    """Stable solutions of x = tanh((x * gamma_eff - u) / t) / 2 in [-1/2, 1/2].

    Damped iteration from a grid of starts; converged points are kept only
    if the local derivative magnitude is below 1, then deduplicated at 1e-6.
    """
    if not (t > 0):
        raise ValueError("temperature must be positive")
    found: list[float] = []
    for x0 in np.linspace(-0.5, 0.5, grid):
        x = float(x0)
        for _ in range(max_iter):
            nxt = (1.0 - damping) * x + damping * 0.5 * np.tanh((x * gamma_eff - u) / t)
            if abs(nxt - x) < tol:
                x = nxt
                break
            x = nxt
        else:
            continue
        slope = 0.5 * gamma_eff / t / np.cosh((x * gamma_eff - u) / t) ** 2
        if abs(slope) >= 1.0:
            continue
        if not any(abs(x - y) <= 1e-6 for y in found):
            found.append(x)
    return sorted(found)


def empirical_transition(g: FactorGraph, sched: TemperatureSchedule,
                         cfg: SolverConfig = SolverConfig(),
                         rng: np.random.Generator | None = None,
                         threshold: float = 0.6) -> float | None:
    """First schedule temperature where the mean max-label probability of the
    warm-started sweep drops below ``threshold``; None if it never does."""
    for t, q in sweep(g, sched, (), cfg, rng=rng):
        if t == 1.0:
            continue
        if float(q.max(axis=1).mean()) < threshold:
            return t
    return None
