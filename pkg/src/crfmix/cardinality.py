"""Count constraints over groups of variables and the constrained solver.

A clause asks that at least (or fewer than) C of its member variables take
their listed labels. Under a product law the member-match count follows a
Poisson binomial distribution, so clause probabilities are computed exactly
by dynamic programming, or approximately by a Gaussian tail when the group
is large. Enforcement goes through dual ascent on one multiplier per
clause: each inner step is an unconstrained solve with extra potentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .graphs import FactorGraph, validate_labeling
from .meanfield import SolverConfig, free_energy, mf_solve, validate_marginals, _run

AT_LEAST = "at_least"
LESS_THAN = "less_than"

DUAL_BUDGET = 50
DUAL_STEP = 0.5
_DUAL_UP_CLIP = 4.0     # cap on log-lambda growth per iteration
_DUAL_DOWN_CLIP = -0.5  # slow decay keeps coupled clauses near joint feasibility
_DUAL_MIN_UP = 0.05     # guaranteed progress while a clause is violated
_RATCHET_ROUNDS = 15
_LAMBDA_MAX = 1e30
_STALL_LIMIT = 5
_FEAS_SLOP = 1.0 + 1e-6


class InfeasibleClausesError(ValueError):
    """No labeling can satisfy all clauses simultaneously."""


@dataclass(frozen=True)
class CardinalityClause:
    """(variable, label) members with a count threshold.

    ``at_least`` holds when at least ``threshold`` members match their label;
    ``less_than`` holds when fewer than ``threshold`` do. ``epsilon`` is the
    slack allowed when the clause is enforced on a product distribution.
    """

    members: tuple[tuple[int, int], ...]
    threshold: int
    direction: str = AT_LEAST
    epsilon: float = 1e-4

    def __post_init__(self):
        members = tuple((int(v), int(l)) for v, l in self.members)
        object.__setattr__(self, "members", members)
        variables = [v for v, _ in members]
        if len(set(variables)) != len(variables):
            raise ValueError("clause member variables must be distinct")
        if self.direction not in (AT_LEAST, LESS_THAN):
            raise ValueError(f"unknown direction {self.direction!r}")
        if not (0 <= self.threshold <= len(members)):
            raise ValueError("threshold must lie in [0, len(members)]")
        if not (0.0 < self.epsilon < 0.5):
            raise ValueError("epsilon must lie in (0, 0.5)")

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class DualState:
    lam: float
    feasible: bool
    iterations: int


@dataclass(frozen=True)
class ConstrainedResult:
    q: np.ndarray
    free_energy: float
    converged: bool
    duals: tuple[DualState, ...]

    @property
    def feasible(self) -> bool:
        return all(d.feasible for d in self.duals)


def clause_complement(c: CardinalityClause) -> CardinalityClause:
    """The other side of the same split; together they partition all labelings."""
    direction = LESS_THAN if c.direction == AT_LEAST else AT_LEAST
    return CardinalityClause(c.members, c.threshold, direction, c.epsilon)


def satisfies(x, c: CardinalityClause, g: FactorGraph | None = None) -> bool:
    if g is not None:
        x = validate_labeling(g, x)
    else:
        x = np.asarray(x, dtype=np.int64)
    count = sum(1 for v, l in c.members if x[v] == l)
    if c.direction == AT_LEAST:
        return count >= c.threshold
    return count < c.threshold


def member_probs(q: np.ndarray, c: CardinalityClause) -> np.ndarray:
    return np.array([q[v, l] for v, l in c.members], dtype=np.float64)


def _pb_below(ps: np.ndarray, c: int) -> float:
    """P(count < c) for independent indicators with probabilities ``ps``.

    Truncated DP over counts 0..c-1; mass reaching c is discarded, O(L*c).
    """
    if c <= 0:
        return 0.0
    dp = np.zeros(c)
    dp[0] = 1.0
    for p in ps:
        dp[1:] = dp[1:] * (1.0 - p) + dp[:-1] * p
        dp[0] *= 1.0 - p
    return float(dp.sum())


def violation_prob_exact(q: np.ndarray, c: CardinalityClause) -> float:
    """Probability under the product law that the clause fails."""
    ps = member_probs(q, c)
    below = _pb_below(ps, c.threshold)
    if c.direction == AT_LEAST:
        return below
    return 1.0 - below


def violation_prob_gaussian(q: np.ndarray, c: CardinalityClause,
                            variance_bound: bool = False) -> tuple[float, float]:
    """Gaussian tail approximation of the failure probability.

    Uses mean ``sum q_u`` and variance ``sum q_u (1 - q_u)`` (or the upper
    bound L/4 when ``variance_bound``), with a half-integer continuity
    correction. Also returns the linearized surrogate as a signed margin:
    negative or zero means the surrogate constraint holds at slack epsilon.
    Degenerate variance falls back to the exact computation.
    """
    if len(c) < 2:
        raise ValueError("Gaussian approximation needs at least 2 members")
    ps = member_probs(q, c)
    mu = float(ps.sum())
    var = len(c) / 4.0 if variance_bound else float((ps * (1.0 - ps)).sum())
    z = float(ndtri(1.0 - c.epsilon))
    if var <= 0.0:
        prob = violation_prob_exact(q, c)
        if c.direction == AT_LEAST:
            margin = (c.threshold - 0.5) - mu
        else:
            margin = mu - (c.threshold - 0.5)
        return prob, margin
    sigma = math.sqrt(var)
    zc = (c.threshold - 0.5 - mu) / sigma
    if c.direction == AT_LEAST:
        prob = float(ndtr(zc))
        margin = (c.threshold - 0.5 + sigma * z) - mu
    else:
        prob = float(ndtr(-zc))
        margin = mu - (c.threshold - 0.5 - sigma * z)
    return prob, margin


def _forced_assignments(clauses) -> dict[int, int] | None:
    """Variable assignments implied by tight clauses; None on a direct conflict."""
    forced: dict[int, int] = {}
    banned: dict[int, set[int]] = {}
    for c in clauses:
        if c.direction == AT_LEAST and c.threshold == len(c):
            for v, l in c.members:
                if forced.setdefault(v, l) != l:
                    return None
        elif c.direction == LESS_THAN and c.threshold <= 0:
            return None  # a count below zero is impossible
        elif c.direction == LESS_THAN and c.threshold == 1:
            for v, l in c.members:
                banned.setdefault(v, set()).add(l)
    for v, l in forced.items():
        if l in banned.get(v, ()):
            return None
    return forced


def greedy_witness(clauses, num_vars: int, num_labels: int) -> np.ndarray | None:
    """Greedy construction of one labeling satisfying every clause.

    Not complete: adversarial satisfiable systems can be missed, but direct
    contradictions (and everything the mode tree produces) are handled.
    """
    clauses = list(clauses)
    forced = _forced_assignments(clauses)
    if forced is None:
        return None
    banned: dict[int, set[int]] = {}
    for c in clauses:
        if c.direction == LESS_THAN and c.threshold == 1:
            for v, l in c.members:
                banned.setdefault(v, set()).add(l)
    assign = dict(forced)
    for c in clauses:
        if c.direction != AT_LEAST:
            continue
        count = sum(1 for v, l in c.members if assign.get(v) == l)
        for v, l in c.members:
            if count >= c.threshold:
                break
            if v not in assign and l not in banned.get(v, ()):
                assign[v] = l
                count += 1
        if count < c.threshold:
            return None
    x = np.zeros(num_vars, dtype=np.int64)
    for v in range(num_vars):
        if v in assign:
            x[v] = assign[v]
        else:
            bad = banned.get(v, ())
            x[v] = next(l for l in range(num_labels) if l not in bad)
    # Repair loop: push unpinned members off their labels while any
    # less-than clause still counts too many matches. Flips prefer members
    # shared across violated clauses and targets that create no new match.
    less = [c for c in clauses if c.direction == LESS_THAN and c.threshold >= 1]
    for _ in range(4 * len(less) + 4):
        violated = [c for c in less
                    if sum(1 for v, l in c.members if x[v] == l) >= c.threshold]
        if not violated:
            break
        cands = [(v, l) for v, l in violated[0].members
                 if v not in assign and x[v] == l]
        if not cands:
            return None

        def _helps(v):
            return sum(1 for c2 in violated if (v, int(x[v])) in c2.members)

        def _harm(v, w):
            return sum(1 for c2 in less if (v, w) in c2.members
                       and sum(1 for mv, ml in c2.members if x[mv] == ml)
                       >= c2.threshold - 1)

        best = None  # (helps, -harm, -order) maximized; remembers target label
        for order, (v, l) in enumerate(cands):
            targets = [w for w in range(num_labels)
                       if w != l and w not in banned.get(v, ())]
            if not targets:
                continue
            w = min(targets, key=lambda t: (_harm(v, t), t))
            key = (_helps(v), -_harm(v, w), -order)
            if best is None or key > best[0]:
                best = (key, v, w)
        if best is None:
            return None
        x[best[1]] = best[2]
    for c in clauses:
        if not satisfies(x, c):
            return None
    return x


def _regime(c: CardinalityClause) -> int:
    """1: threshold within distance 1 of an extreme (exact potentials are cheap);
    2: interior threshold (Gaussian-linearized surrogate)."""
    return 1 if min(c.threshold, len(c) - c.threshold) <= 1 else 2


def _kernel_clause_arrays(clauses, lams):
    """Flatten the exact-potential clauses for the sweep kernel."""
    cl_ptr = [0]
    mem_var: list[int] = []
    mem_label: list[int] = []
    cl_c: list[int] = []
    cl_sign: list[float] = []
    for c in clauses:
        for v, l in c.members:
            mem_var.append(v)
            mem_label.append(l)
        cl_ptr.append(len(mem_var))
        cl_c.append(c.threshold)
        cl_sign.append(1.0 if c.direction == AT_LEAST else -1.0)
    return (
        np.asarray(cl_ptr, dtype=np.int32),
        np.asarray(mem_var, dtype=np.int32),
        np.asarray(mem_label, dtype=np.int32),
        np.asarray(cl_c, dtype=np.int32),
        np.asarray(cl_sign, dtype=np.float64),
        np.asarray(lams, dtype=np.float64),
    )


def constrained_mf_solve(g: FactorGraph, clauses, init,
                         cfg: SolverConfig = SolverConfig(), *,
                         outer_budget: int = DUAL_BUDGET,
                         step: float = DUAL_STEP,
                         variance_bound: bool = False) -> ConstrainedResult:
    """Maximize the free energy subject to every clause failing with
    probability at most its epsilon.

    One nonnegative multiplier per clause is driven multiplicatively by the
    log-ratio of the observed violation to epsilon. Regime-1 clauses add
    their exact leave-one-out count potentials inside the sweeps; regime-2
    clauses add constant per-member unary potentials from the Gaussian
    surrogate, whose variance is re-estimated each outer iteration. Exit
    feasibility is always the exact DP check.
    """
    clauses = tuple(clauses)
    if not clauses:
        res = mf_solve(g, init, cfg)
        return ConstrainedResult(res.q, res.free_energy, res.converged, ())
    for c in clauses:
        for v, _ in c.members:
            if not (0 <= v < g.num_vars):
                raise ValueError(f"clause member variable {v} out of range")
    if greedy_witness(clauses, g.num_vars, g.num_labels) is None:
        raise InfeasibleClausesError("no labeling satisfies all clauses")

    regimes = [_regime(c) for c in clauses]
    lam = np.ones(len(clauses))
    q = validate_marginals(g, init).copy()

    def _inner_solve(q):
        r1 = [i for i, r in enumerate(regimes) if r == 1]
        clause_arrays = None
        if r1:
            clause_arrays = _kernel_clause_arrays(
                [clauses[i] for i in r1], [lam[i] for i in r1])
        extra = None
        if any(r == 2 for r in regimes):
            extra = np.zeros_like(g.unaries)
            for i, c in enumerate(clauses):
                if regimes[i] != 2:
                    continue
                sign = 1.0 if c.direction == AT_LEAST else -1.0
                for v, l in c.members:
                    extra[v, l] -= sign * lam[i]
        return _run(g, q, cfg, extra_unaries=extra, clause_arrays=clause_arrays)

    def _exact_viols(q):
        exact = np.array([violation_prob_exact(q, c) for c in clauses])
        flags = exact <= np.array([c.epsilon * _FEAS_SLOP for c in clauses])
        return exact, flags

    best = None  # (A, q, lam, feas_flags, converged)
    closest = None  # smallest max violation ratio, fallback when never feasible
    stall = 0
    iterations = 0
    for it in range(1, outer_budget + 1):
        iterations = it
        q, _, converged = _inner_solve(q)
        exact, feas_flags = _exact_viols(q)
        a_val = free_energy(g, q, cfg.floor)
        ratio = max(float(v) / c.epsilon for v, c in zip(exact, clauses))
        if closest is None or ratio < closest[0]:
            closest = (ratio, q.copy(), lam.copy(), feas_flags.copy(), converged)
        if feas_flags.all():
            if best is None or a_val > best[0]:
                best = (a_val, q.copy(), lam.copy(), feas_flags.copy(), converged)
                stall = 0
            else:
                stall += 1
        elif best is not None:
            stall += 1
        if stall >= _STALL_LIMIT:
            break

        # Multiplicative dual update, driven by the regime's violation
        # measure but re-tightened by the exact check when the surrogate
        # is optimistic.
        for i, c in enumerate(clauses):
            if regimes[i] == 1:
                v_dual = exact[i]
            else:
                v_dual, _ = violation_prob_gaussian(q, c, variance_bound)
                if exact[i] > c.epsilon * _FEAS_SLOP and v_dual <= c.epsilon:
                    v_dual = exact[i]
            change = step * (math.log(max(v_dual, 1e-300)) - math.log(c.epsilon))
            if exact[i] > c.epsilon * _FEAS_SLOP:
                change = max(change, _DUAL_MIN_UP)
            change = min(max(change, _DUAL_DOWN_CLIP), _DUAL_UP_CLIP)
            lam[i] = min(lam[i] * math.exp(change), _LAMBDA_MAX)

    if best is None:
        # Terminal tightening: ratchet the multipliers of the still-violated
        # clauses upward (never down) until the exact check passes or the
        # extra rounds run out.
        _, q, lam, feas_flags, converged = closest
        q = q.copy()
        for _ in range(_RATCHET_ROUNDS):
            if feas_flags.all():
                break
            iterations += 1
            for i in range(len(clauses)):
                if not feas_flags[i]:
                    lam[i] = min(lam[i] * math.e, _LAMBDA_MAX)
            q, _, converged = _inner_solve(q)
            exact, feas_flags = _exact_viols(q)
        a_val = free_energy(g, q, cfg.floor)
        if feas_flags.all():
            best = (a_val, q, lam, feas_flags, converged)
        else:
            ratio = max(float(v) / c.epsilon for v, c in zip(exact, clauses))
            if ratio < closest[0]:
                closest = (ratio, q, lam, feas_flags, converged)

    if best is not None:
        a_val, q_out, lam_out, flags, converged = best
    else:
        _, q_out, lam_out, flags, converged = closest
        a_val = free_energy(g, q_out, cfg.floor)
    duals = tuple(DualState(float(lam_out[i]), bool(flags[i]), iterations)
                  for i in range(len(clauses)))
    return ConstrainedResult(q_out, a_val, converged, duals)
