"""Mode trees and mixtures of factorized fields.

The state space is split recursively by count clauses: each split solves
two constrained problems, one per side, and the resulting leaves carry
near-disjoint fields. Leaf free energies A_k combine into mixture weights
m_k = exp(A_k) / sum exp(A_k') and the aggregate lower bound
log Z~ = logsumexp(A_1..A_K) on the log-partition function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np

from .cardinality import (AT_LEAST, CardinalityClause, ConstrainedResult,
                          clause_complement, constrained_mf_solve, satisfies)
from .graphs import FactorGraph, all_labelings, state_energies
from .meanfield import SolverConfig, uniform_init
from .selection import (DEFAULT_H_HIGH, DEFAULT_H_LOW, TemperatureSchedule,
                        maxw_select, select_clamp_group, sweep)

THRESHOLD_POLICIES = ("all", "one", "half")


@dataclass(frozen=True)
class SplitConfig:
    """Knobs for group selection and clause formation at each split."""

    epsilon: float = 1e-4
    h_low: float = DEFAULT_H_LOW
    h_high: float = DEFAULT_H_HIGH
    threshold_policy: str = "all"
    grouping_radius: int | None = None
    seed_mode: str = "max_gap"

    def __post_init__(self):
        if self.threshold_policy not in THRESHOLD_POLICIES:
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")

    def threshold_for(self, group_size: int) -> int:
        if self.threshold_policy == "all":
            return group_size
        if self.threshold_policy == "one":
            return 1
        return max(1, math.ceil(group_size / 2))


@dataclass
class TreeNode:
    index: int
    parent: int | None
    clause_from_parent: CardinalityClause | None
    solution: ConstrainedResult
    split: CardinalityClause | None = None
    children: tuple[int, int] | None = None
    terminal: bool = False  # leaf on which no further split was found

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class ModeTree:
    nodes: list[TreeNode] = field(default_factory=list)

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def path_clauses(self, index: int) -> tuple[CardinalityClause, ...]:
        out = []
        node = self.nodes[index]
        while node.parent is not None:
            out.append(node.clause_from_parent)
            node = self.nodes[node.parent]
        return tuple(reversed(out))


@dataclass(frozen=True)
class Mode:
    q: np.ndarray
    weight: float
    a: float
    feasible: bool = True


@dataclass(frozen=True)
class Mixture:
    modes: tuple[Mode, ...]
    log_z_tilde: float


def mixture_weights(a_values) -> np.ndarray:
    """Softmax of the free energies, max-shifted."""
    a = np.asarray(a_values, dtype=np.float64)
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise ValueError("free energies must be a non-empty finite list")
    e = np.exp(a - a.max())
    return e / e.sum()


def log_z_tilde(a_values) -> float:
    """logsumexp of the per-mode free energies."""
    a = np.asarray(a_values, dtype=np.float64)
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise ValueError("free energies must be a non-empty finite list")
    m = a.max()
    return float(m + np.log(np.exp(a - m).sum()))


def _mixture_from_leaves(leaves: Sequence[TreeNode]) -> Mixture:
    a = [leaf.solution.free_energy for leaf in leaves]
    lzt = log_z_tilde(a)
    weights = [math.exp(ak - lzt) for ak in a]
    modes = tuple(
        Mode(leaf.solution.q, w, ak, leaf.solution.feasible)
        for leaf, w, ak in zip(leaves, weights, a)
    )
    return Mixture(modes, lzt)


Splitter = Callable[[TreeNode, tuple[CardinalityClause, ...]], CardinalityClause | None]


class ModeTreeBuilder:
    """Grows a clause tree breadth-first; trees for nested mode counts share
    their prefix, so growing to a larger K extends the smaller K's tree."""

    def __init__(self, g: FactorGraph, splitter: Splitter,
                 cfg: SolverConfig = SolverConfig(), init=None,
                 rng: np.random.Generator | None = None):
        self.graph = g
        self.cfg = cfg
        self.splitter = splitter
        if init is None:
            init = uniform_init(g, rng)
        root = TreeNode(0, None, None, constrained_mf_solve(g, (), init, cfg))
        self.tree = ModeTree([root])
        self._queue: list[int] = [0]

    @property
    def num_leaves(self) -> int:
        return len(self.tree.leaves())

    def grow_to(self, target_modes: int) -> bool:
        """Split until the leaf count reaches ``target_modes`` or no leaf can
        split; returns True when the target was reached."""
        if target_modes < 1:
            raise ValueError("target mode count must be at least 1")
        while self.num_leaves < target_modes and self._queue:
            index = self._queue.pop(0)
            node = self.tree.nodes[index]
            path = self.tree.path_clauses(index)
            clause = self.splitter(node, path)
            if clause is None:
                node.terminal = True
                continue
            complement = clause_complement(clause)
            left = TreeNode(
                len(self.tree.nodes), index, clause,
                constrained_mf_solve(self.graph, path + (clause,), node.solution.q, self.cfg),
            )
            self.tree.nodes.append(left)
            right = TreeNode(
                len(self.tree.nodes), index, complement,
                constrained_mf_solve(self.graph, path + (complement,), node.solution.q, self.cfg),
            )
            self.tree.nodes.append(right)
            node.split = clause
            node.children = (left.index, right.index)
            self._queue.extend([left.index, right.index])
        return self.num_leaves >= target_modes

    def mixture(self) -> Mixture:
        return _mixture_from_leaves(self.tree.leaves())


def group_splitter(g: FactorGraph, sched: TemperatureSchedule,
                   cfg: SolverConfig, split: SplitConfig,
                   rng: np.random.Generator | None = None) -> Splitter:
    """Entropy-gap group selection under the leaf's accumulated constraints."""

    def _split(node: TreeNode, path: tuple[CardinalityClause, ...]):
        swp = sweep(g, sched, path, cfg, init=node.solution.q)
        sel = select_clamp_group(
            swp, g, h_high=split.h_high, h_low=split.h_low,
            grouping_radius=split.grouping_radius, seed_mode=split.seed_mode, rng=rng)
        if sel is None or not sel.members:
            return None
        members = tuple(zip(sel.members, sel.values))
        return CardinalityClause(members, split.threshold_for(len(members)),
                                 AT_LEAST, split.epsilon)

    return _split


def maxw_splitter(g: FactorGraph, epsilon: float = 1e-4) -> Splitter:
    """One variable per split, picked by total absolute incident weight."""

    def _split(node: TreeNode, path: tuple[CardinalityClause, ...]):
        clamped = {v for c in path for v, _ in c.members}
        if len(clamped) >= g.num_vars:
            return None
        var = maxw_select(g, clamped)
        value = int(np.argmax(node.solution.q[var]))
        return CardinalityClause(((var, value),), 1, AT_LEAST, epsilon)

    return _split


def entropy_gap_splitter(g: FactorGraph, sched: TemperatureSchedule,
                         cfg: SolverConfig, split: SplitConfig,
                         rng: np.random.Generator | None = None) -> Splitter:
    """One variable per split: the maximum entropy-gap candidate (radius 0)."""
    single = SplitConfig(split.epsilon, split.h_low, split.h_high,
                         "all", 0, split.seed_mode)
    return group_splitter(g, sched, cfg, single, rng)


def build_mmmf(g: FactorGraph, target_modes: int,
               sched: TemperatureSchedule | None = None,
               cfg: SolverConfig = SolverConfig(),
               split: SplitConfig = SplitConfig(),
               rng: np.random.Generator | None = None,
               init=None) -> tuple[ModeTree, Mixture]:
    """Grow the clause tree breadth-first to ``target_modes`` leaves.

    Stopping early because no leaf flags a transition anywhere in the
    schedule is a normal outcome; the returned mixture then has fewer
    modes. With ``target_modes`` = 1 this is exactly the unconstrained
    solve.
    """
    sched = TemperatureSchedule.geometric() if sched is None else sched
    builder = ModeTreeBuilder(g, group_splitter(g, sched, cfg, split, rng),
                              cfg, init=init, rng=rng)
    builder.grow_to(target_modes)
    return builder.tree, builder.mixture()


def single_var_clamp_tree(g: FactorGraph, target_modes: int,
                          cfg: SolverConfig = SolverConfig(), *,
                          selector: str = "maxw",
                          sched: TemperatureSchedule | None = None,
                          split: SplitConfig = SplitConfig(),
                          rng: np.random.Generator | None = None,
                          init=None) -> tuple[ModeTree, Mixture]:
    """Baseline trees that clamp one binary variable per split.

    ``selector`` is "maxw" (largest incident weight) or "entropy_gap"
    (maximum-gap transition candidate).
    """
    if g.num_labels != 2:
        raise ValueError("single-variable clamping baselines expect binary labels")
    if selector == "maxw":
        splitter = maxw_splitter(g, split.epsilon)
    elif selector == "entropy_gap":
        sched = TemperatureSchedule.geometric() if sched is None else sched
        splitter = entropy_gap_splitter(g, sched, cfg, split, rng)
    else:
        raise ValueError(f"unknown selector {selector!r}")
    builder = ModeTreeBuilder(g, splitter, cfg, init=init, rng=rng)
    builder.grow_to(target_modes)
    return builder.tree, builder.mixture()


def mode_map(mix: Mixture, k: int) -> np.ndarray:
    """Per-variable argmax labeling of mode k; ties go to the lowest label."""
    return np.argmax(mix.modes[k].q, axis=1)


def mixture_kl_exact(g: FactorGraph, mix: Mixture, cap: int | None = None) -> float:
    """KL(mixture || exact posterior) by full enumeration."""
    energies = state_energies(g, cap)
    labels = all_labelings(g.num_vars, g.num_labels, cap)
    idx = np.arange(g.num_vars)
    log_q = np.full(energies.shape[0], -np.inf)
    for mode in mix.modes:
        logs = np.log(np.maximum(mode.q, 1e-300))
        log_qk = logs[idx, labels].sum(axis=1)
        if mode.weight > 0:
            log_q = np.logaddexp(log_q, math.log(mode.weight) + log_qk)
    q_mm = np.exp(log_q)
    log_z = _logsumexp(-energies)
    finite = q_mm > 0
    kl = float((q_mm[finite] * (log_q[finite] + energies[finite])).sum()) + log_z
    return kl


def _logsumexp(v: np.ndarray) -> float:
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def cell_mass(g: FactorGraph, q: np.ndarray,
              clauses: Sequence[CardinalityClause]) -> float:
    """Probability the product law ``q`` assigns to the cell cut out by
    ``clauses`` (enumeration; intended for small diagnostic checks)."""
    labels = all_labelings(g.num_vars, g.num_labels)
    idx = np.arange(g.num_vars)
    probs = q[idx, labels].prod(axis=1)
    mask = np.ones(labels.shape[0], dtype=bool)
    for c in clauses:
        mask &= np.array([satisfies(x, c) for x in labels])
    return float(probs[mask].sum())


def _clause_doc(c: CardinalityClause) -> dict:
    return {
        "members": [[v, l] for v, l in c.members],
        "C": c.threshold,
        "dir": c.direction,
        "eps": c.epsilon,
    }


def _clause_from_doc(doc) -> CardinalityClause:
    return CardinalityClause(tuple((v, l) for v, l in doc["members"]),
                             doc["C"], doc["dir"], doc["eps"])


def mixture_to_doc(tree: ModeTree, mix: Mixture) -> dict:
    """JSON document: internal nodes with their clauses in tree order, one
    leaf record per mode. Parent/child indices make the round trip lossless."""
    nodes = []
    for n in tree.nodes:
        if n.split is None:
            continue
        nodes.append({
            "index": n.index,
            "parent": n.parent,
            "children": list(n.children),
            "clause": _clause_doc(n.split),
        })
    leaves = []
    for leaf, mode in zip(tree.leaves(), mix.modes):
        leaves.append({
            "index": leaf.index,
            "parent": leaf.parent,
            "A": mode.a,
            "m": mode.weight,
            "feasible": mode.feasible,
            "marginals": mode.q.tolist(),
        })
    return {"nodes": nodes, "leaves": leaves, "log_z_tilde": mix.log_z_tilde}


def mixture_from_doc(doc) -> Mixture:
    modes = tuple(
        Mode(np.asarray(leaf["marginals"], dtype=np.float64),
             float(leaf["m"]), float(leaf["A"]), bool(leaf["feasible"]))
        for leaf in doc["leaves"]
    )
    return Mixture(modes, float(doc["log_z_tilde"]))


def clauses_from_doc(doc) -> list[CardinalityClause]:
    return [_clause_from_doc(n["clause"]) for n in doc["nodes"]]


def save_mixture(tree: ModeTree, mix: Mixture, fp: IO[str] | str) -> None:
    doc = mixture_to_doc(tree, mix)
    if isinstance(fp, str):
        with open(fp, "w", encoding="utf-8") as f:
            json.dump(doc, f)
    else:
        json.dump(doc, fp)


def load_mixture(fp: IO[str] | str) -> tuple[dict, Mixture]:
    """Returns the raw document (tree structure included) and the mixture."""
    if isinstance(fp, str):
        with open(fp, "r", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        doc = json.load(fp)
    return doc, mixture_from_doc(doc)
