"""Pick one mode per time step over a sequence of mixtures.

Mode choice costs come from the mixture weights as log((1 - m) / m);
transition costs between consecutive modes are supplied by the caller.
The best sequence minimizes the total by dynamic programming.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

_CLAMP = 1e-12


@dataclass(frozen=True)
class ModeSequenceProblem:
    """Per-step mode weights plus one (K_t x K_{t+1}) cost table per gap."""

    step_weights: tuple[np.ndarray, ...]
    transition_costs: tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.step_weights)
        costs = tuple(np.asarray(c, dtype=np.float64) for c in self.transition_costs)
        if not weights:
            raise ValueError("need at least one step")
        if len(costs) != len(weights) - 1:
            raise ValueError("need one transition table per consecutive step pair")
        for t, w in enumerate(weights):
            if w.ndim != 1 or w.size == 0:
                raise ValueError(f"step {t} weights must be a non-empty vector")
            if abs(w.sum() - 1.0) > 1e-6:
                raise ValueError(f"step {t} weights must sum to 1")
        for t, c in enumerate(costs):
            if c.shape != (weights[t].size, weights[t + 1].size):
                raise ValueError(f"transition table {t} has shape {c.shape}, "
                                 f"expected ({weights[t].size}, {weights[t + 1].size})")
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise ValueError(f"transition table {t} must be finite and nonnegative")
        object.__setattr__(self, "step_weights", weights)
        object.__setattr__(self, "transition_costs", costs)

    @property
    def num_steps(self) -> int:
        return len(self.step_weights)


def mode_cost(m: float) -> float:
    """log((1 - m) / m); decreasing in the mode weight, zero at 1/2.

    Weights at 0 or 1 are clamped into (0, 1) before the log and reported
    via a warning.
    """
    if not (0.0 <= m <= 1.0):
        raise ValueError("mode weight must lie in [0, 1]")
    if m <= 0.0 or m >= 1.0:
        warnings.warn(f"mode weight {m} clamped into (0, 1) for the log cost",
                      stacklevel=2)
        m = min(max(m, _CLAMP), 1.0 - _CLAMP)
    return math.log((1.0 - m) / m)


def best_mode_sequence(p: ModeSequenceProblem) -> tuple[list[int], float]:
    """Minimize the summed mode and transition costs by dynamic programming.

    Suffix costs run backward; the forward reconstruction takes the lowest
    mode index whenever continuations tie.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        node = [np.array([mode_cost(m) for m in w]) for w in p.step_weights]
    n = p.num_steps
    suffix = [None] * n
    suffix[n - 1] = node[n - 1]
    for t in range(n - 2, -1, -1):
        suffix[t] = node[t] + (p.transition_costs[t] + suffix[t + 1]).min(axis=1)
    seq = [int(np.argmin(suffix[0]))]
    for t in range(n - 1):
        follow = p.transition_costs[t][seq[-1]] + suffix[t + 1]
        seq.append(int(np.argmin(follow)))
    return seq, float(suffix[0][seq[0]])


def map_disagreement_costs(maps: Sequence[np.ndarray], weight: float = 1.0):
    """Stand-in transition costs: fraction of variables whose argmax labelings
    disagree between consecutive modes, scaled by ``weight``. ``maps[t]`` has
    one labeling per mode at step t, shape (K_t, num_vars)."""
    out = []
    for a, b in zip(maps, maps[1:]):
        a = np.asarray(a)
        b = np.asarray(b)
        cost = (a[:, None, :] != b[None, :, :]).mean(axis=2) * weight
        out.append(cost)
    return tuple(out)


def problem_to_doc(p: ModeSequenceProblem) -> dict:
    return {
        "steps": [{"weights": w.tolist()} for w in p.step_weights],
        "transition_costs": [c.tolist() for c in p.transition_costs],
    }


def problem_from_doc(doc) -> ModeSequenceProblem:
    weights = tuple(np.asarray(s["weights"], dtype=np.float64) for s in doc["steps"])
    costs = tuple(np.asarray(c, dtype=np.float64) for c in doc["transition_costs"])
    return ModeSequenceProblem(weights, costs)


def load_problem(fp: IO[str] | str) -> ModeSequenceProblem:
    if isinstance(fp, str):
        with open(fp, "r", encoding="utf-8") as f:
            return problem_from_doc(json.load(f))
    return problem_from_doc(json.load(fp))


def save_problem(p: ModeSequenceProblem, fp: IO[str] | str) -> None:
    if isinstance(fp, str):
        with open(fp, "w", encoding="utf-8") as f:
            json.dump(problem_to_doc(p), f)
    else:
        json.dump(problem_to_doc(p), fp)
