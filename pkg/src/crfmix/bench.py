"""Random instance generators, experiment driver, and CSV output.

Generators follow the standard random-weight protocol: binary labels,
Potts-style pairwise tables with weights drawn from [0, 6] (attractive) or
[-6, 6] (mixed), one unary draw from [-2, 2] per variable carried on label
0. Random topologies reuse the grid's edge count.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import IO, Sequence

import numpy as np

from . import seeding
from .graphs import DEFAULT_STATE_CAP, Edge, FactorGraph, exact_log_z, temper
from .meanfield import SolverConfig, mf_solve, uniform_init
from .mixture import SplitConfig, ModeTreeBuilder, entropy_gap_splitter, group_splitter, maxw_splitter
from .selection import TemperatureSchedule

METHODS = ("mmmf_ours_m", "mmmf_ours_r", "base_maxw", "entropy_single")

CSV_COLUMNS = ("instance_id", "seed", "topology", "coupling", "side", "method",
               "K", "log_z_tilde", "exact_log_z", "kl_gap", "feasible_leaves",
               "wall_ms")


@dataclass(frozen=True)
class GenSpec:
    topology: str = "grid"
    side: int = 4
    coupling: str = "mixed"
    pairwise_hi: float = 6.0
    unary_hi: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.topology not in ("grid", "random"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.coupling not in ("attractive", "mixed"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.side < 2:
            raise ValueError("side must be at least 2")


def _potts(w: float) -> np.ndarray:
    return np.array([[0.0, w], [w, 0.0]])


def grid_edge_pairs(side: int) -> list[tuple[int, int]]:
    pairs = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                pairs.append((i, i + 1))
            if r + 1 < side:
                pairs.append((i, i + side))
    return pairs


def gen_crf(spec: GenSpec) -> FactorGraph:
    """Binary random CRF, deterministic per spec seed."""
    rng = seeding.stream(spec.seed, "gen-crf")
    n = spec.side * spec.side
    unaries = np.zeros((n, 2))
    unaries[:, 0] = rng.uniform(-spec.unary_hi, spec.unary_hi, size=n)
    n_edges = 2 * spec.side * (spec.side - 1)
    if spec.topology == "grid":
        pairs = grid_edge_pairs(spec.side)
    else:
        all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        chosen = rng.choice(len(all_pairs), size=n_edges, replace=False)
        pairs = [all_pairs[k] for k in sorted(chosen)]
    lo = 0.0 if spec.coupling == "attractive" else -spec.pairwise_hi
    weights = rng.uniform(lo, spec.pairwise_hi, size=len(pairs))
    edges = tuple(Edge(i, j, _potts(w)) for (i, j), w in zip(pairs, weights))
    return FactorGraph(unaries, edges)


def gen_toy_grid(side: int = 16, strong_w: float = 4.0, weak_w: float = 0.5,
                 bias: float = 2.0, seed: int = 0) -> FactorGraph:
    """Four-zone grid: attractive couplings weak on the left half and strong
    on the right; unaries favor label 1 in the top half and are drawn
    i.i.d. from [-bias, bias] in the bottom.

    Couplings are zoned per quadrant: an edge is strong only when both
    endpoints sit in the same right-half quadrant, so the ambiguous
    bottom-right block is only weakly tied to its neighbors and its two
    polarizations stay comparably likely.
    """
    if side % 2:
        raise ValueError("side must be even")
    rng = seeding.stream(seed, "gen-toy")
    half = side // 2
    n = side * side
    unaries = np.zeros((n, 2))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if r < half:
                unaries[i, 0] = bias  # label 1 favored
            else:
                unaries[i, 0] = rng.uniform(-bias, bias)
    edges = []
    for i, j in grid_edge_pairs(side):
        r1, c1 = divmod(i, side)
        r2, c2 = divmod(j, side)
        right = c1 >= half and c2 >= half
        same_row_half = (r1 < half) == (r2 < half)
        w = strong_w if (right and same_row_half) else weak_w
        edges.append(Edge(i, j, _potts(w)))
    return FactorGraph(unaries, tuple(edges))


@dataclass(frozen=True)
class ExperimentRow:
    instance_id: str
    seed: int
    topology: str
    coupling: str
    side: int
    method: str
    modes: int
    log_z_tilde: float | None
    exact_log_z: float | None
    kl_gap: float | None
    feasible_leaves: int
    wall_ms: float


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow]

    def to_csv(self, fp: IO[str] | str, include_timing: bool = False) -> None:
        """One row per (instance, method, K). ``wall_ms`` is written as 0
        unless timing is requested, keeping equal-seed runs byte-identical."""
        def _write(f):
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in sorted(self.rows, key=lambda r: (r.instance_id, r.method, r.modes)):
                writer.writerow([
                    r.instance_id, r.seed, r.topology, r.coupling, r.side,
                    r.method, r.modes,
                    "" if r.log_z_tilde is None else repr(r.log_z_tilde),
                    "" if r.exact_log_z is None else repr(r.exact_log_z),
                    "" if r.kl_gap is None else repr(r.kl_gap),
                    r.feasible_leaves,
                    repr(r.wall_ms) if include_timing else 0,
                ])

        if isinstance(fp, str):
            with open(fp, "w", encoding="utf-8", newline="") as f:
                _write(f)
        else:
            _write(fp)


def _builder_for(method: str, g: FactorGraph, sched: TemperatureSchedule,
                 cfg: SolverConfig, split: SplitConfig,
                 rng: np.random.Generator, init: np.ndarray) -> ModeTreeBuilder:
    if method == "mmmf_ours_m":
        splitter = group_splitter(g, sched, cfg, split, rng)
    elif method == "mmmf_ours_r":
        splitter = group_splitter(g, sched, cfg, replace(split, seed_mode="random"), rng)
    elif method == "base_maxw":
        splitter = maxw_splitter(g, split.epsilon)
    elif method == "entropy_single":
        splitter = entropy_gap_splitter(g, sched, cfg, split, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ModeTreeBuilder(g, splitter, cfg, init=init, rng=rng)


def annealed_init(g: FactorGraph, sched: TemperatureSchedule,
                  cfg: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    """Warm-started descent through the schedule down to T = 1.

    Solving hottest-first and reusing each solution as the next start lands
    the base field in a dominant basin instead of whichever one the init
    noise happens to pick, so mode-count comparisons measure clamping
    strategies rather than initialization luck.
    """
    q = uniform_init(g, rng)
    for t in reversed(sched.temps):
        q = mf_solve(temper(g, t), q, cfg).q
    return q


def _run_instance(args):
    (spec, methods, k_list, cfg, split, sched, cap, master_seed, index) = args
    instance_id = f"{spec.topology}-{spec.coupling}-{spec.side}-{index:04d}"
    g = gen_crf(spec)
    exact = None
    if g.num_states <= cap:
        exact = exact_log_z(g, cap)
    rows = []
    # One shared init per instance so every method starts from the same
    # field and K = 1 rows coincide across methods.
    init = annealed_init(g, sched, cfg,
                         seeding.stream(master_seed, "bench-init", index))
    for method in methods:
        rng = seeding.stream(master_seed, "bench-run", index, method)
        start = time.perf_counter()
        try:
            builder = _builder_for(method, g, sched, cfg, split, rng, init)
            for k in sorted(k_list):
                builder.grow_to(k)
                mix = builder.mixture()
                wall_ms = (time.perf_counter() - start) * 1e3
                lzt = mix.log_z_tilde
                gap = None if exact is None else exact - lzt
                feas = sum(1 for m in mix.modes if m.feasible)
                rows.append(ExperimentRow(instance_id, spec.seed, spec.topology,
                                          spec.coupling, spec.side, method, k,
                                          lzt, exact, gap, feas, wall_ms))
        except Exception:  # record the failed cells, keep the batch going
            done = {r.modes for r in rows if r.method == method}
            for k in sorted(k_list):
                if k in done:
                    continue
                wall_ms = (time.perf_counter() - start) * 1e3
                rows.append(ExperimentRow(instance_id, spec.seed, spec.topology,
                                          spec.coupling, spec.side, method, k,
                                          None, exact, None, 0, wall_ms))
    return rows


def default_specs(trials: int, side: int = 4, topology: str = "grid",
                  coupling: str = "mixed", master_seed: int = 0) -> list[GenSpec]:
    return [
        GenSpec(topology, side, coupling,
                seed=seeding.substream_seed(master_seed, "bench-instance", t))
        for t in range(trials)
    ]


def run_benchmark(specs: Sequence[GenSpec], methods: Sequence[str],
                  k_list: Sequence[int], *,
                  cfg: SolverConfig = SolverConfig(),
                  split: SplitConfig = SplitConfig(),
                  sched: TemperatureSchedule | None = None,
                  cap: int = DEFAULT_STATE_CAP,
                  master_seed: int = 0,
                  jobs: int = 1) -> ExperimentResult:
    """Build nested trees for every (instance, method, K) cell.

    Larger K extends the smaller K's tree for the same instance and method.
    ``kl_gap`` is reported only where the instance is small enough for the
    exact oracle. Instances are independent and may fan out over processes.
    """
    if not methods:
        raise ValueError("need at least one method")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    sched = TemperatureSchedule.geometric() if sched is None else sched
    tasks = [(spec, tuple(methods), tuple(k_list), cfg, split, sched, cap,
              master_seed, i) for i, spec in enumerate(specs)]
    rows: list[ExperimentRow] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_run_instance, tasks):
                rows.extend(chunk)
    else:
        for task in tasks:
            rows.extend(_run_instance(task))
    rows.sort(key=lambda r: (r.instance_id, r.method, r.modes))
    return ExperimentResult(rows)
