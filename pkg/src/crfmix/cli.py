"""Command-line surface.

Verbs: gen, mf, mmmf, bench, tc-scan, temporal, oracle. Global knobs
(seed, epsilon, entropy thresholds, temperature range, solver settings)
share one name set across verbs; ``--config FILE`` supplies defaults from
JSON and explicit flags win over the file. Exit codes: 0 success, 1 usage,
2 solver or infeasibility failure. Data goes to files or stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import seeding
from .bench import ExperimentResult, GenSpec, default_specs, run_benchmark
from .cardinality import InfeasibleClausesError
from .graphs import (DenseGaussianSpec, EnumerationCapError, FactorGraph,
                     exact_log_z, exact_marginals, load_graph, save_graph)
from .meanfield import SolverConfig, mf_solve, uniform_init
from .mixture import (SplitConfig, build_mmmf, load_mixture, mixture_kl_exact,
                      save_mixture)
from .selection import TemperatureSchedule, critical_temperature, sweep
from .temporal import best_mode_sequence, load_problem

GLOBAL_DEFAULTS = {
    "seed": 0,
    "epsilon": 1e-4,
    "h_low": 0.3,
    "h_high": 0.7,
    "t_max": 8.0,
    "t_steps": 8,
    "damping": 0.5,
    "tol": 1e-6,
    "max_sweeps": 500,
    "output": None,
}


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_globals(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of default option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--h-low", dest="h_low", type=float)
    p.add_argument("--h-high", dest="h_high", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-steps", dest="t_steps", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--output", "-o")


def build_parser() -> _Parser:
    parser = _Parser(prog="crfmix",
                     description="Mixture-of-mean-fields inference for discrete CRFs")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="write a random CRF as JSON")
    p.add_argument("--topology", choices=("grid", "random"), default="grid")
    p.add_argument("--side", type=int, default=4)
    p.add_argument("--coupling", choices=("attractive", "mixed"), default="mixed")
    _add_globals(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("mf", help="solve a single factorized field")
    p.add_argument("--graph", required=True)
    _add_globals(p)
    p.set_defaults(func=_cmd_mf)

    p = sub.add_parser("mmmf", help="build a mode tree and mixture")
    p.add_argument("--graph", required=True)
    p.add_argument("--modes", type=int, default=2)
    p.add_argument("--threshold-policy", choices=("all", "one", "half"), default="all")
    p.add_argument("--grouping-radius", type=int, default=None)
    p.add_argument("--seed-mode", choices=("max_gap", "random"), default="max_gap")
    _add_globals(p)
    p.set_defaults(func=_cmd_mmmf)

    p = sub.add_parser("bench", help="random-CRF benchmark, CSV output")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--side", type=int, default=4)
    p.add_argument("--topology", choices=("grid", "random"), default="grid")
    p.add_argument("--coupling", choices=("attractive", "mixed"), default="mixed")
    p.add_argument("--methods", default="mmmf_ours_m")
    p.add_argument("--k-list", dest="k_list", default="1,2,4")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="record real wall times (output no longer deterministic)")
    _add_globals(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("tc-scan", help="per-temperature entropy statistics CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph")
    src.add_argument("--gamma", type=float)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--theta-rgb", dest="theta_rgb", type=float, default=1.0)
    p.add_argument("--unary-bias", dest="unary_bias", type=float, default=0.0)
    _add_globals(p)
    p.set_defaults(func=_cmd_tc_scan)

    p = sub.add_parser("temporal", help="best mode sequence for a problem JSON")
    p.add_argument("--problem", required=True)
    _add_globals(p)
    p.set_defaults(func=_cmd_temporal)

    p = sub.add_parser("oracle", help="exact log Z / marginals / mixture KL")
    p.add_argument("--graph", required=True)
    p.add_argument("--mixture")
    p.add_argument("--cap", type=int, default=None)
    _add_globals(p)
    p.set_defaults(func=_cmd_oracle)

    return parser


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset globals from --config, then from the built-in defaults."""
    from_file = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            from_file = json.load(f)
        unknown = set(from_file) - set(GLOBAL_DEFAULTS)
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
    explicit = {key for key in GLOBAL_DEFAULTS if getattr(args, key, None) is not None}
    if "output" in from_file or args.output is not None:
        explicit.add("output")
    args.explicit = explicit | set(from_file)
    for key, default in GLOBAL_DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, from_file.get(key, default))
    return args


def _solver_config(args) -> SolverConfig:
    return SolverConfig(max_sweeps=args.max_sweeps, damping=args.damping,
                        tol=args.tol)


def _out_stream(args):
    if args.output:
        return open(args.output, "w", encoding="utf-8", newline="")
    return sys.stdout


def _print_field(q: np.ndarray, out) -> None:
    for row in q:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")


def _cmd_gen(args) -> int:
    spec = GenSpec(args.topology, args.side, args.coupling, seed=args.seed)
    from .bench import gen_crf

    g = gen_crf(spec)
    out = _out_stream(args)
    try:
        save_graph(g, out)
        out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_mf(args) -> int:
    g = load_graph(args.graph)
    rng = seeding.stream(args.seed, "init")
    res = mf_solve(g, uniform_init(g, rng), _solver_config(args))
    out = _out_stream(args)
    try:
        out.write(f"free_energy {res.free_energy!r}\n")
        out.write(f"converged {res.converged} sweeps {res.sweeps}\n")
        _print_field(res.q, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_mmmf(args) -> int:
    g = load_graph(args.graph)
    rng = seeding.stream(args.seed, "init")
    sched = TemperatureSchedule.geometric(args.t_max, args.t_steps)
    split = SplitConfig(epsilon=args.epsilon, h_low=args.h_low, h_high=args.h_high,
                        threshold_policy=args.threshold_policy,
                        grouping_radius=args.grouping_radius,
                        seed_mode=args.seed_mode)
    tree, mix = build_mmmf(g, args.modes, sched, _solver_config(args), split, rng)
    sys.stdout.write(f"log_z_tilde {mix.log_z_tilde!r}\n")
    sys.stdout.write(f"modes {len(mix.modes)}\n")
    if args.output:
        save_mixture(tree, mix, args.output)
    else:
        save_mixture(tree, mix, sys.stdout)
        sys.stdout.write("\n")
    return 0


def _cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    k_list = [int(k) for k in args.k_list.split(",") if k.strip()]
    specs = default_specs(args.trials, args.side, args.topology, args.coupling,
                          master_seed=args.seed)
    sched = TemperatureSchedule.geometric(args.t_max, args.t_steps)
    split = SplitConfig(epsilon=args.epsilon, h_low=args.h_low, h_high=args.h_high)
    result = run_benchmark(specs, methods, k_list, cfg=_solver_config(args),
                           split=split, sched=sched, master_seed=args.seed,
                           jobs=args.jobs)
    out = _out_stream(args)
    try:
        result.to_csv(out, include_timing=args.timing)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_tc_scan(args) -> int:
    if args.graph:
        g = load_graph(args.graph)
        t_max = args.t_max
    else:
        spec = DenseGaussianSpec(args.side, args.gamma, args.sigma,
                                 args.theta_rgb, args.unary_bias)
        from .graphs import expand_dense_gaussian

        g = expand_dense_gaussian(spec)
        t_max = args.t_max if "t_max" in args.explicit else 1.2 * critical_temperature(spec)
        if t_max <= 1.0:
            raise _UsageError("derived t_max is not above 1; pass --t-max explicitly")
    sched = TemperatureSchedule.geometric(t_max, args.t_steps)
    rng = seeding.stream(args.seed, "init")
    rows = sweep(g, sched, (), _solver_config(args), rng=rng)
    out = _out_stream(args)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["T", "mean_entropy", "min_entropy", "max_entropy",
                         "p90_entropy"])
        for t, q in rows:
            h = -(q * np.log(np.maximum(q, 1e-12))).sum(axis=1)  # nats
            writer.writerow([repr(float(t)), repr(float(h.mean())),
                             repr(float(h.min())), repr(float(h.max())),
                             repr(float(np.percentile(h, 90)))])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_temporal(args) -> int:
    problem = load_problem(args.problem)
    seq, cost = best_mode_sequence(problem)
    out = _out_stream(args)
    try:
        out.write("sequence " + " ".join(str(k) for k in seq) + "\n")
        out.write(f"cost {cost!r}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_oracle(args) -> int:
    g = load_graph(args.graph)
    log_z = exact_log_z(g, args.cap)
    out = _out_stream(args)
    try:
        out.write(f"exact_log_z {log_z!r}\n")
        if args.mixture:
            _, mix = load_mixture(args.mixture)
            kl = mixture_kl_exact(g, mix, args.cap)
            out.write(f"mixture_kl {kl!r}\n")
            out.write(f"bound_gap {log_z - mix.log_z_tilde!r}\n")
        else:
            _print_field(exact_marginals(g, args.cap), out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InfeasibleClausesError, EnumerationCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
