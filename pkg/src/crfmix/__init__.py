"""crfmix: mixture-of-mean-fields inference for discrete CRFs.

Approximates a Gibbs distribution over discrete labelings by a weighted
mixture of fully factorized fields. The state space is carved up by count
constraints over groups of variables, groups are found by heating the
model until definite variables turn uncertain, and each cell gets its own
constrained coordinate-ascent solve. Exact enumeration oracles validate
everything at small sizes.
"""

from ._kernels import BACKEND_NAME
from .bench import ExperimentResult, ExperimentRow, GenSpec, gen_crf, gen_toy_grid, run_benchmark
from .cardinality import (CardinalityClause, ConstrainedResult, DualState,
                          InfeasibleClausesError, clause_complement,
                          constrained_mf_solve, satisfies,
                          violation_prob_exact, violation_prob_gaussian)
from .graphs import (DEFAULT_STATE_CAP, DenseGaussianSpec, Edge, EnumerationCapError,
                     FactorGraph, all_labelings, energy, exact_log_z, exact_marginals,
                     expand_dense_gaussian, load_graph, save_graph, state_energies,
                     temper)
from .meanfield import (MFResult, SolverConfig, entropies, entropy, free_energy,
                        mf_solve, uniform_init)
from .mixture import (Mixture, Mode, ModeTree, ModeTreeBuilder, SplitConfig,
                      build_mmmf, load_mixture, log_z_tilde, mixture_kl_exact,
                      mixture_weights, mode_map, save_mixture, single_var_clamp_tree)
from .selection import (ClampCandidate, GroupSelection, TemperatureSchedule,
                        critical_temperature, delta, deltas, empirical_transition,
                        maxw_select, select_clamp_group, sweep, tanh_fixed_points)
from .temporal import (ModeSequenceProblem, best_mode_sequence, load_problem,
                       map_disagreement_costs, mode_cost, save_problem)

__version__ = "0.1.0"
