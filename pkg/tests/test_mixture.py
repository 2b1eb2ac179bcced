import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crfmix.bench import gen_toy_grid
from crfmix.cardinality import violation_prob_exact
from crfmix.graphs import Edge, FactorGraph, exact_log_z
from crfmix.meanfield import SolverConfig, mf_solve, uniform_init
from crfmix.mixture import (Mixture, Mode, SplitConfig, build_mmmf, cell_mass,
                            load_mixture, log_z_tilde, mixture_kl_exact,
                            mixture_weights, mode_map, save_mixture,
                            single_var_clamp_tree)
from crfmix.selection import TemperatureSchedule
from crfmix import seeding

from conftest import potts, random_binary_graph


def ferromagnet_grid(side, w):
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                edges.append(Edge(i, i + 1, potts(w)))
            if r + 1 < side:
                edges.append(Edge(i, i + side, potts(w)))
    return FactorGraph(np.zeros((side * side, 2)), tuple(edges))


def test_mixture_weights_equal():
    assert np.allclose(mixture_weights([1.3] * 4), 0.25, atol=1e-12)


def test_mixture_weights_exact_softmax():
    w = mixture_weights([0.0, math.log(3)])
    assert np.allclose(w, [0.25, 0.75], atol=1e-12)


@given(st.floats(-50, 50))
@settings(max_examples=40)
def test_mixture_weights_shift_invariant(shift):
    a = np.array([0.3, -1.2, 4.0])
    assert np.allclose(mixture_weights(a), mixture_weights(a + shift), atol=1e-12)


def test_mixture_weights_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        mixture_weights([])
    with pytest.raises(ValueError):
        mixture_weights([np.inf, 0.0])


def test_log_z_tilde_single_and_equal_pair():
    assert log_z_tilde([2.5]) == pytest.approx(2.5, abs=1e-12)
    assert log_z_tilde([2.5, 2.5]) == pytest.approx(2.5 + math.log(2), abs=1e-12)


def test_build_mmmf_single_mode_is_plain_mf():
    rng = np.random.default_rng(0)
    g = random_binary_graph(rng, 5)
    init = uniform_init(g, rng)
    cfg = SolverConfig()
    tree, mix = build_mmmf(g, 1, cfg=cfg, init=init)
    res = mf_solve(g, init, cfg)
    assert len(mix.modes) == 1
    assert mix.modes[0].weight == 1.0
    assert mix.log_z_tilde == res.free_energy
    assert np.array_equal(mix.modes[0].q, res.q)


def test_build_mmmf_symmetric_ferromagnet_equal_modes():
    g = ferromagnet_grid(3, 2.5)
    rng = seeding.stream(0, "test-sym")
    sched = TemperatureSchedule.geometric(16.0, 10)
    tree, mix = build_mmmf(g, 2, sched, SolverConfig(), SplitConfig(), rng=rng)
    assert len(mix.modes) == 2
    a = [m.a for m in mix.modes]
    assert abs(a[0] - a[1]) <= 1e-4
    assert mix.modes[0].weight == pytest.approx(0.5, abs=1e-3)
    m0, m1 = mode_map(mix, 0), mode_map(mix, 1)
    assert np.array_equal(m0, 1 - m1)  # fully complementary polarizations


def test_build_mmmf_unsplittable_reports_fewer_modes():
    # Dominant unaries: no transition below T_max, so the tree cannot split.
    g = FactorGraph(np.array([[0.0, 40.0]] * 3),
                    (Edge(0, 1, potts(0.1)), Edge(1, 2, potts(0.1))))
    tree, mix = build_mmmf(g, 4, TemperatureSchedule.geometric(6.0, 4),
                           rng=np.random.default_rng(1))
    assert len(mix.modes) == 1
    assert tree.nodes[0].terminal


def test_mixture_invariants_weights_consistent(rng):
    g = random_binary_graph(rng, 5, w_hi=4.0)
    sched = TemperatureSchedule.geometric(12.0, 8)
    tree, mix = build_mmmf(g, 3, sched, SolverConfig(), SplitConfig(), rng=rng)
    a = np.array([m.a for m in mix.modes])
    w = np.array([m.weight for m in mix.modes])
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w >= 0)
    assert np.allclose(w, np.exp(a - mix.log_z_tilde), atol=1e-12)
    leaves = tree.leaves()
    internal = [n for n in tree.nodes if n.children is not None]
    assert len(leaves) == len(internal) + 1


def test_path_clauses_match_constraints(rng):
    g = random_binary_graph(rng, 6, w_hi=4.0)
    sched = TemperatureSchedule.geometric(12.0, 8)
    tree, mix = build_mmmf(g, 4, sched, SolverConfig(), SplitConfig(), rng=rng)
    for leaf in tree.leaves():
        path = tree.path_clauses(leaf.index)
        assert len(leaf.solution.duals) == len(path)
        node = leaf
        seen = []
        while node.parent is not None:
            parent = tree.nodes[node.parent]
            expected = parent.split if parent.children[0] == node.index else None
            if expected is not None:
                assert node.clause_from_parent == expected
            seen.append(node.clause_from_parent)
            node = parent
        assert tuple(reversed(seen)) == path


def test_near_disjointness_invariants(rng):
    g = random_binary_graph(rng, 5, w_hi=4.0)
    sched = TemperatureSchedule.geometric(12.0, 8)
    tree, mix = build_mmmf(g, 4, sched, SolverConfig(), SplitConfig(), rng=rng)
    leaves = tree.leaves()
    for leaf, mode in zip(leaves, mix.modes):
        if not mode.feasible:
            continue
        for c in tree.path_clauses(leaf.index):
            assert violation_prob_exact(mode.q, c) <= c.epsilon * (1 + 1e-6)
    # sibling-descended leaves place at most eps * depth mass on each other's cell
    for leaf, mode in zip(leaves, mix.modes):
        if not mode.feasible:
            continue
        depth = len(tree.path_clauses(leaf.index))
        for other, other_mode in zip(leaves, mix.modes):
            if other is leaf or not other_mode.feasible:
                continue
            mass = cell_mass(g, other_mode.q, tree.path_clauses(leaf.index))
            assert mass <= max(depth, 1) * 1e-4 * (1 + 1e-6)


def test_build_mmmf_deterministic(rng_seed=123):
    g = random_binary_graph(np.random.default_rng(5), 5, w_hi=4.0)
    sched = TemperatureSchedule.geometric(12.0, 8)

    def run():
        rng = seeding.stream(rng_seed, "determinism")
        return build_mmmf(g, 3, sched, SolverConfig(), SplitConfig(), rng=rng)

    t1, m1 = run()
    t2, m2 = run()
    assert len(t1.nodes) == len(t2.nodes)
    for n1, n2 in zip(t1.nodes, t2.nodes):
        assert n1.split == n2.split
        assert np.array_equal(n1.solution.q, n2.solution.q)
    assert m1.log_z_tilde == m2.log_z_tilde
    assert [m.weight for m in m1.modes] == [m.weight for m in m2.modes]


def test_mixture_bound_on_enumerable_graphs(rng):
    slack = 10 * 4 * 1e-4 * math.log(1e4)
    for _ in range(5):
        g = random_binary_graph(rng, 5, w_hi=4.0)
        sched = TemperatureSchedule.geometric(12.0, 8)
        tree, mix = build_mmmf(g, 4, sched, SolverConfig(), SplitConfig(), rng=rng)
        if not all(m.feasible for m in mix.modes):
            continue
        assert mix.log_z_tilde <= exact_log_z(g) + slack


def test_mixture_kl_exact_single_mode_edgeless():
    g = FactorGraph(np.array([[0.0, 1.0], [0.5, 0.0]]))
    res = mf_solve(g, uniform_init(g, noise=0.0), SolverConfig(damping=0.0))
    mix = Mixture((Mode(res.q, 1.0, res.free_energy),), res.free_energy)
    assert mixture_kl_exact(g, mix) == pytest.approx(0.0, abs=1e-9)


def test_mixture_kl_nonnegative(rng):
    for _ in range(10):
        g = random_binary_graph(rng, 4)
        q1 = rng.dirichlet((1, 1), size=4)
        q2 = rng.dirichlet((1, 1), size=4)
        mix = Mixture((Mode(q1, 0.4, 0.0), Mode(q2, 0.6, 0.0)), 0.0)
        assert mixture_kl_exact(g, mix) >= -1e-12


def test_mode_map_ties_to_lowest_label():
    q = np.array([[0.5, 0.5], [0.2, 0.8]])
    mix = Mixture((Mode(q, 1.0, 0.0),), 0.0)
    assert mode_map(mix, 0).tolist() == [0, 1]


def test_single_var_clamp_tree_two_vars_recomposes_log_z():
    # With one-variable leaves the clamped solves are exact, so the two
    # leaf free energies recompose the partition function as eps -> 0.
    g = FactorGraph(np.array([[0.3, -0.4], [-1.0, 0.2]]),
                    (Edge(0, 1, np.array([[0.5, -1.2], [0.7, 0.1]])),))
    tree, mix = single_var_clamp_tree(g, 2, SolverConfig(tol=1e-10, max_sweeps=2000),
                                      split=SplitConfig(epsilon=1e-6),
                                      rng=np.random.default_rng(3))
    assert len(mix.modes) == 2
    clamped = tree.nodes[0].split.members[0][0]
    from crfmix.selection import maxw_select

    assert clamped == maxw_select(g)
    assert mix.log_z_tilde == pytest.approx(exact_log_z(g), abs=1e-4)


def test_single_var_clamp_tree_single_mode_is_mf():
    rng = np.random.default_rng(4)
    g = random_binary_graph(rng, 4)
    init = uniform_init(g, rng)
    tree, mix = single_var_clamp_tree(g, 1, init=init)
    res = mf_solve(g, init)
    assert mix.log_z_tilde == res.free_energy


def test_single_var_clamp_tree_star_clamps_hub_first():
    edges = tuple(Edge(0, leaf, potts(1.0)) for leaf in range(1, 6))
    g = FactorGraph(np.zeros((6, 2)), edges)
    tree, mix = single_var_clamp_tree(g, 2, rng=np.random.default_rng(5))
    assert tree.nodes[0].split.members[0][0] == 0


def test_single_var_clamp_tree_entropy_selector():
    g = ferromagnet_grid(3, 2.5)
    sched = TemperatureSchedule.geometric(16.0, 10)
    tree, mix = single_var_clamp_tree(g, 2, selector="entropy_gap", sched=sched,
                                      rng=seeding.stream(1, "entropy-sel"))
    assert len(mix.modes) == 2
    assert len(tree.nodes[0].split.members) == 1


def test_single_var_clamp_tree_requires_binary():
    g = FactorGraph(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        single_var_clamp_tree(g, 2)


def test_mixture_serialization_roundtrip(rng):
    g = random_binary_graph(rng, 5, w_hi=4.0)
    sched = TemperatureSchedule.geometric(12.0, 8)
    tree, mix = build_mmmf(g, 3, sched, SolverConfig(), SplitConfig(), rng=rng)
    buf = io.StringIO()
    save_mixture(tree, mix, buf)
    doc, mix2 = load_mixture(io.StringIO(buf.getvalue()))
    assert mix2.log_z_tilde == mix.log_z_tilde
    assert len(mix2.modes) == len(mix.modes)
    for m1, m2 in zip(mix.modes, mix2.modes):
        assert m1.weight == m2.weight
        assert m1.a == m2.a
        assert m1.feasible == m2.feasible
        assert np.array_equal(m1.q, m2.q)
    from crfmix.mixture import clauses_from_doc

    restored = clauses_from_doc(doc)
    originals = [n.split for n in tree.nodes if n.split is not None]
    assert restored == originals
