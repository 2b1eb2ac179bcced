import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crfmix.graphs import Edge, FactorGraph, exact_log_z, exact_marginals
from crfmix.meanfield import (MFResult, SolverConfig, entropies, entropy,
                              free_energy, mf_solve, uniform_init,
                              validate_marginals)
from crfmix.selection import tanh_fixed_points

from conftest import potts, random_binary_graph


def deterministic_field(x, n_labels):
    q = np.zeros((len(x), n_labels))
    q[np.arange(len(x)), x] = 1.0
    return q


def test_free_energy_pure_entropy():
    g = FactorGraph(np.zeros((4, 2)))
    q = np.full((4, 2), 0.5)
    assert free_energy(g, q) == pytest.approx(4 * math.log(2), abs=1e-12)


def test_free_energy_deterministic_is_negative_energy(rng):
    from crfmix.graphs import energy

    for _ in range(5):
        g = random_binary_graph(rng, 4)
        x = rng.integers(0, 2, size=4)
        q = deterministic_field(x, 2)
        assert free_energy(g, q) == pytest.approx(-energy(g, x), abs=1e-9)


def test_free_energy_is_lower_bound(rng):
    # Variational bound against the enumeration oracle on a <= 16-state graph.
    g = random_binary_graph(rng, 4)
    log_z = exact_log_z(g)
    for _ in range(100):
        q = rng.dirichlet((1.0, 1.0), size=4)
        assert free_energy(g, q) <= log_z + 1e-12


def test_free_energy_rejects_bad_rows():
    g = FactorGraph(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        free_energy(g, np.array([[0.7, 0.7], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        free_energy(g, np.array([[1.0, 0.0]]))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(damping=1.0)
    with pytest.raises(ValueError):
        SolverConfig(floor=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_sweeps=0)


def test_mf_solve_edgeless_exact_in_one_sweep():
    g = FactorGraph(np.array([[0.0, 1.0], [2.0, 0.0], [0.3, -0.3]]))
    res = mf_solve(g, uniform_init(g, noise=0.0), SolverConfig(damping=0.0))
    expected = np.exp(-g.unaries)
    expected /= expected.sum(axis=1, keepdims=True)
    assert np.allclose(res.q, expected, atol=1e-12)
    assert res.free_energy == pytest.approx(exact_log_z(g), abs=1e-9)
    assert res.converged
    # exact marginals reached on factorized models
    assert np.allclose(res.q, exact_marginals(g), atol=1e-9)


def test_mf_solve_ferromagnet_below_critical_stays_uniform():
    # Pair coupling w gives the fixed point x = tanh(w x) / 2; below the
    # critical coupling w = 2 the only stable point is x = 0.
    g = FactorGraph(np.zeros((2, 2)), (Edge(0, 1, potts(1.5)),))
    init = uniform_init(g, np.random.default_rng(0), noise=1e-3)
    res = mf_solve(g, init, SolverConfig(max_sweeps=2000, tol=1e-10))
    assert np.abs(res.q - 0.5).max() < 1e-4


def test_mf_solve_ferromagnet_above_critical_polarizes():
    g = FactorGraph(np.zeros((2, 2)), (Edge(0, 1, potts(3.0)),))
    # expected polarization from the scalar fixed point, iterated numerically
    points = tanh_fixed_points(3.0, 0.0, 1.0)
    q_star = 0.5 + max(points)
    assert q_star > 0.9
    init = np.array([[0.55, 0.45], [0.55, 0.45]])
    res = mf_solve(g, init, SolverConfig(max_sweeps=2000, tol=1e-12, damping=0.3))
    assert res.q[0, 0] == pytest.approx(q_star, abs=1e-6)
    mirror = mf_solve(g, init[:, ::-1].copy(), SolverConfig(max_sweeps=2000, tol=1e-12, damping=0.3))
    assert mirror.q[0, 1] == pytest.approx(q_star, abs=1e-6)


def test_sweeps_monotone_without_damping(rng):
    # Each full sequential sweep with damping = 0 must not decrease the
    # objective (checked on 100 random small graphs).
    cfg = SolverConfig(damping=0.0, max_sweeps=1, tol=1e-300)
    for _ in range(100):
        g = random_binary_graph(rng, int(rng.integers(2, 6)))
        q = uniform_init(g, rng)
        prev = free_energy(g, q)
        for _ in range(5):
            q = mf_solve(g, q, cfg).q
            cur = free_energy(g, q)
            assert cur >= prev - 1e-9
            prev = cur


def test_mf_solve_rows_normalized_and_floored(rng):
    cfg = SolverConfig()
    for _ in range(10):
        g = random_binary_graph(rng, 5, w_hi=6.0, u_hi=4.0)
        res = mf_solve(g, uniform_init(g, rng), cfg)
        assert np.abs(res.q.sum(axis=1) - 1.0).max() <= 1e-9
        assert res.q.min() >= cfg.floor


def test_mf_free_energy_bounded_by_log_z(rng):
    for _ in range(20):
        g = random_binary_graph(rng, 5)
        res = mf_solve(g, uniform_init(g, rng))
        assert res.free_energy <= exact_log_z(g) + 1e-9


def test_mf_solve_reports_sweep_budget():
    g = FactorGraph(np.zeros((2, 2)), (Edge(0, 1, potts(3.0)),))
    res = mf_solve(g, uniform_init(g, np.random.default_rng(1)),
                   SolverConfig(max_sweeps=2, tol=1e-15))
    assert not res.converged
    assert res.sweeps == 2


def test_entropy_uniform_is_one():
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(1.0, abs=1e-12)
    assert entropy(np.full(5, 0.2)) == pytest.approx(1.0, abs=1e-12)


def test_entropy_deterministic_is_zero():
    assert entropy(np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(0.0, 0.49), st.floats(0.0, 0.49))
@settings(max_examples=50)
def test_entropy_decreasing_in_imbalance(d1, d2):
    lo, hi = sorted((d1, d2))
    h_hi = entropy(np.array([0.5 + lo, 0.5 - lo]))
    h_lo = entropy(np.array([0.5 + hi, 0.5 - hi]))
    assert h_lo <= h_hi + 1e-12


def test_entropy_rejects_invalid():
    with pytest.raises(ValueError):
        entropy(np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        entropy(np.array([1.0]))


def test_entropies_matches_rowwise():
    q = np.array([[0.5, 0.5], [0.9, 0.1]])
    h = entropies(q)
    assert h[0] == pytest.approx(entropy(q[0]), abs=1e-12)
    assert h[1] == pytest.approx(entropy(q[1]), abs=1e-12)


def test_validate_marginals_shape():
    g = FactorGraph(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        validate_marginals(g, np.full((3, 2), 0.5))
