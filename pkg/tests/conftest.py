import itertools
import math

import numpy as np
import pytest

from crfmix.graphs import Edge, FactorGraph


def potts(w):
    return np.array([[0.0, w], [w, 0.0]])


def random_binary_graph(rng, n_vars, n_edges=None, w_hi=3.0, u_hi=1.5):
    """Small random pairwise binary CRF for oracle-backed tests."""
    unaries = rng.uniform(-u_hi, u_hi, size=(n_vars, 2))
    pairs = list(itertools.combinations(range(n_vars), 2))
    if n_edges is None:
        n_edges = min(len(pairs), 2 * n_vars)
    chosen = rng.choice(len(pairs), size=min(n_edges, len(pairs)), replace=False)
    edges = []
    for k in sorted(chosen):
        i, j = pairs[k]
        edges.append(Edge(i, j, rng.uniform(-w_hi, w_hi, size=(2, 2))))
    return FactorGraph(unaries, tuple(edges))


def brute_force_log_z(g):
    """Independent double-loop reference: outer loop over labelings, inner
    loop over factors, plain Python accumulation."""
    energies = []
    for x in itertools.product(range(g.num_labels), repeat=g.num_vars):
        e = 0.0
        for i in range(g.num_vars):
            e += g.unaries[i][x[i]]
        for edge in g.edges:
            e += edge.w[x[edge.i]][x[edge.j]]
        energies.append(e)
    m = min(energies)
    return math.log(sum(math.exp(-(e - m)) for e in energies)) - m


def brute_force_marginals(g):
    marg = np.zeros((g.num_vars, g.num_labels))
    m = None
    states = list(itertools.product(range(g.num_labels), repeat=g.num_vars))
    energies = []
    for x in states:
        e = 0.0
        for i in range(g.num_vars):
            e += g.unaries[i][x[i]]
        for edge in g.edges:
            e += edge.w[x[edge.i]][x[edge.j]]
        energies.append(e)
        if m is None or e < m:
            m = e
    z = 0.0
    for x, e in zip(states, energies):
        w = math.exp(-(e - m))
        z += w
        for i, xi in enumerate(x):
            marg[i, xi] += w
    return marg / z


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
