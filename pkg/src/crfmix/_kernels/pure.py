"""Pure-Python/numpy twin of the compiled kernels.

Keeps the exact operation order of ``_native.pyx`` (same variable sweep
order, same accumulation order, same floor handling) so either backend can
serve the same contracts. Used when the extension is unavailable or when
``CRFMIX_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


def _clause_potentials(q, cl_ptr, mem_var, mem_label, cl_c, cl_sign, cl_lam, pot):
    pot[:, :] = 0.0
    for c in range(len(cl_c)):
        lam = cl_lam[c]
        thr = cl_c[c]
        if lam == 0.0 or thr <= 0:
            continue
        m0, m1 = cl_ptr[c], cl_ptr[c + 1]
        ps = np.array([q[mem_var[u], mem_label[u]] for u in range(m0, m1)])
        length = len(ps)
        pref = np.zeros((length + 1, thr))
        suff = np.zeros((length + 1, thr))
        pref[0, 0] = 1.0
        suff[length, 0] = 1.0
        for i in range(length):
            p = ps[i]
            pref[i + 1, 1:] = pref[i, 1:] * (1.0 - p) + pref[i, :-1] * p
            pref[i + 1, 0] = pref[i, 0] * (1.0 - p)
        for i in range(length - 1, -1, -1):
            p = ps[i]
            suff[i, 1:] = suff[i + 1, 1:] * (1.0 - p) + suff[i + 1, :-1] * p
            suff[i, 0] = suff[i + 1, 0] * (1.0 - p)
        for u in range(length):
            pmf = float((pref[u, :thr] * suff[u + 1, thr - 1::-1]).sum())
            pot[mem_var[m0 + u], mem_label[m0 + u]] -= cl_sign[c] * lam * pmf


def run_sweeps(unaries, indptr, nbr, arc_w, q, damping, floor, tol, max_sweeps,
               cl_ptr, mem_var, mem_label, cl_c, cl_sign, cl_lam):
    n, n_labels = unaries.shape
    n_clauses = len(cl_c)
    pot = np.zeros((n, n_labels)) if n_clauses else None
    delta = 0.0
    for sweep in range(max_sweeps):
        if n_clauses:
            _clause_potentials(q, cl_ptr, mem_var, mem_label, cl_c, cl_sign,
                               cl_lam, pot)
        delta = 0.0
        for i in range(n):
            field = unaries[i].copy()
            if n_clauses:
                field += pot[i]
            for a in range(indptr[i], indptr[i + 1]):
                field += arc_w[a] @ q[nbr[a]]
            e = np.exp(-(field - field.min()))
            pn = damping * q[i] + (1.0 - damping) * (e / e.sum())
            np.maximum(pn, floor, out=pn)
            d = np.abs(pn - q[i]).max()
            if d > delta:
                delta = d
            q[i] = pn
        if delta < tol:
            return sweep + 1, delta, True
    return max_sweeps, delta, False


def _chunk_energies(unaries, ei, ej, ew, start, stop):
    n, n_labels = unaries.shape
    idx = np.arange(start, stop, dtype=np.int64)
    energy = np.zeros(idx.shape[0])
    labels = np.empty((idx.shape[0], n), dtype=np.int64)
    for i in range(n):
        labels[:, i] = (idx // n_labels ** (n - 1 - i)) % n_labels
        energy += unaries[i, labels[:, i]]
    for e in range(len(ei)):
        energy += ew[e][labels[:, ei[e]], labels[:, ej[e]]]
    return energy, labels


def enumerate_stats(unaries, ei, ej, ew, want_marginals, chunk=1 << 16):
    n, n_labels = unaries.shape
    n_states = n_labels ** n
    emin = np.inf
    for start in range(0, n_states, chunk):
        energy, _ = _chunk_energies(unaries, ei, ej, ew, start, min(start + chunk, n_states))
        emin = min(emin, energy.min())
    acc = 0.0
    marg = np.zeros((n, n_labels)) if want_marginals else None
    for start in range(0, n_states, chunk):
        energy, labels = _chunk_energies(unaries, ei, ej, ew, start, min(start + chunk, n_states))
        w = np.exp(-(energy - emin))
        acc += w.sum()
        if want_marginals:
            for i in range(n):
                np.add.at(marg[i], labels[:, i], w)
    log_z = np.log(acc) + (-emin)
    if want_marginals:
        return log_z, marg / acc
    return log_z, None


def state_energies(unaries, ei, ej, ew, chunk=1 << 16):
    n, n_labels = unaries.shape
    n_states = n_labels ** n
    out = np.empty(n_states)
    for start in range(0, n_states, chunk):
        stop = min(start + chunk, n_states)
        out[start:stop] = _chunk_energies(unaries, ei, ej, ew, start, stop)[0]
    return out
