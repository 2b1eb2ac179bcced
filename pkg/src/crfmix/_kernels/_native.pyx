# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: sequential marginal sweeps and exact state enumeration.

Semantics must stay in lockstep with the pure-Python twin in ``pure.py``:
same variable order, same accumulation order, same floor handling.
"""

from libc.math cimport exp, log

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "native"


cdef void _clause_potentials(const double[:, ::1] q,
                             const int[::1] cl_ptr, const int[::1] mem_var,
                             const int[::1] mem_label, const int[::1] cl_c,
                             const double[::1] cl_sign, const double[::1] cl_lam,
                             double[:, ::1] pot, double[:, ::1] pref,
                             double[:, ::1] suff) noexcept:
    """Per-(variable, label) additive energies from the count constraints.

    For member u of a clause the contribution is
    ``-sign * lam * P(count over the other members == C - 1)``, evaluated by
    a prefix/suffix truncated count DP in O(L * C) per clause. Potentials
    are frozen from the marginals at sweep start so that every member of a
    clause feels the same pressure within one sweep.
    """
    cdef int n_clauses = cl_c.shape[0]
    cdef int c, thr, m0, m1, length, i, k, hi, u
    cdef double lam, p, pmf
    pot[:, :] = 0.0
    for c in range(n_clauses):
        lam = cl_lam[c]
        thr = cl_c[c]
        if lam == 0.0 or thr <= 0:
            continue
        m0 = cl_ptr[c]
        m1 = cl_ptr[c + 1]
        length = m1 - m0
        # pref[i, k] = P(k of the first i members match), truncated at thr
        for k in range(thr):
            pref[0, k] = 0.0
            suff[length, k] = 0.0
        pref[0, 0] = 1.0
        suff[length, 0] = 1.0
        for i in range(length):
            p = q[mem_var[m0 + i], mem_label[m0 + i]]
            hi = i + 1
            if hi > thr - 1:
                hi = thr - 1
            for k in range(thr):
                pref[i + 1, k] = pref[i, k]
            for k in range(hi, 0, -1):
                pref[i + 1, k] = pref[i + 1, k] * (1.0 - p) + pref[i, k - 1] * p
            pref[i + 1, 0] = pref[i, 0] * (1.0 - p)
        for i in range(length - 1, -1, -1):
            p = q[mem_var[m0 + i], mem_label[m0 + i]]
            hi = length - i
            if hi > thr - 1:
                hi = thr - 1
            for k in range(thr):
                suff[i, k] = suff[i + 1, k]
            for k in range(hi, 0, -1):
                suff[i, k] = suff[i, k] * (1.0 - p) + suff[i + 1, k - 1] * p
            suff[i, 0] = suff[i + 1, 0] * (1.0 - p)
        for u in range(length):
            pmf = 0.0
            for k in range(thr):
                pmf += pref[u, k] * suff[u + 1, thr - 1 - k]
            pot[mem_var[m0 + u], mem_label[m0 + u]] -= cl_sign[c] * lam * pmf


def run_sweeps(const double[:, ::1] unaries,
               const int[::1] indptr, const int[::1] nbr, const double[:, :, ::1] arc_w,
               double[:, ::1] q,
               double damping, double floor, double tol, int max_sweeps,
               const int[::1] cl_ptr, const int[::1] mem_var, const int[::1] mem_label,
               const int[::1] cl_c, const double[::1] cl_sign, const double[::1] cl_lam):
    """Damped sequential coordinate-ascent sweeps, in place on ``q``.

    Returns (sweeps_run, last_max_change, converged).
    """
    cdef int n = unaries.shape[0]
    cdef int n_labels = unaries.shape[1]
    cdef int n_clauses = cl_c.shape[0]
    cdef int sweep, i, l, lp, a, j, c
    cdef double s, mn, z, pn, d, delta
    cdef double[::1] field = np.empty(n_labels, dtype=np.float64)

    cdef int max_c = 1, max_len = 1
    for c in range(n_clauses):
        if cl_c[c] > max_c:
            max_c = cl_c[c]
        if cl_ptr[c + 1] - cl_ptr[c] > max_len:
            max_len = cl_ptr[c + 1] - cl_ptr[c]
    cdef double[:, ::1] pot = np.zeros((n if n_clauses else 1, n_labels), dtype=np.float64)
    cdef double[:, ::1] pref = np.empty((max_len + 1, max_c), dtype=np.float64)
    cdef double[:, ::1] suff = np.empty((max_len + 1, max_c), dtype=np.float64)

    delta = 0.0
    for sweep in range(max_sweeps):
        if n_clauses:
            _clause_potentials(q, cl_ptr, mem_var, mem_label, cl_c, cl_sign,
                               cl_lam, pot, pref, suff)
        delta = 0.0
        for i in range(n):
            for l in range(n_labels):
                field[l] = unaries[i, l]
            if n_clauses:
                for l in range(n_labels):
                    field[l] += pot[i, l]
            for a in range(indptr[i], indptr[i + 1]):
                j = nbr[a]
                for l in range(n_labels):
                    s = 0.0
                    for lp in range(n_labels):
                        s += arc_w[a, l, lp] * q[j, lp]
                    field[l] += s
            mn = field[0]
            for l in range(1, n_labels):
                if field[l] < mn:
                    mn = field[l]
            z = 0.0
            for l in range(n_labels):
                field[l] = exp(-(field[l] - mn))
                z += field[l]
            for l in range(n_labels):
                pn = damping * q[i, l] + (1.0 - damping) * (field[l] / z)
                if pn < floor:
                    pn = floor
                d = pn - q[i, l]
                if d < 0:
                    d = -d
                if d > delta:
                    delta = d
                q[i, l] = pn
        if delta < tol:
            return sweep + 1, delta, True
    return max_sweeps, delta, False


def enumerate_stats(const double[:, ::1] unaries,
                    const int[::1] ei, const int[::1] ej, const double[:, :, ::1] ew,
                    bint want_marginals):
    """Exact log-partition (and optionally marginals) by full enumeration.

    States are visited in big-endian order: variable 0 is the slowest digit,
    matching ``itertools.product(range(L), repeat=n)``.
    """
    cdef int n = unaries.shape[0]
    cdef int n_labels = unaries.shape[1]
    cdef int n_edges = ei.shape[0]
    cdef long n_states = 1
    cdef int i, e, pos
    for i in range(n):
        n_states *= n_labels

    cdef int[::1] x = np.zeros(n, dtype=np.int32)
    cdef long s
    cdef double energy, emin, acc, w

    # Pass 1: minimum energy for a stable shift.
    emin = 0.0
    for i in range(n):
        emin += unaries[i, 0]
    for e in range(n_edges):
        emin += ew[e, 0, 0]
    for s in range(n_states):
        energy = 0.0
        for i in range(n):
            energy += unaries[i, x[i]]
        for e in range(n_edges):
            energy += ew[e, x[ei[e]], x[ej[e]]]
        if energy < emin:
            emin = energy
        pos = n - 1
        while pos >= 0:
            x[pos] += 1
            if x[pos] == n_labels:
                x[pos] = 0
                pos -= 1
            else:
                break

    # Pass 2: accumulate shifted weights.
    cdef double[:, ::1] marg
    if want_marginals:
        marg = np.zeros((n, n_labels), dtype=np.float64)
    else:
        marg = np.zeros((1, 1), dtype=np.float64)
    acc = 0.0
    for i in range(n):
        x[i] = 0
    for s in range(n_states):
        energy = 0.0
        for i in range(n):
            energy += unaries[i, x[i]]
        for e in range(n_edges):
            energy += ew[e, x[ei[e]], x[ej[e]]]
        w = exp(-(energy - emin))
        acc += w
        if want_marginals:
            for i in range(n):
                marg[i, x[i]] += w
        pos = n - 1
        while pos >= 0:
            x[pos] += 1
            if x[pos] == n_labels:
                x[pos] = 0
                pos -= 1
            else:
                break

    cdef double log_z = log(acc) - emin
    if want_marginals:
        out = np.asarray(marg) / acc
        return log_z, out
    return log_z, None


def state_energies(const double[:, ::1] unaries,
                   const int[::1] ei, const int[::1] ej, const double[:, :, ::1] ew):
    """Energy of every labeling, big-endian state order."""
    cdef int n = unaries.shape[0]
    cdef int n_labels = unaries.shape[1]
    cdef int n_edges = ei.shape[0]
    cdef long n_states = 1
    cdef int i, e, pos
    for i in range(n):
        n_states *= n_labels

    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_states, dtype=np.float64)
    cdef double[::1] ov = out
    cdef int[::1] x = np.zeros(n, dtype=np.int32)
    cdef long s
    cdef double energy

    for s in range(n_states):
        energy = 0.0
        for i in range(n):
            energy += unaries[i, x[i]]
        for e in range(n_edges):
            energy += ew[e, x[ei[e]], x[ej[e]]]
        ov[s] = energy
        pos = n - 1
        while pos >= 0:
            x[pos] += 1
            if x[pos] == n_labels:
                x[pos] = 0
                pos -= 1
            else:
                break
    return out
