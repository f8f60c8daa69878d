# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled annealing kernel; the reference semantics live in ``_anneal_py``."""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp
from libc.stdint cimport uint64_t
from numpy.random cimport bitgen_t

from pathmv._anneal_py import NoLegalMove

cnp.import_array()

cdef double _TO_UNIT = 1.0 / 9007199254740992.0


cdef inline double _unit(bitgen_t *rng) noexcept nogil:
    return (rng.next_uint64(rng.state) >> 11) * _TO_UNIT


cdef inline int _draw_move(
    cnp.int64_t[::1] assign, cnp.int64_t[::1] counts, long n_clusters, long n, long k_max,
    bitgen_t *rng, long max_tries, long *i_out, long *a_out, long *b_out,
) noexcept nogil:
    cdef long t, i, off, a, b
    for t in range(max_tries):
        i = <long>(_unit(rng) * n)
        off = <long>(_unit(rng) * (k_max - 1))
        a = assign[i]
        b = off if off < a else off + 1
        if n_clusters == 2 and counts[a] == 1 and counts[b] > 0:
            continue
        i_out[0] = i
        a_out[0] = a
        b_out[0] = b
        return 1
    return 0


def run(S_in, assign_in, long k_max, double T0, double Tf, double alpha,
        double kappa, bit_generator, long max_tries):
    cdef double[:, ::1] S = np.ascontiguousarray(S_in, dtype=np.float64)
    cdef cnp.int64_t[::1] assign = np.array(assign_in, dtype=np.int64)
    cdef long n = assign.shape[0]
    cdef cnp.int64_t[::1] counts = np.zeros(k_max, dtype=np.int64)
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(
        bit_generator.capsule, "BitGenerator")

    cdef long i, j, a, b, n_clusters = 0, k_new, n_accepted = 0, step = 0, ok
    cdef double W = 0.0, E, E_new, W_new, dE, s_a, s_b, u, best_E, T

    for i in range(n):
        counts[assign[i]] += 1
    for i in range(k_max):
        if counts[i] > 0:
            n_clusters += 1
    for i in range(n):
        for j in range(i + 1, n):
            if assign[i] == assign[j]:
                W += S[i, j]
    E = n_clusters - (kappa / (n_clusters - 1)) * W

    # step count of the geometric schedule, computed with the same loop
    cdef long n_steps = 0
    T = T0
    while T >= Tf:
        n_steps += 1
        T *= alpha

    trace_arr = np.empty(n_steps)
    best_arr = np.empty(n_steps)
    cdef double[::1] trace = trace_arr
    cdef double[::1] best_trace = best_arr
    best_np = np.array(assign_in, dtype=np.int64)
    cdef cnp.int64_t[::1] best_assign = best_np
    best_E = E

    T = T0
    with nogil:
        while T >= Tf:
            ok = _draw_move(assign, counts, n_clusters, n, k_max, rng, max_tries,
                            &i, &a, &b)
            if not ok:
                break
            u = _unit(rng)
            s_a = 0.0
            s_b = 0.0
            for j in range(n):
                if j == i:
                    continue
                if assign[j] == a:
                    s_a += S[i, j]
                elif assign[j] == b:
                    s_b += S[i, j]
            k_new = n_clusters
            if counts[a] == 1:
                k_new -= 1
            if counts[b] == 0:
                k_new += 1
            W_new = W - s_a + s_b
            E_new = k_new - (kappa / (k_new - 1)) * W_new
            dE = E_new - E
            if dE < 0.0 or u < exp(-dE / T):
                assign[i] = b
                counts[a] -= 1
                counts[b] += 1
                n_clusters = k_new
                W = W_new
                E = E_new
                n_accepted += 1
                if E < best_E:
                    best_E = E
                    for j in range(n):
                        best_assign[j] = assign[j]
            trace[step] = E
            best_trace[step] = best_E
            step += 1
            T *= alpha
    if step < n_steps:
        raise NoLegalMove(f"no legal perturbation found in {max_tries} draws")

    return (best_np, best_E, trace_arr, best_arr, np.asarray(assign), n_accepted)
