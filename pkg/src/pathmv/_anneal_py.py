"""Pure-Python annealing kernel.

Mirrors ``_anneal.pyx`` operation for operation: same random draws in the
same order and the same floating-point expression order, so both backends
return bit-identical results for the same bit generator state.
"""

import math

import numpy as np

_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


class NoLegalMove(RuntimeError):
    pass


def _draw_move(assign, counts, n_clusters, n, k_max, next_raw, max_tries):
    for _ in range(max_tries):
        i = int(((next_raw() >> 11) * _TO_UNIT) * n)
        off = int(((next_raw() >> 11) * _TO_UNIT) * (k_max - 1))
        a = assign[i]
        b = off if off < a else off + 1
        if n_clusters == 2 and counts[a] == 1 and counts[b] > 0:
            continue
        return i, a, b
    raise NoLegalMove(f"no legal perturbation found in {max_tries} draws")


def draw_move(assign, k_max, bit_generator, max_tries=64):
    """One legal (asset, target) move; used by the public ``perturb``."""
    assign = [int(a) for a in assign]
    counts = [0] * k_max
    for a in assign:
        counts[a] += 1
    n_clusters = sum(1 for c in counts if c > 0)
    return _draw_move(
        assign, counts, n_clusters, len(assign), k_max, bit_generator.random_raw, max_tries
    )


def run(S, assign, k_max, T0, Tf, alpha, kappa, bit_generator, max_tries):
    """Anneal from ``assign`` (a valid partition); see ``clustering.anneal``."""
    S = np.asarray(S, dtype=float).tolist()
    assign = [int(a) for a in assign]
    n = len(assign)
    next_raw = bit_generator.random_raw

    counts = [0] * k_max
    for a in assign:
        counts[a] += 1
    n_clusters = 0
    for c in counts:
        if c > 0:
            n_clusters += 1
    W = 0.0
    for i in range(n):
        row = S[i]
        for j in range(i + 1, n):
            if assign[i] == assign[j]:
                W += row[j]
    E = n_clusters - (kappa / (n_clusters - 1)) * W

    best_E = E
    best_assign = list(assign)
    trace = []
    best_trace = []
    n_accepted = 0
    T = T0
    while T >= Tf:
        i, a, b = _draw_move(assign, counts, n_clusters, n, k_max, next_raw, max_tries)
        u = (next_raw() >> 11) * _TO_UNIT

        row = S[i]
        s_a = 0.0
        s_b = 0.0
        for j in range(n):
            if j == i:
                continue
            if assign[j] == a:
                s_a += row[j]
            elif assign[j] == b:
                s_b += row[j]
        k_new = n_clusters
        if counts[a] == 1:
            k_new -= 1
        if counts[b] == 0:
            k_new += 1
        W_new = W - s_a + s_b
        E_new = k_new - (kappa / (k_new - 1)) * W_new
        dE = E_new - E

        if dE < 0.0 or u < math.exp(-dE / T):
            assign[i] = b
            counts[a] -= 1
            counts[b] += 1
            n_clusters = k_new
            W = W_new
            E = E_new
            n_accepted += 1
            if E < best_E:
                best_E = E
                best_assign = list(assign)
        trace.append(E)
        best_trace.append(best_E)
        T *= alpha

    return (
        np.array(best_assign, dtype=np.int64),
        best_E,
        np.array(trace),
        np.array(best_trace),
        np.array(assign, dtype=np.int64),
        n_accepted,
    )
