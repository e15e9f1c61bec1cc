"""Compiled clique-counting kernel (numba).

Graphs arrive in CSR form. For every vertex of a degeneracy ordering, its
later neighbours form a small local problem (at most 63 vertices on any
lattice graph up to D = 4) that is solved with bitset pivoting.
"""

import numpy as np
from numba import njit, uint64, int64

MAX_LOCAL = 63


@njit(cache=True)
def _popcount(x):
    n = 0
    while x:
        x &= x - uint64(1)
        n += 1
    return n


@njit(cache=True)
def degeneracy_rank(indptr, indices):
    """Position of each vertex in a degeneracy ordering (bucket algorithm)."""
    n = indptr.size - 1
    deg = np.empty(n, dtype=np.int64)
    maxd = 0
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
        if deg[v] > maxd:
            maxd = deg[v]
    bins = np.zeros(maxd + 1, dtype=np.int64)
    for v in range(n):
        bins[deg[v]] += 1
    start = 0
    for d in range(maxd + 1):
        num = bins[d]
        bins[d] = start
        start += num
    pos = np.empty(n, dtype=np.int64)
    vert = np.empty(n, dtype=np.int64)
    for v in range(n):
        pos[v] = bins[deg[v]]
        vert[pos[v]] = v
        bins[deg[v]] += 1
    for d in range(maxd, 0, -1):
        bins[d] = bins[d - 1]
    if maxd >= 0 and bins.size > 0:
        bins[0] = 0
    for i in range(n):
        v = vert[i]
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if deg[u] > deg[v]:
                du = deg[u]
                pu = pos[u]
                pw = bins[du]
                w = vert[pw]
                if u != w:
                    pos[u] = pw
                    vert[pu] = w
                    pos[w] = pu
                    vert[pw] = u
                bins[du] += 1
                deg[u] -= 1
    rank = np.empty(n, dtype=np.int64)
    for i in range(n):
        rank[vert[i]] = i
    return rank


@njit(cache=True)
def count_cliques_csr(indptr, indices, q, comb_table):
    """Number of ``q``-cliques; returns -1 if a local problem is too large."""
    n = indptr.size - 1
    rank = degeneracy_rank(indptr, indices)
    local = np.full(n, -1, dtype=np.int64)
    later = np.empty(MAX_LOCAL + 1, dtype=np.int64)
    adjm = np.zeros(MAX_LOCAL + 1, dtype=np.uint64)
    cap = (MAX_LOCAL + 1) * (MAX_LOCAL + 2)
    st_cand = np.empty(cap, dtype=np.uint64)
    st_held = np.empty(cap, dtype=np.int64)
    st_free = np.empty(cap, dtype=np.int64)
    one = uint64(1)
    total = int64(0)
    for v in range(n):
        k = 0
        too_big = False
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if rank[u] > rank[v]:
                if k >= MAX_LOCAL:
                    too_big = True
                    break
                later[k] = u
                local[u] = k
                k += 1
        if too_big:
            for i in range(k):
                local[later[i]] = -1
            return int64(-1)
        if k + 1 < q:
            for i in range(k):
                local[later[i]] = -1
            continue
        for i in range(k):
            u = later[i]
            m = uint64(0)
            for e in range(indptr[u], indptr[u + 1]):
                j = local[indices[e]]
                if j >= 0:
                    m |= one << uint64(j)
            adjm[i] = m
        for i in range(k):
            local[later[i]] = -1

        top = 0
        st_cand[0] = (one << uint64(k)) - one
        st_held[0] = 1
        st_free[0] = 0
        top = 1
        while top > 0:
            top -= 1
            cand = st_cand[top]
            held = st_held[top]
            free = st_free[top]
            size = _popcount(cand)
            if held > q or held + free + size < q:
                continue
            if cand == 0:
                total += comb_table[free, q - held]
                continue
            # pivot: vertex of cand with most neighbours inside cand
            best = -1
            best_deg = -1
            rest = cand
            while rest:
                low = rest & (~rest + one)
                p = _popcount(low - one)
                dgr = _popcount(adjm[p] & cand)
                if dgr > best_deg:
                    best_deg = dgr
                    best = p
                rest ^= low
            pbit = one << uint64(best)
            st_cand[top] = cand & adjm[best]
            st_held[top] = held
            st_free[top] = free + 1
            top += 1
            rest = cand & ~adjm[best] & ~pbit
            excluded = uint64(0)
            while rest:
                low = rest & (~rest + one)
                w = _popcount(low - one)
                st_cand[top] = cand & adjm[w] & ~excluded
                st_held[top] = held + 1
                st_free[top] = free
                top += 1
                excluded |= low
                rest ^= low
    return total


def comb_table(n: int = MAX_LOCAL + 1) -> np.ndarray:
    from math import comb

    t = np.zeros((n + 1, n + 1), dtype=np.int64)
    for a in range(n + 1):
        for b in range(a + 1):
            t[a, b] = comb(a, b)
    return t
