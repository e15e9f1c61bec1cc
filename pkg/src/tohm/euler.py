"""Euler characteristic of lattice excursion sets via clique counting.

The excursion set ``{r : w_r >= c}`` is turned into graphs whose vertices are
excursion points and whose edges join points at index distance between 1 and
``sqrt(d)``. Unit ``d``-hypercubes of the excursion mesh show up as
``2**d``-cliques, and the EC is the alternating sum of hypercube counts.

A plain ``2**d``-clique count in ``G^d`` is only a hypercube count when
``d in {0, 1, D}``: for ``2 <= d < D`` it also picks up cliques spread over
more than ``d`` axes (e.g. the four even-parity corners of a unit cube are
pairwise at distance ``sqrt(2)``). :func:`count_hypercubes` therefore counts
cliques in the sub-graphs whose edges only move along a fixed ``d``-subset of
axes; within such a sub-graph every ``2**d``-clique is a unit hypercube.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ValidationError
from .lattice import FieldSample, Lattice


@dataclass(frozen=True, eq=False)
class ExcursionSet:
    lattice: Lattice
    indices: np.ndarray
    threshold: float

    def __len__(self) -> int:
        return int(self.indices.size)

    def grid(self) -> np.ndarray:
        """Boolean array over the full cross product marking excursion points."""
        g = np.zeros(int(np.prod(self.lattice.shape)), dtype=bool)
        full = np.flatnonzero(self.lattice.grid_to_flat >= 0)
        g[full[self.indices]] = True
        return g.reshape(self.lattice.shape)


def excursion_set(field: FieldSample, c: float) -> ExcursionSet:
    idx = np.flatnonzero(field.values >= c)
    idx.setflags(write=False)
    return ExcursionSet(field.lattice, idx, float(c))


def _offsets(D: int, max_sq: int) -> np.ndarray:
    """Stencil offsets in {-1,0,1}^D with 1 <= |o|^2 <= max_sq, one per +-pair."""
    out = []
    for o in itertools.product((-1, 0, 1), repeat=D):
        sq = sum(x * x for x in o)
        if not 1 <= sq <= max_sq:
            continue
        # keep the lexicographically positive representative
        first = next(x for x in o if x != 0)
        if first > 0:
            out.append(o)
    return np.array(out, dtype=np.int64).reshape(-1, D)


@dataclass(frozen=True, eq=False)
class ExcursionGraph:
    """Undirected graph on excursion points.

    ``edges`` holds pairs ``(r, s)`` of lattice flat indices with ``r < s``;
    ``sqdist`` is the squared index distance of each edge and ``support`` a
    bitmask of the axes along which its endpoints differ.
    """

    vertices: ExcursionSet
    d: int
    edges: np.ndarray
    sqdist: np.ndarray
    support: np.ndarray
    _adj: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def _subgraph(self, keep: np.ndarray, d: int) -> "ExcursionGraph":
        return ExcursionGraph(
            self.vertices, d, self.edges[keep], self.sqdist[keep], self.support[keep]
        )

    def restrict(self, d: int) -> "ExcursionGraph":
        """Graph for a smaller ``d``: drop edges longer than ``sqrt(d)``."""
        if not 1 <= d <= self.d:
            raise ValidationError(f"can only restrict to d in [1, {self.d}], got {d}")
        return self._subgraph(self.sqdist <= d, d)

    def restrict_axes(self, axes: tuple[int, ...]) -> "ExcursionGraph":
        """Keep only edges whose endpoints differ exclusively along ``axes``."""
        bits = 0
        for a in axes:
            bits |= 1 << a
        return self._subgraph((self.support & ~bits) == 0, self.d)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Adjacency over vertex positions ``0..n-1`` (order of ``vertices.indices``)."""
        n = self.n_vertices
        ids = self.vertices.indices
        a = np.searchsorted(ids, self.edges[:, 0])
        b = np.searchsorted(ids, self.edges[:, 1])
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return indptr, dst[order].astype(np.int64)

    def adjacency(self) -> dict[int, set[int]]:
        if self._adj is None:
            adj: dict[int, set[int]] = {int(v): set() for v in self.vertices.indices}
            for r, s in self.edges.tolist():
                adj[r].add(s)
                adj[s].add(r)
            object.__setattr__(self, "_adj", adj)
        return self._adj


def build_graph(exc: ExcursionSet, d: int) -> ExcursionGraph:
    """Join excursion points whose index distance lies in ``[1, sqrt(d)]``.

    Neighbours come from the ``{-1,0,1}^D`` stencil, so construction is
    ``O(|A| 3^D)`` rather than all-pairs.
    """
    lat = exc.lattice
    D = lat.dims
    if not 1 <= d <= D:
        raise ValidationError(f"graph dimension d must be in [1, {D}], got {d}")

    shape = np.array(lat.shape, dtype=np.int64)
    n_full = int(np.prod(shape))
    # full-grid position -> flat index if the point is in the excursion set, else -1
    member = np.full(n_full, -1, dtype=np.int64)
    full_pos = np.flatnonzero(lat.grid_to_flat >= 0)[exc.indices]
    member[full_pos] = exc.indices

    ivec = lat.index_vectors[exc.indices]
    src_all, dst_all, sq_all, sup_all = [], [], [], []
    for o in _offsets(D, d):
        nb = ivec + o
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        if not ok.any():
            continue
        pos = np.ravel_multi_index(nb[ok].T, lat.shape)
        dst = member[pos]
        hit = dst >= 0
        src = exc.indices[ok][hit]
        dst = dst[hit]
        src_all.append(np.minimum(src, dst))
        dst_all.append(np.maximum(src, dst))
        n = src.size
        sq_all.append(np.full(n, int(np.sum(o * o)), dtype=np.int64))
        sup = sum(1 << a for a in range(D) if o[a] != 0)
        sup_all.append(np.full(n, sup, dtype=np.int64))

    if src_all:
        edges = np.stack([np.concatenate(src_all), np.concatenate(dst_all)], axis=1)
        sqdist = np.concatenate(sq_all)
        support = np.concatenate(sup_all)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, sqdist, support = edges[order], sqdist[order], support[order]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        sqdist = np.zeros(0, dtype=np.int64)
        support = np.zeros(0, dtype=np.int64)
    return ExcursionGraph(exc, d, edges, sqdist, support)


def degeneracy_order(adj: dict[int, set[int]]) -> list[int]:
    """Repeatedly remove a minimum-degree vertex (lazy-deletion heap)."""
    deg = {v: len(nb) for v, nb in adj.items()}
    heap = [(k, v) for v, k in deg.items()]
    heapq.heapify(heap)
    removed: set[int] = set()
    order = []
    while heap:
        k, v = heapq.heappop(heap)
        if v in removed or k != deg[v]:
            continue
        removed.add(v)
        order.append(v)
        for u in adj[v]:
            if u not in removed:
                deg[u] -= 1
                heapq.heappush(heap, (deg[u], u))
    return order


def _pivot_count(adj, cand: set, held: int, free: int, q: int) -> int:
    # Cliques in this branch are: the `held` forced vertices, any subset of
    # the `free` pivot vertices, plus a clique inside `cand`.
    if held > q or held + free + len(cand) < q:
        return 0
    if not cand:
        return comb(free, q - held)
    p = max(cand, key=lambda u: len(adj[u] & cand))
    total = _pivot_count(adj, cand & adj[p], held, free + 1, q)
    excluded = set()
    for v in sorted(cand - adj[p] - {p}):
        total += _pivot_count(adj, (cand & adj[v]) - excluded, held + 1, free, q)
        excluded.add(v)
    return total


def count_cliques(graph: ExcursionGraph, q: int, backend: str = "auto") -> int:
    """Number of ``q``-vertex cliques (not only maximal ones) in ``graph``.

    Pivoted Bron-Kerbosch over a degeneracy ordering: each leaf of the pivot
    tree stands for ``held`` mandatory vertices plus any subset of ``free``
    pivots, so it contributes ``comb(free, q - held)`` without listing cliques.
    ``backend`` is ``"compiled"``, ``"python"`` or ``"auto"`` (compiled when
    numba is importable and the local problems fit in 63-bit sets).
    """
    if q < 1:
        raise ValidationError("clique size must be >= 1")
    if backend not in ("auto", "compiled", "python"):
        raise ValidationError(f"unknown backend {backend!r}")
    if q == 1:
        return graph.n_vertices
    if q == 2:
        return graph.n_edges
    if graph.n_edges == 0:
        return 0
    if backend != "python":
        n = _count_compiled(graph, q)
        if n is not None:
            return n
        if backend == "compiled":
            raise ValidationError("graph too dense for the compiled clique kernel")
    return _count_python(graph, q)


def _count_compiled(graph: ExcursionGraph, q: int) -> int | None:
    global _COMB
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - numba missing
        return None
    if q > _kernels.MAX_LOCAL + 1:
        return None
    if _COMB is None:
        _COMB = _kernels.comb_table()
    indptr, indices = graph.csr()
    n = int(_kernels.count_cliques_csr(indptr, indices, q, _COMB))
    return None if n < 0 else n


_COMB = None


def _count_python(graph: ExcursionGraph, q: int) -> int:
    adj = graph.adjacency()
    order = degeneracy_order(adj)
    rank = {v: i for i, v in enumerate(order)}
    total = 0
    for v in order:
        later = {u for u in adj[v] if rank[u] > rank[v]}
        if len(later) + 1 < q:
            continue
        total += _pivot_count(adj, later, 1, 0, q)
    return total


def count_hypercubes(graph_top: ExcursionGraph, d: int) -> int:
    """Number of unit ``d``-hypercubes, counted as ``2**d``-cliques.

    ``graph_top`` must have been built with dimension ``>= d``.
    """
    if d == 0:
        return graph_top.n_vertices
    g = graph_top.restrict(d)
    if d == 1:
        return g.n_edges
    D = graph_top.vertices.lattice.dims
    if d == D:
        return count_cliques(g, 2**d)
    return sum(
        count_cliques(g.restrict_axes(axes), 2**d)
        for axes in itertools.combinations(range(D), d)
    )


@dataclass(frozen=True)
class CliqueCounts:
    """``counts[d]`` is the number of unit ``d``-hypercubes, ``d = 0..D``."""

    counts: tuple[int, ...]
    threshold: float

    @property
    def euler(self) -> int:
        return sum((-1) ** d * n for d, n in enumerate(self.counts))


def clique_counts(field: FieldSample, c: float, *, axis_restricted: bool = True) -> CliqueCounts:
    """Hypercube counts per dimension, computed top-down from ``G^D``.

    With ``axis_restricted=False`` the raw ``2**d``-clique counts of ``G^d``
    are returned instead; these over-count for ``2 <= d < D`` and exist only
    for comparison.
    """
    exc = excursion_set(field, c)
    D = field.lattice.dims
    if len(exc) == 0:
        return CliqueCounts((0,) * (D + 1), float(c))
    top = build_graph(exc, D)
    counts = [0] * (D + 1)
    counts[0] = len(exc)
    g = top
    for d in range(D, 0, -1):
        g = g.restrict(d)
        counts[d] = count_hypercubes(top, d) if axis_restricted else count_cliques(g, 2**d)
    return CliqueCounts(tuple(counts), float(c))


def euler_characteristic(field: FieldSample, c: float) -> int:
    return clique_counts(field, c).euler


def euler_characteristic_oracle(field: FieldSample, c: float) -> int:
    """Brute-force EC: test every axis-aligned unit cell directly on the grid.

    Shares no code with the graph path.
    """
    lat = field.lattice
    grid = np.zeros(lat.shape, dtype=bool)
    grid.ravel()[np.flatnonzero(lat.grid_to_flat >= 0)] = field.values >= c
    D = lat.dims
    chi = 0
    for d in range(D + 1):
        for axes in itertools.combinations(range(D), d):
            if any(lat.shape[a] < 2 for a in axes):
                continue
            cell = None
            for corner in itertools.product((0, 1), repeat=d):
                sl = [slice(None)] * D
                for a, bit in zip(axes, corner):
                    sl[a] = slice(bit, lat.shape[a] - 1 + bit)
                piece = grid[tuple(sl)]
                cell = piece.copy() if cell is None else cell & piece
            chi += (-1) ** d * int(cell.sum())
    return chi
