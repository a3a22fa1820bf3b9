"""Undirected multigraphs in compressed adjacency form.

A :class:`MultiGraph` keeps edge multiplicities and self-loops because the
random permutation constructions in :mod:`expattn.expander` produce both, and
the spectral checks must see exactly that object.  Self-loops follow the usual
adjacency-matrix convention: a loop at ``v`` adds 2 to ``A[v, v]`` and to the
degree of ``v``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

UNREACHABLE = -1


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MultiGraph:
    """Symmetric multigraph on nodes ``0..n-1``.

    ``indptr``/``indices``/``mult`` form a CSR structure: the neighbours of
    ``v`` are ``indices[indptr[v]:indptr[v+1]]`` (sorted, unique) and ``mult``
    holds the number of parallel edges to each.  A self-loop appears once in
    its own row with its loop count.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    mult: np.ndarray

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.mult):
            arr.setflags(write=False)

    # -- basic queries -------------------------------------------------
    def neighbors(self, v: int) -> np.ndarray:
        _check_node(self, v)
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def multiplicity(self, u: int, v: int) -> int:
        _check_node(self, u)
        _check_node(self, v)
        lo, hi = self.indptr[u], self.indptr[u + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], v)
        if k < hi and self.indices[k] == v:
            return int(self.mult[k])
        return 0

    def degrees(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        weights = np.where(self.indices == rows, 2 * self.mult, self.mult)
        return np.bincount(rows, weights=weights, minlength=self.n).astype(np.int64)

    @property
    def total_edge_endpoints(self) -> int:
        return int(self.degrees().sum())

    @property
    def num_edges(self) -> int:
        """Undirected edge count, parallel edges and loops included."""
        return self.total_edge_endpoints // 2

    def is_regular(self) -> bool:
        deg = self.degrees()
        return bool(deg.size) and bool(np.all(deg == deg[0]))

    def has_isolated(self) -> bool:
        return bool(np.any(np.diff(self.indptr) == 0))

    def edges(self) -> list[tuple[int, int, int]]:
        """Each undirected edge once as ``(u, v, mult)`` with ``u <= v``."""
        out = []
        for u in range(self.n):
            for k in range(self.indptr[u], self.indptr[u + 1]):
                v = int(self.indices[k])
                if u <= v:
                    out.append((u, v, int(self.mult[k])))
        return out

    def adjacency(self, dense: bool = True):
        """Multiplicity-weighted adjacency matrix (loops contribute 2)."""
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        vals = np.where(self.indices == rows, 2 * self.mult, self.mult).astype(float)
        A = sp.csr_matrix((vals, self.indices, self.indptr), shape=(self.n, self.n))
        return A.toarray() if dense else A

    def without_self_loops(self) -> "MultiGraph":
        return from_edge_list(self.n, [(u, v, m) for u, v, m in self.edges() if u != v])

    def simple_edges(self) -> list[tuple[int, int]]:
        """Distinct undirected non-loop pairs, multiplicity collapsed."""
        return [(u, v) for u, v, _ in self.edges() if u != v]

    def __eq__(self, other):
        if not isinstance(other, MultiGraph):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.mult, other.mult))

    def __repr__(self):
        return f"MultiGraph(n={self.n}, edges={self.num_edges})"


def _check_node(g: MultiGraph, v: int) -> None:
    if not 0 <= v < g.n:
        raise GraphError(f"node {v} out of range for n={g.n}")


def from_edge_list(n: int, edges: Iterable[Sequence[int]]) -> MultiGraph:
    """Build a symmetric multigraph from ``(u, v)`` or ``(u, v, mult)`` entries.

    Repeated pairs accumulate multiplicity; ``(u, v)`` and ``(v, u)`` name the
    same undirected edge.
    """
    if n <= 0:
        raise GraphError("graph must have at least one node")
    acc: dict[tuple[int, int], int] = {}
    for e in edges:
        u, v = int(e[0]), int(e[1])
        m = int(e[2]) if len(e) > 2 else 1
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u}, {v}) has an endpoint outside 0..{n - 1}")
        if m < 1:
            raise GraphError(f"edge ({u}, {v}) has multiplicity {m} < 1")
        key = (u, v) if u <= v else (v, u)
        acc[key] = acc.get(key, 0) + m
    return _from_pairs(n, acc)


def from_arrays(n: int, us: np.ndarray, vs: np.ndarray) -> MultiGraph:
    """Vectorised builder: one undirected edge per ``(us[k], vs[k])``."""
    if n <= 0:
        raise GraphError("graph must have at least one node")
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    if us.size and (min(us.min(), vs.min()) < 0 or max(us.max(), vs.max()) >= n):
        raise GraphError("edge endpoint out of range")
    lo, hi = np.minimum(us, vs), np.maximum(us, vs)
    keys, counts = np.unique(lo * n + hi, return_counts=True)
    lo, hi = keys // n, keys % n
    off = lo != hi
    rows = np.concatenate([lo, hi[off]])
    cols = np.concatenate([hi, lo[off]])
    vals = np.concatenate([counts, counts[off]])
    return _from_coo(n, rows, cols, vals)


def _from_pairs(n, acc):
    if not acc:
        return _from_coo(n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    keys = np.array(list(acc.keys()), dtype=np.int64)
    vals = np.array(list(acc.values()), dtype=np.int64)
    lo, hi = keys[:, 0], keys[:, 1]
    off = lo != hi
    return _from_coo(n, np.concatenate([lo, hi[off]]), np.concatenate([hi, lo[off]]),
                     np.concatenate([vals, vals[off]]))


def _from_coo(n, rows, cols, vals):
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return MultiGraph(n, indptr, cols.astype(np.int64), vals.astype(np.int64))


def degree(g: MultiGraph, v: int) -> int:
    _check_node(g, v)
    return int(g.degrees()[v])


def bfs_distances(g: MultiGraph, source: int) -> np.ndarray:
    """Hop counts from ``source``; unreachable nodes get ``UNREACHABLE`` (-1)."""
    _check_node(g, source)
    dist = np.full(g.n, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    indptr, indices = g.indptr, g.indices
    while queue:
        u = queue.popleft()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if dist[v] == UNREACHABLE:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def all_pairs_distances(g: MultiGraph) -> np.ndarray:
    """Unweighted all-pairs hop counts (``inf`` for unreachable pairs)."""
    A = g.adjacency(dense=False)
    return shortest_path(A, method="D", unweighted=True, directed=False)


def diameter(g: MultiGraph) -> float:
    """Largest hop distance over all pairs; ``math.inf`` when disconnected."""
    if g.n == 1:
        return 0
    D = all_pairs_distances(g)
    d = D.max()
    return float("inf") if np.isinf(d) else int(d)


def is_connected(g: MultiGraph) -> bool:
    return bool(np.all(bfs_distances(g, 0) != UNREACHABLE))


def is_bipartite(g: MultiGraph) -> bool:
    color = np.full(g.n, -1, dtype=np.int64)
    for s in range(g.n):
        if color[s] >= 0:
            continue
        color[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.neighbors(u):
                if color[v] < 0:
                    color[v] = 1 - color[u]
                    queue.append(v)
                elif color[v] == color[u]:
                    return False
    return True


def transition_matrix(g: MultiGraph):
    """Sparse column-stochastic ``A D^{-1}`` so that ``P @ pi`` is one walk step."""
    if g.has_isolated():
        raise GraphError("random walk undefined: graph has an isolated node")
    A = g.adjacency(dense=False)
    deg = g.degrees().astype(float)
    return (A @ sp.diags(1.0 / deg)).tocsr()


def walk_step(g: MultiGraph, dist: np.ndarray) -> np.ndarray:
    """One step of the simple random walk, weighting parallel edges by count.

    Mass at ``u`` moves to each neighbour ``v`` with probability
    ``A[u, v] / deg(u)``.
    """
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (g.n,):
        raise GraphError(f"distribution must have length {g.n}")
    return transition_matrix(g) @ dist


# -- edge-list text format -------------------------------------------------

def write_edge_list(g: MultiGraph, path) -> None:
    edges = g.edges()
    lines = [f"{g.n} {len(edges)}"] + [f"{u} {v} {m}" for u, v, m in edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> MultiGraph:
    text = Path(path).read_text().split("\n")
    rows = [(i + 1, ln.split()) for i, ln in enumerate(text) if ln.strip()]
    if not rows:
        raise GraphError(f"{path}: empty edge list")
    lineno, head = rows[0]
    if len(head) != 2:
        raise GraphError(f"{path}:{lineno}: header must be 'n m'")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise GraphError(f"{path}:{lineno}: header must hold two integers") from None
    if len(rows) - 1 != m:
        raise GraphError(f"{path}: header announces {m} edges, found {len(rows) - 1}")
    edges = []
    for lineno, parts in rows[1:]:
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 'u v mult'")
        try:
            edges.append(tuple(int(x) for x in parts))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer field") from None
    try:
        return from_edge_list(n, edges)
    except GraphError as exc:
        raise GraphError(f"{path}: {exc}") from None


# -- small named graphs used across tests and examples -----------------------

def cycle_graph(n: int) -> MultiGraph:
    return from_edge_list(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> MultiGraph:
    return from_edge_list(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> MultiGraph:
    return from_edge_list(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def empty_graph(n: int) -> MultiGraph:
    return from_edge_list(n, [])


def petersen_graph() -> MultiGraph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return from_edge_list(10, outer + spokes + inner)
