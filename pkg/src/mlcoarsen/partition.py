"""Connected, non-overlapping vertex aggregation and the induced coarse graph."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .graph import Graph


@dataclass
class Partition:
    """Aggregates of a graph plus the faces (crossing edge sets) between them.

    ``faces[k] = (i, j)`` with ``i < j`` and ``face_edges[k]`` holds the
    indices of the graph edges running between aggregates ``i`` and ``j``.
    """

    n_aggregates: int
    assignment: np.ndarray
    faces: np.ndarray
    face_edges: list

    def aggregates(self) -> list:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.n_aggregates + 1))
        return [order[bounds[a] : bounds[a + 1]] for a in range(self.n_aggregates)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_aggregates)


def _neighbors(g: Graph):
    A = g.adjacency().tocsr()
    return A.indptr, A.indices


def _bfs_order(indptr, indices, n, start):
    seen = np.zeros(n, bool)
    order = []
    for root in [start] + list(range(n)):
        if seen[root]:
            continue
        seen[root] = True
        q = deque([root])
        while q:
            v = q.popleft()
            order.append(v)
            for w in indices[indptr[v] : indptr[v + 1]]:
                if not seen[w]:
                    seen[w] = True
                    q.append(w)
    return order


def _grow(indptr, indices, n, factor, order):
    assign = -np.ones(n, dtype=np.int64)
    n_agg = 0
    for root in order:
        if assign[root] >= 0:
            continue
        assign[root] = n_agg
        size = 1
        # candidate -> [links into the growing aggregate, hops from the root]
        links = {}
        for w in indices[indptr[root] : indptr[root + 1]]:
            if assign[w] < 0:
                links.setdefault(w, [0, 1])[0] += 1
        while size < factor and links:
            # most links, then closest to the root (keeps aggregates compact), then lowest index
            best = max(links.items(), key=lambda kv: (kv[1][0], -kv[1][1], -kv[0]))[0]
            hops = links.pop(best)[1]
            assign[best] = n_agg
            size += 1
            for w in indices[indptr[best] : indptr[best + 1]]:
                if assign[w] < 0:
                    ent = links.setdefault(w, [0, hops + 1])
                    ent[0] += 1
                    ent[1] = min(ent[1], hops + 1)
        n_agg += 1
    return assign, n_agg


def _merge_small(g: Graph, assign, n_agg, factor):
    """Fold aggregates smaller than ``factor/2`` into their smallest neighbour."""
    if factor <= 2:
        return assign
    sizes = np.bincount(assign, minlength=n_agg)
    e = g.edges
    for a in np.flatnonzero(sizes < factor / 2):
        if sizes[a] == 0 or sizes[a] >= factor / 2:
            continue
        ea, eb = assign[e[:, 0]], assign[e[:, 1]]
        nbrs = np.unique(np.r_[eb[(ea == a) & (eb != a)], ea[(eb == a) & (ea != a)]])
        if len(nbrs) == 0:
            continue
        target = min(nbrs, key=lambda b: (sizes[b], b))
        assign[assign == a] = target
        sizes[target] += sizes[a]
        sizes[a] = 0
    return assign


def _split_disconnected(g: Graph, assign):
    """Give every connected piece of an aggregate its own label."""
    e = g.edges
    same = assign[e[:, 0]] == assign[e[:, 1]]
    n = g.n_vertices
    A = sp.csr_matrix((np.ones(int(same.sum())), (e[same, 0], e[same, 1])), shape=(n, n))
    _, piece = csgraph.connected_components(A, directed=False)
    return piece


def _compact(labels):
    """Relabel so aggregates are numbered by their smallest vertex."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(len(order))
    return remap[labels]


def faces_of(g: Graph, assign: np.ndarray):
    e = g.edges
    a, b = assign[e[:, 0]], assign[e[:, 1]]
    cross = np.flatnonzero(a != b)
    lo, hi = np.minimum(a[cross], b[cross]), np.maximum(a[cross], b[cross])
    n_agg = int(assign.max()) + 1 if len(assign) else 0
    key = lo * max(n_agg, 1) + hi
    order = np.lexsort((cross, key))
    key, cross = key[order], cross[order]
    uniq, start = np.unique(key, return_index=True)
    bounds = np.r_[start, len(key)]
    faces = np.c_[uniq // max(n_agg, 1), uniq % max(n_agg, 1)].astype(np.int64).reshape(-1, 2)
    face_edges = [cross[bounds[k] : bounds[k + 1]] for k in range(len(uniq))]
    return faces, face_edges


def make_partition(g: Graph, assign) -> Partition:
    assign = np.asarray(assign, dtype=np.int64)
    faces, face_edges = faces_of(g, assign)
    return Partition(int(assign.max()) + 1, assign, faces, face_edges)


def partition(g: Graph, coarsening_factor: int, seed: int = 0) -> Partition:
    """Greedy region growing into connected aggregates of about ``coarsening_factor`` vertices.

    Roots are visited in breadth-first order from vertex 0 (or from a
    seed-chosen vertex when ``seed != 0``); each aggregate absorbs the
    frontier vertex with the most links into it, breaking ties by fewest
    hops from the root and then by lowest index.
    """
    if coarsening_factor < 1:
        raise ValueError("coarsening_factor must be >= 1")
    n = g.n_vertices
    if not g.is_connected():
        raise ValueError("partition requires a connected graph")
    if coarsening_factor >= n:
        return make_partition(g, np.zeros(n, dtype=np.int64))
    indptr, indices = _neighbors(g)
    start = 0 if seed == 0 else int(np.random.default_rng(seed).integers(n))
    order = _bfs_order(indptr, indices, n, start)
    assign, n_agg = _grow(indptr, indices, n, coarsening_factor, order)
    assign = _merge_small(g, assign, n_agg, coarsening_factor)
    assign = _split_disconnected(g, assign)
    return make_partition(g, _compact(assign))


def coarse_graph(p: Partition) -> Graph:
    """One vertex per aggregate, one unit-weight edge per face (topology only)."""
    return Graph(p.n_aggregates, p.faces, np.ones(len(p.faces)))


def check_partition(g: Graph, p: Partition) -> None:
    """Raise ``AssertionError`` if any aggregate/face invariant is broken."""
    assert p.assignment.shape == (g.n_vertices,)
    assert p.assignment.min() >= 0 and p.assignment.max() == p.n_aggregates - 1
    assert np.all(p.sizes() > 0), "empty aggregate"
    piece = _split_disconnected(g, p.assignment)
    assert len(np.unique(piece)) == p.n_aggregates, "an aggregate is disconnected"
    cross = np.flatnonzero(p.assignment[g.edges[:, 0]] != p.assignment[g.edges[:, 1]])
    listed = np.sort(np.concatenate(p.face_edges)) if p.face_edges else np.zeros(0, np.int64)
    assert np.array_equal(listed, np.sort(cross)), "faces do not partition the crossing edges"


def write_partition(path, p: Partition) -> None:
    with open(path, "w") as fh:
        for v, a in enumerate(p.assignment):
            fh.write(f"{v} {a}\n")


def read_partition(path, g: Graph) -> Partition:
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    assign = np.empty(g.n_vertices, dtype=np.int64)
    assign[data[:, 0]] = data[:, 1]
    return make_partition(g, assign)
