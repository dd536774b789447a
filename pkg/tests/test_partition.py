from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import path_graph
from mlcoarsen.graph import Graph, TpfaGrid, assemble_tpfa, random_graph
from mlcoarsen.partition import (
    check_partition,
    coarse_graph,
    make_partition,
    partition,
    read_partition,
    write_partition,
)


def bfs_connected(g: Graph, verts) -> bool:
    """Independent connectivity oracle: BFS restricted to ``verts``."""
    verts = set(int(v) for v in verts)
    nbrs = {v: [] for v in verts}
    for t, h in g.edges:
        if t in verts and h in verts:
            nbrs[t].append(h)
            nbrs[h].append(t)
    start = next(iter(verts))
    seen, q = {start}, deque([start])
    while q:
        v = q.popleft()
        for w in nbrs[v]:
            if w not in seen:
                seen.add(w)
                q.append(w)
    return seen == verts


def test_path_of_four():
    p = partition(path_graph(4), 2)
    aggs = sorted(sorted(a.tolist()) for a in p.aggregates())
    assert aggs == [[0, 1], [2, 3]]
    assert len(p.faces) == 1 and p.face_edges[0].tolist() == [1]


@pytest.mark.parametrize("factor", [10, 11, 50])
def test_factor_at_least_n_gives_one_aggregate(factor):
    p = partition(random_graph(10, seed=0), factor)
    assert p.n_aggregates == 1 and len(p.faces) == 0


def test_random_graph_factor8_bfs_connectivity():
    g = random_graph(500, seed=11)
    p = partition(g, 8)
    assert all(bfs_connected(g, a) for a in p.aggregates())
    assert 0.5 * 500 / 8 <= p.n_aggregates <= 2 * 500 / 8


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 150), st.integers(1, 20), st.integers(0, 500))
def test_partition_invariants_property(n, factor, seed):
    g = random_graph(n, seed=seed)
    p = partition(g, factor, seed=seed % 3)
    check_partition(g, p)
    assert np.array_equal(np.sort(np.concatenate(p.aggregates())), np.arange(n))
    assert all(bfs_connected(g, a) for a in p.aggregates())
    # the faces partition the crossing edges
    a, b = p.assignment[g.edges[:, 0]], p.assignment[g.edges[:, 1]]
    for (i, j), ents in zip(p.faces, p.face_edges):
        assert i < j
        assert np.all(np.sort(np.c_[a[ents], b[ents]], axis=1) == [i, j])


def test_partition_deterministic():
    g = random_graph(300, seed=4)
    assert np.array_equal(partition(g, 8, seed=5).assignment, partition(g, 8, seed=5).assignment)


def test_grid_aggregates_are_compact():
    g, _ = assemble_tpfa(TpfaGrid((16, 16)))
    p = partition(g, 4)
    # growth favours blocks over strips: every aggregate spans at most 3 cells per direction
    xy = np.round(g.coords * 16 - 0.5).astype(int)
    for agg in p.aggregates():
        ext = xy[agg].max(0) - xy[agg].min(0)
        assert ext.max() <= 2


def test_disconnected_graph_rejected():
    with pytest.raises(ValueError):
        partition(Graph(4, [[0, 1], [2, 3]], np.ones(2)), 2)


def test_two_aggregates_single_edge_coarse_graph():
    p = make_partition(path_graph(4), [0, 0, 1, 1])
    cg = coarse_graph(p)
    assert cg.n_vertices == 2 and cg.edges.tolist() == [[0, 1]]


def test_k4_pairs():
    e = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
    g = Graph(4, e, np.ones(6))
    p = make_partition(g, [0, 0, 1, 1])
    cg = coarse_graph(p)
    assert cg.n_edges == 1
    crossing = [k for k, (t, h) in enumerate(e) if (t < 2) != (h < 2)]
    assert sorted(p.face_edges[0].tolist()) == crossing and len(crossing) == 4


def test_nested_recursion_on_grid():
    g, _ = assemble_tpfa(TpfaGrid((16, 16)))
    p1 = partition(g, 8)
    g1 = coarse_graph(p1)
    p2 = partition(g1, 8)
    owner = p2.assignment[p1.assignment]
    for agg2 in range(p2.n_aggregates):
        fine_vertices = set(np.flatnonzero(owner == agg2))
        union = set()
        for a1 in np.flatnonzero(p2.assignment == agg2):
            union |= set(np.flatnonzero(p1.assignment == a1))
        assert fine_vertices == union


def test_partition_file_roundtrip(tmp_path):
    g = random_graph(40, seed=2)
    p = partition(g, 5)
    write_partition(tmp_path / "p.txt", p)
    q = read_partition(tmp_path / "p.txt", g)
    assert np.array_equal(p.assignment, q.assignment)
