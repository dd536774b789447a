import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import path_graph
from mlcoarsen.graph import (
    Graph,
    TpfaGrid,
    assemble_tpfa,
    build_incidence,
    fiedler_vector,
    random_graph,
    read_edge_list,
    tpfa_weights,
    write_edge_list,
)


def test_incidence_orientation_on_path():
    D = build_incidence(path_graph(3)).D0.toarray()
    assert np.array_equal(D, [[1, 0], [-1, 1], [0, -1]])


def test_single_edge_laplacian():
    w = 2.5
    fine = build_incidence(Graph(2, [[0, 1]], [w]))
    L = (fine.D0 @ fine.M0.power(-1) @ fine.D0.T).toarray()
    assert np.allclose(L, [[w, -w], [-w, w]])


def test_triangle_laplacian_matches_degree_minus_adjacency():
    g = Graph(3, [[0, 1], [1, 2], [0, 2]], np.ones(3))
    fine = build_incidence(g)
    L = (fine.D0 @ fine.M0.power(-1) @ fine.D0.T).toarray()
    A = np.ones((3, 3)) - np.eye(3)
    assert np.allclose(L, np.diag(A.sum(1)) - A)
    assert np.allclose(L, g.laplacian().toarray())


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 60), st.integers(0, 1000))
def test_incidence_property_laplacian(n, seed):
    g = random_graph(n, seed=seed)
    fine = build_incidence(g)
    L = fine.D0 @ fine.M0.power(-1) @ fine.D0.T
    assert abs(L - g.laplacian()).max() <= 1e-12 * g.weights.max()
    assert np.allclose(fine.D0.T @ np.ones(n), 0)


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(2, [[0, 0]], [1.0])
    with pytest.raises(ValueError):
        Graph(2, [[0, 1]], [-1.0])
    with pytest.raises(ValueError):
        Graph(2, [[0, 2]], [1.0])


def test_tpfa_two_cells_unit():
    grid = TpfaGrid((2, 1), h=(1.0, 1.0))
    g, _ = assemble_tpfa(grid)
    assert g.n_edges == 1 and np.isclose(g.weights[0], 1.0)


def test_tpfa_harmonic_mean():
    grid = TpfaGrid((2, 1), h=(1.0, 1.0), perm=[1.0, 3.0])
    g, _ = assemble_tpfa(grid)
    assert np.isclose(g.weights[0], 1.5)


def test_tpfa_uniform_equal_transmissibility():
    g, _ = assemble_tpfa(TpfaGrid((7, 7), perm=np.full(49, 4.0)))
    assert np.allclose(g.weights, g.weights[0])
    assert g.n_edges == 2 * 7 * 6


def test_tpfa_boundary_edges():
    grid = TpfaGrid((4, 3), boundary={"ymax": -1.0, "xmin": "no_flux"})
    g, fine = assemble_tpfa(grid)
    assert fine.n_edge_dofs == g.n_edges + 4
    assert np.allclose(fine.rhs_sigma()[g.n_edges :], -1.0)
    assert fine.nullspace_mode() == "nonsingular"
    # boundary transmissibility k A / (h/2)
    assert np.allclose(fine.weights[g.n_edges :], (1 / 4) / (0.5 / 3))


def test_tpfa_weights_scale_with_perm():
    grid = TpfaGrid((5, 4), boundary={"ymin": 0.0})
    w1 = tpfa_weights(grid)
    w2 = tpfa_weights(grid, np.full(20, 3.0))
    assert np.allclose(w2, 3 * w1)


def test_tpfa_3d_counts():
    g, _ = assemble_tpfa(TpfaGrid((3, 4, 5)))
    assert g.n_vertices == 60
    assert g.n_edges == 2 * 4 * 5 + 3 * 3 * 5 + 3 * 4 * 4


def test_fiedler_path():
    lam, v = fiedler_vector(path_graph(3))
    assert np.isclose(lam, 1.0)
    assert np.allclose(np.abs(v), np.array([1, 0, 1]) / np.sqrt(2))
    assert np.isclose(v[0], -v[2])


def test_fiedler_complete_graph():
    g = Graph(3, [[0, 1], [1, 2], [0, 2]], np.ones(3))
    lam, v = fiedler_vector(g)
    assert np.isclose(lam, np.linalg.eigvalsh(g.laplacian().toarray())[1])
    assert np.isclose(lam, 3.0) and abs(v.sum()) < 1e-12


def test_fiedler_single_edge():
    lam, v = fiedler_vector(Graph(2, [[0, 1]], [0.7]))
    assert np.isclose(lam, 1.4)
    assert np.allclose(np.abs(v), 1 / np.sqrt(2)) and np.isclose(v[0], -v[1])


def test_fiedler_sparse_branch_agrees():
    g = random_graph(300, seed=2)
    lam_d, v_d = fiedler_vector(g)
    lam_s, v_s = fiedler_vector(g, dense_limit=10)
    assert np.isclose(lam_d, lam_s, rtol=1e-8)
    assert abs(abs(v_d @ v_s) - 1) < 1e-6


def test_fiedler_disconnected_raises():
    with pytest.raises(ValueError):
        fiedler_vector(Graph(4, [[0, 1], [2, 3]], np.ones(2)))


def test_random_graph_connected_and_deterministic():
    g1, g2 = random_graph(200, seed=9), random_graph(200, seed=9)
    assert g1.is_connected()
    assert np.array_equal(g1.edges, g2.edges) and np.array_equal(g1.weights, g2.weights)


def test_edge_list_roundtrip(tmp_path):
    g = random_graph(30, seed=1)
    write_edge_list(tmp_path / "g.txt", g)
    h = read_edge_list(tmp_path / "g.txt")
    assert np.array_equal(g.edges, h.edges) and np.array_equal(g.weights, h.weights)
