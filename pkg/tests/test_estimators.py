import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mlcoarsen.estimators import SpectralCoarsening, UpscaledSolver
from mlcoarsen.graph import build_incidence, random_graph
from mlcoarsen.upscale import upscale_solve


@pytest.fixture(scope="module")
def graph():
    return random_graph(150, seed=6)


def test_clone_and_params():
    est = SpectralCoarsening(m_A=3, coarsening_factor=12)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.set_params(m_A=2).m_A == 2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SpectralCoarsening().transform(np.ones((1, 5)))


def test_transform_roundtrip_constant(graph):
    est = SpectralCoarsening(max_levels=2, m_A=2).fit(graph)
    X = np.ones((2, graph.n_vertices))
    Z = est.transform(X)
    assert Z.shape == (2, est.dof_counts_[-1][0])
    assert np.allclose(est.inverse_transform(Z), X, atol=1e-12)


def test_inverse_then_transform_is_identity(graph):
    est = SpectralCoarsening(max_levels=2, m_A=3, level=1).fit(graph)
    Z = np.random.default_rng(0).standard_normal((3, est.dof_counts_[1][0]))
    assert np.allclose(est.transform(est.inverse_transform(Z)), Z, atol=1e-12)


def test_adjacency_input_matches_graph(graph):
    A = graph.adjacency()
    a = SpectralCoarsening().fit(A)
    b = SpectralCoarsening().fit(graph)
    assert a.dof_counts_ == b.dof_counts_


def test_rescale_keeps_params(graph):
    est = SpectralCoarsening(m_A=2).fit(graph)
    w = 2 * est.hierarchy_.fine_weights
    other = est.rescale(w)
    assert other.get_params() == est.get_params()
    assert np.allclose(other.hierarchy_.levels[1].M.toarray(), est.hierarchy_.levels[1].M.toarray() / 2, atol=1e-14)


def test_upscaled_solver_matches_function(graph):
    rng = np.random.default_rng(3)
    F = rng.standard_normal((2, graph.n_vertices))
    F -= F.mean(1, keepdims=True)
    sol = UpscaledSolver(m_A=2, max_levels=1).fit(graph)
    U = sol.predict(F)
    u, _ = upscale_solve(sol.hierarchy_, F[1], 1)
    assert np.allclose(U[1], u)
    with pytest.raises(ValueError):
        sol.predict(F[:, :-1])
