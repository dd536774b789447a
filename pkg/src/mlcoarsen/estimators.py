"""scikit-learn style wrappers around the hierarchy and the upscaling solver.

Vertex vectors are passed row-wise: an array of shape ``(n_samples, n_dofs)``
holds one fine (or coarse) vertex vector per row.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .coarsen import CoarsenSpec, build_hierarchy, rescale_coefficient
from .graph import FineMixedSystem, Graph, build_incidence
from .upscale import upscale_solve


def _as_system(X) -> FineMixedSystem:
    if isinstance(X, FineMixedSystem):
        return X
    if isinstance(X, Graph):
        return build_incidence(X)
    if sp.issparse(X) or isinstance(X, np.ndarray):
        # symmetric weighted adjacency matrix
        A = sp.triu(sp.csr_matrix(X), k=1).tocoo()
        if A.shape[0] != A.shape[1]:
            raise ValueError("adjacency matrix must be square")
        keep = A.data > 0
        edges = np.c_[A.row[keep], A.col[keep]]
        return build_incidence(Graph(A.shape[0], edges, A.data[keep]))
    raise TypeError(f"cannot build a mixed system from {type(X).__name__}")


class SpectralCoarsening(TransformerMixin, BaseEstimator):
    """Multilevel spectral coarsening as a transformer.

    ``fit`` builds the hierarchy, ``transform`` restricts fine vertex vectors
    to level ``level`` and ``inverse_transform`` interpolates them back.

    Parameters
    ----------
    max_levels, coarsening_factor, m_A, face_dofs, pv_method, spectral_tol, svd_tol, seed
        Coarsening parameters, see :class:`CoarsenSpec`.
    level : int or None
        Target level of ``transform``; ``None`` means the coarsest one.
    """

    def __init__(self, max_levels=2, coarsening_factor=8, m_A=1, face_dofs=None, pv_method="local_solve",
                 spectral_tol=None, svd_tol=1e-9, seed=0, level=None):
        self.max_levels = max_levels
        self.coarsening_factor = coarsening_factor
        self.m_A = m_A
        self.face_dofs = face_dofs
        self.pv_method = pv_method
        self.spectral_tol = spectral_tol
        self.svd_tol = svd_tol
        self.seed = seed
        self.level = level

    def _spec(self) -> CoarsenSpec:
        return CoarsenSpec(
            max_levels=self.max_levels,
            coarsening_factor=self.coarsening_factor,
            m_A=self.m_A,
            face_dofs=self.face_dofs,
            pv_method=self.pv_method,
            spectral_tol=self.spectral_tol,
            svd_tol=self.svd_tol,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Build the hierarchy of a graph, adjacency matrix or mixed system ``X``."""
        fine = _as_system(X)
        self.hierarchy_ = build_hierarchy(fine, self._spec())
        self.n_levels_ = self.hierarchy_.n_levels
        self.dof_counts_ = self.hierarchy_.dof_counts()
        self.operator_complexity_ = self.hierarchy_.operator_complexity()
        self.n_features_in_ = self.hierarchy_.levels[0].n_vertex_dofs
        return self

    def _target(self) -> int:
        ell = self.hierarchy_.depth if self.level is None else int(self.level)
        if not 0 <= ell <= self.hierarchy_.depth:
            raise ValueError(f"level must lie in [0, {self.hierarchy_.depth}]")
        return ell

    def transform(self, X):
        check_is_fitted(self, "hierarchy_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        ell = self._target()
        return np.vstack([self.hierarchy_.restrict_u(row, ell) for row in X])

    def inverse_transform(self, X):
        check_is_fitted(self, "hierarchy_")
        X = check_array(X, ensure_2d=True)
        ell = self._target()
        n_c = self.hierarchy_.levels[ell].n_vertex_dofs
        if X.shape[1] != n_c:
            raise ValueError(f"expected {n_c} columns, got {X.shape[1]}")
        return np.vstack([self.hierarchy_.prolong_u(row, ell) for row in X])

    def rescale(self, weights):
        """Copy of the fitted estimator whose hierarchy uses new fine edge weights."""
        check_is_fitted(self, "hierarchy_")
        other = type(self)(**self.get_params())
        other.hierarchy_ = rescale_coefficient(self.hierarchy_, weights)
        for attr in ("n_levels_", "dof_counts_", "operator_complexity_", "n_features_in_"):
            setattr(other, attr, getattr(self, attr))
        return other


class UpscaledSolver(BaseEstimator):
    """Coarse-level mixed solver with fine-level output.

    ``predict(F)`` returns the interpolated potential for every source row
    of ``F``; ``predict_flux`` the interpolated edge flux.
    """

    def __init__(self, max_levels=2, coarsening_factor=8, m_A=1, face_dofs=None, pv_method="local_solve",
                 level=None, seed=0):
        self.max_levels = max_levels
        self.coarsening_factor = coarsening_factor
        self.m_A = m_A
        self.face_dofs = face_dofs
        self.pv_method = pv_method
        self.level = level
        self.seed = seed

    def fit(self, X, y=None):
        fine = _as_system(X)
        spec = CoarsenSpec(
            max_levels=self.max_levels,
            coarsening_factor=self.coarsening_factor,
            m_A=self.m_A,
            face_dofs=self.face_dofs,
            pv_method=self.pv_method,
            seed=self.seed,
        )
        self.hierarchy_ = build_hierarchy(fine, spec)
        self.n_features_in_ = self.hierarchy_.levels[0].n_vertex_dofs
        return self

    def _solve(self, F):
        check_is_fitted(self, "hierarchy_")
        F = check_array(F, ensure_2d=True)
        if F.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {F.shape[1]}")
        ell = self.hierarchy_.depth if self.level is None else int(self.level)
        return [upscale_solve(self.hierarchy_, f, ell) for f in F]

    def predict(self, F):
        return np.vstack([u for u, _ in self._solve(F)])

    def predict_flux(self, F):
        return np.vstack([s for _, s in self._solve(F)])
