"""Sparse/dense kernels shared by the coarsening and solver code.

Everything here is a thin, checked layer over numpy/scipy: sparse products,
small symmetric eigenproblems, SVD-based column compression and direct
solves of mixed (saddle-point) systems.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

NULLSPACE_MODES = ("pin_first_vertex_dof", "mean_zero", "nonsingular")


class SaddleSolveError(RuntimeError):
    """Raised when a saddle-point system cannot be solved as posed."""


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    return A


def spmm(A, B) -> sp.csr_matrix:
    """Sparse product ``A @ B`` with duplicate entries summed."""
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} x {B.shape}")
    return as_csr(sp.csr_matrix(A) @ sp.csr_matrix(B))


def _check_dense(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def sym_eig(A, sym_tol: float = 1e-12):
    """Eigenvalues (ascending) and orthonormal eigenvectors of symmetric ``A``."""
    A = _check_dense(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("sym_eig needs a square matrix")
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("sym_eig input is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    return lam, V


def svd_columns(A, rel_tol: float = 1e-9, reference: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of ``range(A)``.

    Left singular vectors with singular value below ``rel_tol * reference``
    are dropped; ``reference`` defaults to the largest singular value.
    """
    A = _check_dense(A)
    if A.size == 0:
        return np.zeros((A.shape[0], 0))
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    ref = s[0] if reference is None else reference
    if ref <= 0.0:
        return np.zeros((A.shape[0], 0))
    keep = s >= rel_tol * ref
    return U[:, keep]


@dataclass
class SaddleSystem:
    """The block system ``[[M, D^T], [D, 0]] [sigma; u] = [rhs_sigma; rhs_u]``.

    ``null_vector`` is the kernel of ``D^T`` used by the ``mean_zero`` mode;
    it defaults to the all-ones vector.
    """

    M: sp.spmatrix
    D: sp.spmatrix
    rhs_sigma: np.ndarray
    rhs_u: np.ndarray
    nullspace_mode: str = "mean_zero"
    null_vector: Optional[np.ndarray] = None

    def __post_init__(self):
        self.M = as_csr(self.M)
        self.D = as_csr(self.D)
        self.rhs_sigma = np.asarray(self.rhs_sigma, dtype=float)
        self.rhs_u = np.asarray(self.rhs_u, dtype=float)
        n_s, n_u = self.M.shape[0], self.D.shape[0]
        if self.M.shape != (n_s, n_s) or self.D.shape[1] != n_s:
            raise ValueError(f"inconsistent blocks: M {self.M.shape}, D {self.D.shape}")
        if self.rhs_sigma.shape != (n_s,) or self.rhs_u.shape != (n_u,):
            raise ValueError("right-hand side sizes do not match the blocks")
        if self.nullspace_mode not in NULLSPACE_MODES:
            raise ValueError(f"unknown nullspace_mode {self.nullspace_mode!r}")
        if self.null_vector is None:
            self.null_vector = np.ones(n_u)
        else:
            self.null_vector = np.asarray(self.null_vector, dtype=float)

    def block_matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.M, self.D.T], [self.D, None]], format="csc")

    def residuals(self, sigma, u):
        r_s = self.rhs_sigma - self.M @ sigma - self.D.T @ u
        r_u = self.rhs_u - self.D @ sigma
        return r_s, r_u


def _bordered(K: sp.spmatrix, n_s: int, z: np.ndarray) -> sp.csc_matrix:
    n = K.shape[0]
    col = np.zeros(n)
    col[n_s:] = z
    c = sp.csc_matrix(col.reshape(-1, 1))
    return sp.bmat([[K, c], [c.T, None]], format="csc")


class SaddleFactor:
    """Reusable sparse LU factorisation of a fixed saddle-point operator."""

    def __init__(self, M, D, nullspace_mode="mean_zero", null_vector=None):
        self.M = as_csr(M)
        self.D = as_csr(D)
        self.mode = nullspace_mode
        self.n_s = self.M.shape[0]
        self.n_u = self.D.shape[0]
        K = sp.bmat([[self.M, self.D.T], [self.D, None]], format="csc")
        if nullspace_mode == "mean_zero":
            z = np.ones(self.n_u) if null_vector is None else np.asarray(null_vector, float)
            self.null_vector = z / np.linalg.norm(z)
            K = _bordered(K, self.n_s, self.null_vector)
        elif nullspace_mode == "pin_first_vertex_dof":
            keep = np.r_[np.arange(self.n_s), self.n_s + np.arange(1, self.n_u)]
            self._keep = keep
            K = K[keep][:, keep]
        try:
            self._lu = spla.splu(sp.csc_matrix(K))
        except RuntimeError as exc:
            raise SaddleSolveError(f"singular saddle system ({nullspace_mode}): {exc}") from exc

    def solve(self, rhs_sigma, rhs_u, compat_tol: float = 1e-10):
        rhs_sigma = np.asarray(rhs_sigma, float)
        rhs_u = np.asarray(rhs_u, float)
        if self.mode == "mean_zero":
            scale = 1.0 + np.linalg.norm(rhs_u) + np.linalg.norm(rhs_sigma)
            if abs(self.null_vector @ rhs_u) > compat_tol * scale:
                raise SaddleSolveError("incompatible rhs: null_vector^T rhs_u != 0")
            x = self._lu.solve(np.r_[rhs_sigma, rhs_u, 0.0])
            sigma, u = x[: self.n_s], x[self.n_s : self.n_s + self.n_u]
        elif self.mode == "pin_first_vertex_dof":
            x = self._lu.solve(np.r_[rhs_sigma, rhs_u][self._keep])
            sigma, u = x[: self.n_s], np.r_[0.0, x[self.n_s :]]
        else:
            x = self._lu.solve(np.r_[rhs_sigma, rhs_u])
            sigma, u = x[: self.n_s], x[self.n_s :]
        if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(u))):
            raise SaddleSolveError("saddle solve produced non-finite values")
        return sigma, u


def solve_saddle(sys: SaddleSystem):
    """Direct solve of a :class:`SaddleSystem`; returns ``(sigma, u)``."""
    fac = SaddleFactor(sys.M, sys.D, sys.nullspace_mode, sys.null_vector)
    return fac.solve(sys.rhs_sigma, sys.rhs_u)


class LocalSaddle:
    """Dense factorisation of a small local saddle block.

    When ``null_vector`` is given the system is bordered with it, which
    makes it nonsingular whenever ``ker(D^T)`` is exactly that vector.
    One step of iterative refinement is applied to every solve.
    """

    def __init__(self, M: np.ndarray, D: np.ndarray, null_vector: Optional[np.ndarray] = None):
        self.n_s, self.n_u = M.shape[0], D.shape[0]
        n = self.n_s + self.n_u
        extra = 0 if null_vector is None else 1
        K = np.zeros((n + extra, n + extra))
        K[: self.n_s, : self.n_s] = M
        K[: self.n_s, self.n_s : n] = D.T
        K[self.n_s : n, : self.n_s] = D
        if extra:
            z = null_vector / np.linalg.norm(null_vector)
            K[self.n_s : n, n] = z
            K[n, self.n_s : n] = z
        self.K = K
        self._lu = sla.lu_factor(K, check_finite=False)

    def solve(self, rhs_sigma: np.ndarray, rhs_u: np.ndarray):
        rhs_sigma = np.atleast_2d(np.asarray(rhs_sigma, float).T).T
        rhs_u = np.atleast_2d(np.asarray(rhs_u, float).T).T
        k = max(rhs_sigma.shape[1], rhs_u.shape[1])
        b = np.zeros((self.K.shape[0], k))
        b[: self.n_s] = rhs_sigma
        b[self.n_s : self.n_s + self.n_u] = rhs_u
        x = sla.lu_solve(self._lu, b, check_finite=False)
        x += sla.lu_solve(self._lu, b - self.K @ x, check_finite=False)
        return x[: self.n_s], x[self.n_s : self.n_s + self.n_u]


def write_mm(path, A) -> None:
    """Write a sparse matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)


def read_mm(path) -> sp.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
