"""Nonlinear Darcy flow ``kappa(p) = kappa0 * exp(alpha * p)`` in mixed form.

Solvers: Picard iteration with direct linear solves, and FAS V-cycles over a
fixed coarsening hierarchy. Iterates are stacked as ``x = [sigma; p]``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coarsen import CoarsenSpec, Hierarchy, build_hierarchy
from .graph import TpfaGrid, assemble_tpfa, tpfa_weights
from .numerics import SaddleFactor, as_csr, spmm

log = logging.getLogger(__name__)

VARIANTS = ("galerkin", "pv")


class ConvergenceError(RuntimeError):
    def __init__(self, msg, x=None, history=None):
        super().__init__(msg)
        self.x = x
        self.history = history


@dataclass
class FasConfig:
    relax_steps: int = 10
    inner_steps: int = 4
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_cycles: int = 50
    coarse_rel_tol: float = 1e-10
    max_picard: int = 200

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.coarse_rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.relax_steps < 0 or self.max_cycles < 0:
            raise ValueError("iteration counts must be >= 0")


class NonlinearProblem:
    """Mixed system ``A(x) x = b`` on every level of a hierarchy built at ``kappa0``.

    ``variant="galerkin"`` evaluates the permeability of a level-``l``
    iterate from its pressure interpolated to the fine cells and re-forms
    ``M^l`` by recursive triple products; ``variant="pv"`` interpolates only
    the constant (PV) component of every aggregate.
    """

    def __init__(self, h: Hierarchy, grid: TpfaGrid, alpha: float, f, variant: str = "galerkin"):
        if not np.isfinite(alpha):
            raise ValueError("alpha must be finite")
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.h = h
        self.grid = grid
        self.kappa0 = np.asarray(grid.perm, dtype=float)
        self.alpha = float(alpha)
        self.variant = variant
        self.f = np.asarray(f, dtype=float)
        if self.f.shape != (grid.n_cells,):
            raise ValueError("one source value per cell required")
        self.mode = h.fine.nullspace_mode()
        self.n_s = [lev.n_edge_dofs for lev in h.levels]
        self.n_u = [lev.n_vertex_dofs for lev in h.levels]
        self.b0 = np.r_[h.fine.rhs_sigma(), -self.f]
        self._cell_maps = []
        P = sp.identity(self.n_u[0], format="csr")
        for ell in range(h.n_levels):
            self._cell_maps.append(P)
            if ell < h.depth:
                t = h.transfers[ell]
                Pu = t.P_u if variant == "galerkin" else as_csr(t.P_u - t.npv_u())
                P = spmm(P, Pu)
        self.P = [as_csr(sp.block_diag([t.P_sigma, t.P_u])) for t in h.transfers]
        self.Q = [as_csr(sp.block_diag([t.Q_sigma, t.Q_u])) for t in h.transfers]

    @property
    def depth(self) -> int:
        return self.h.depth

    def split(self, level, x):
        return x[: self.n_s[level]], x[self.n_s[level] :]

    def cell_pressure(self, level, p) -> np.ndarray:
        return self._cell_maps[level] @ p

    def mass(self, level, p) -> sp.csr_matrix:
        """``M^l`` evaluated at the level-``l`` pressure ``p``."""
        pc = self.cell_pressure(level, p)
        with np.errstate(over="raise", invalid="raise"):
            try:
                k = self.kappa0 * np.exp(self.alpha * pc)
            except FloatingPointError as exc:
                raise FloatingPointError("kappa(p) overflow: the iteration diverged") from exc
        if not np.all(np.isfinite(k)) or np.any(k <= 0):
            raise FloatingPointError("kappa(p) is not finite and positive")
        w = tpfa_weights(self.grid, k)
        M = as_csr(sp.diags(1.0 / w))
        for t in self.h.transfers[:level]:
            M = spmm(t.P_sigma.T, spmm(M, t.P_sigma))
            M = as_csr(0.5 * (M + M.T))
        return M

    def apply(self, level, M, x) -> np.ndarray:
        D = self.h.levels[level].D
        s, p = self.split(level, x)
        return np.r_[M @ s + D.T @ p, D @ s]

    def operator(self, level, x):
        """``A^l(x) x`` together with the frozen mass matrix."""
        _, p = self.split(level, x)
        M = self.mass(level, p)
        return self.apply(level, M, x), M

    def zero(self, level) -> np.ndarray:
        return np.zeros(self.n_s[level] + self.n_u[level])

    def factor(self, level, M) -> SaddleFactor:
        lev = self.h.levels[level]
        return SaddleFactor(M, lev.D, self.mode, lev.ones if self.mode == "mean_zero" else None)


def eval_residual(prob: NonlinearProblem, level: int, x, b) -> np.ndarray:
    """``b - A^l(x) x``."""
    Ax, _ = prob.operator(level, x)
    return b - Ax


def _linear_solve(prob, level, M, b):
    n_s = prob.n_s[level]
    s, p = prob.factor(level, M).solve(b[:n_s], b[n_s:])
    return np.r_[s, p]


def picard_solve(prob: NonlinearProblem, x0=None, rel_tol=1e-8, abs_tol=1e-10, level=0, b=None, max_iter=200):
    """Fixed-point iteration on the frozen-coefficient linear system.

    Returns ``(x, iterations, residual history)``; stops once
    ``||r|| <= max(rel_tol ||r0||, abs_tol)``.
    """
    b = prob.b0 if b is None else b
    x = prob.zero(level) if x0 is None else np.array(x0, dtype=float)
    Ax, M = prob.operator(level, x)
    hist = [float(np.linalg.norm(b - Ax))]
    stop = max(rel_tol * hist[0], abs_tol)
    it = 0
    while hist[-1] > stop:
        if it >= max_iter:
            raise ConvergenceError(f"Picard did not converge in {max_iter} iterations", x, hist)
        x = _linear_solve(prob, level, M, b)
        it += 1
        Ax, M = prob.operator(level, x)
        hist.append(float(np.linalg.norm(b - Ax)))
    return x, it, hist


def _theta(M, c, safety: float = 1.1) -> float:
    """Upper estimate of ``lambda_max(diag(M)^{-1} M)``.

    Exactly 1 for diagonal ``M``; otherwise a Lanczos estimate with a safety
    margin, capped by the Gershgorin bound (which is always valid).
    """
    off = M - sp.diags(c)
    if off.count_nonzero() == 0:
        return 1.0
    gersh = float(np.max(abs(M).sum(axis=1).A1 / c))
    n = M.shape[0]
    if n < 3:
        return gersh
    s = 1.0 / np.sqrt(c)
    B = sp.diags(s) @ M @ sp.diags(s)
    lam = spla.eigsh(B, k=1, which="LA", v0=np.ones(n), tol=1e-4, return_eigenvectors=False)[0]
    return min(safety * float(lam), gersh)


class _BraessSarazin:
    """Inexact Braess-Sarazin iteration for a frozen ``[M D^T; D 0]``.

    The flux block is replaced by ``theta * diag(M)`` with ``theta`` a
    Gershgorin bound on ``lambda_max(diag(M)^{-1} M)``; the pressure Schur
    complement is approximated by one symmetric Gauss-Seidel sweep.
    """

    def __init__(self, M, D):
        self.M, self.D = M, D
        c = M.diagonal()
        self.ci = 1.0 / (_theta(M, c) * c)
        S = as_csr(D @ sp.diags(self.ci) @ D.T)
        self.lower = sp.tril(S, format="csr")
        self.upper = sp.triu(S, format="csr")
        self.d = S.diagonal()
        self.n_s = M.shape[0]

    def step(self, r):
        r_s, r_p = r[: self.n_s], r[self.n_s :]
        rhs = self.D @ (self.ci * r_s) - r_p
        y = spla.spsolve_triangular(self.lower, rhs, lower=True)
        dp = spla.spsolve_triangular(self.upper, self.d * y, lower=False)
        ds = self.ci * (r_s - self.D.T @ dp)
        return np.r_[ds, dp]


def relax(prob: NonlinearProblem, level: int, x, b, steps: int, inner: int = 1):
    """Nonlinear relaxation: ``steps`` linearizations, each followed by
    ``inner`` inexact Braess-Sarazin iterations on the frozen system."""
    D = prob.h.levels[level].D
    x = x.copy()
    for _ in range(steps):
        _, p = prob.split(level, x)
        M = prob.mass(level, p)
        bs = _BraessSarazin(M, D)
        for _ in range(inner):
            x += bs.step(b - prob.apply(level, M, x))
    return x


def fas_vcycle(prob: NonlinearProblem, level: int, x, b, cfg: FasConfig, stats: dict = None):
    """One FAS V-cycle on ``level``; the coarsest level is solved by Picard."""
    if level == prob.depth:
        x, it, _ = picard_solve(prob, x, cfg.coarse_rel_tol, 1e-14, level, b, cfg.max_picard)
        if stats is not None:
            stats["coarse_picard"] = stats.get("coarse_picard", 0) + it
        return x
    x = relax(prob, level, x, b, cfg.relax_steps, cfg.inner_steps)
    xc = prob.Q[level] @ x
    r = eval_residual(prob, level, x, b)
    Axc, _ = prob.operator(level + 1, xc)
    bc = prob.P[level].T @ r + Axc
    yc = fas_vcycle(prob, level + 1, xc, bc, cfg, stats)
    x = x + prob.P[level] @ (yc - xc)
    return relax(prob, level, x, b, cfg.relax_steps, cfg.inner_steps)


@dataclass
class FasResult:
    x: np.ndarray
    cycles: int
    residuals: list
    non_monotone: list = field(default_factory=list)
    coarse_picard: int = 0


def fas_solve(prob: NonlinearProblem, cfg: FasConfig = None, x0=None) -> FasResult:
    """V-cycles until ``||r|| <= max(rel_tol ||r0||, abs_tol)`` on the fine level."""
    cfg = FasConfig() if cfg is None else cfg
    if prob.depth < 1:
        raise ValueError("FAS needs a hierarchy with at least one coarse level")
    b = prob.b0
    x = prob.zero(0) if x0 is None else np.array(x0, dtype=float)
    res = [float(np.linalg.norm(eval_residual(prob, 0, x, b)))]
    stop = max(cfg.rel_tol * res[0], cfg.abs_tol)
    stats = {}
    flagged = []
    while res[-1] > stop:
        if len(res) - 1 >= cfg.max_cycles:
            raise ConvergenceError(f"FAS did not converge in {cfg.max_cycles} cycles", x, res)
        x = fas_vcycle(prob, 0, x, b, cfg, stats)
        res.append(float(np.linalg.norm(eval_residual(prob, 0, x, b))))
        if res[-1] >= res[-2]:
            flagged.append(len(res) - 1)
            log.warning("FAS cycle %d did not reduce the residual", len(res) - 1)
    return FasResult(x, len(res) - 1, res, flagged, stats.get("coarse_picard", 0))


def unit_square_problem(n: int = 48, alpha: float = 5.0, source: float = 1.0, sigma2: float = 1.0,
                        corr: float = 10.0, seed: int = 0, spec: CoarsenSpec = None,
                        variant: str = "galerkin") -> NonlinearProblem:
    """Unit square, zero pressure on all sides, seeded lognormal ``kappa0``,
    constant source (integrated over each cell)."""
    from .mlmc import FieldSampler, FieldSpec

    grid = TpfaGrid((n, n), boundary={s: 0.0 for s in ("xmin", "xmax", "ymin", "ymax")})
    fs = FieldSpec(sigma2=sigma2, corr=corr, seed=seed)
    grid.perm = FieldSampler(grid.centers(), fs).sample(np.random.default_rng(seed))
    _, fine = assemble_tpfa(grid)
    spec = CoarsenSpec(max_levels=2, coarsening_factor=28, m_A=1) if spec is None else spec
    h = build_hierarchy(fine, spec)
    f = np.full(grid.n_cells, source * np.prod(grid.h))
    return NonlinearProblem(h, grid, alpha, f, variant)


def report(prob: NonlinearProblem, fas: FasResult, picard_iters: int = None, picard_res=None) -> dict:
    out = {
        "alpha": prob.alpha,
        "m_A": prob.h.spec.m_A,
        "levels": prob.h.n_levels,
        "dof_counts": [list(d) for d in prob.h.dof_counts()],
        "operator_complexity": prob.h.operator_complexity(),
        "fas_cycles": fas.cycles,
        "fas_residuals": fas.residuals,
        "fas_non_monotone_cycles": fas.non_monotone,
        "variant": prob.variant,
    }
    if picard_iters is not None:
        out["picard_iterations"] = picard_iters
        out["picard_residuals"] = picard_res
    return out


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
