"""Multilevel Monte Carlo for a boundary-flux functional of lognormal Darcy flow.

One hierarchy is built at unit permeability; every sample only rescales the
fine edge weights and re-forms the coarse mass matrices with the stored
transfers.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .coarsen import Hierarchy, galerkin_masses
from .graph import SIDES, TpfaGrid, tpfa_weights
from .numerics import SaddleFactor

PILOT = 15


@dataclass
class FieldSpec:
    """Gaussian log-permeability with covariance ``sigma2 * exp(-corr * d)``.

    ``d`` is the Euclidean distance after dividing each axis by ``anisotropy``.
    """

    sigma2: float = 1.0
    corr: float = 10.0
    anisotropy: Optional[Sequence[float]] = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if not self.corr > 0:
            raise ValueError("corr must be > 0")


class FieldSampler:
    """Cached Cholesky factor of the covariance on a fixed set of cell centers."""

    def __init__(self, coords: np.ndarray, spec: FieldSpec):
        self.spec = spec
        x = np.asarray(coords, dtype=float)
        if spec.anisotropy is not None:
            x = x / np.asarray(spec.anisotropy, dtype=float)[: x.shape[1]]
        self.n = x.shape[0]
        if spec.sigma2 == 0:
            self.L = None
            return
        C = spec.sigma2 * np.exp(-spec.corr * cdist(x, x))
        try:
            self.L = sla.cholesky(C, lower=True)
        except sla.LinAlgError:
            C[np.diag_indices_from(C)] += 1e-10 * spec.sigma2
            self.L = sla.cholesky(C, lower=True)

    def log_field(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        k = 1 if size is None else size
        if self.L is None:
            z = np.zeros((self.n, k))
        else:
            z = self.L @ rng.standard_normal((self.n, k))
        return z[:, 0] if size is None else z.T

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.exp(self.log_field(rng))


def sample_field(grid: TpfaGrid, spec: FieldSpec, sampler: FieldSampler = None) -> np.ndarray:
    """One cellwise permeability draw ``exp(theta)``, deterministic in ``spec.seed``."""
    sampler = FieldSampler(grid.centers(), spec) if sampler is None else sampler
    return sampler.sample(np.random.default_rng(spec.seed))


def sample_rng(seed: int, level: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` of level ``level``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(level), int(index)]))


def _side_index(grid: TpfaGrid, side) -> int:
    s = SIDES.index(side) if isinstance(side, str) else int(side)
    if SIDES[s] not in grid.pressure_sides():
        raise ValueError(f"side {SIDES[s]!r} carries no pressure boundary")
    return s


def qoi_flux(sigma: np.ndarray, fine, grid: TpfaGrid, side="ymax") -> float:
    """Sum of the fine boundary-edge fluxes through ``side``."""
    s = _side_index(grid, side)
    return float(np.sum(sigma[fine.boundary_dofs(s)]))


class FluxProblem:
    """Solves at every level of ``h`` for a given permeability field."""

    def __init__(self, h: Hierarchy, grid: TpfaGrid, side="ymax"):
        self.h = h
        self.grid = grid
        self.fine = h.fine
        s = _side_index(grid, side)
        sel = np.zeros(h.levels[0].n_edge_dofs)
        sel[self.fine.boundary_dofs(s)] = 1.0
        # QoI of an interpolated coarse flux: sel^T P_sigma(comp) sigma_c
        self.qoi_rows = [h.project_sigma_T(sel, ell) for ell in range(h.n_levels)]
        g0 = self.fine.rhs_sigma()
        self.g = [h.project_sigma_T(g0, ell) for ell in range(h.n_levels)]
        self.f = [np.zeros(lev.n_vertex_dofs) for lev in h.levels]
        self.mode = self.fine.nullspace_mode()

    def weights(self, kappa):
        return tpfa_weights(self.grid, kappa)

    def masses(self, kappa, top: int) -> list:
        """``M^0..M^top`` for permeability ``kappa``."""
        w = self.weights(kappa)
        sub = self.h if top >= self.h.depth else _truncated(self.h, top)
        return galerkin_masses(sub, w)

    def qoi(self, M, level: int) -> float:
        lev = self.h.levels[level]
        null = lev.ones if self.mode == "mean_zero" else None
        fac = SaddleFactor(M, lev.D, self.mode, null)
        sigma, _ = fac.solve(self.g[level], -self.f[level])
        return float(self.qoi_rows[level] @ sigma)

    def level_pair(self, kappa, level: int):
        top = min(level + 1, self.h.depth)
        Ms = self.masses(kappa, top)
        q_fine = self.qoi(Ms[level], level)
        q_coarse = self.qoi(Ms[level + 1], level + 1) if level < self.h.depth else None
        return q_fine, q_coarse


def _truncated(h: Hierarchy, top: int) -> Hierarchy:
    import dataclasses

    return dataclasses.replace(h, levels=h.levels[: top + 1], transfers=h.transfers[:top], partitions=h.partitions[:top])


def level_sample(prob: FluxProblem, kappa, level: int):
    """``(Q_l, Q_{l+1})`` from the same permeability; ``Q_{L+1}`` is ``None``."""
    return prob.level_pair(kappa, level)


@dataclass
class LevelStats:
    N: int = 0
    sum_y: float = 0.0
    cost: float = 0.0
    samples: list = field(default_factory=list)
    times: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return self.sum_y / self.N if self.N else 0.0

    @property
    def var(self) -> float:
        if self.N < 2:
            return 0.0
        y = np.asarray(self.samples)
        return float(np.var(y, ddof=1))


@dataclass
class MlmcState:
    levels: list
    seed: int
    mse_target: float = None

    @property
    def estimate(self) -> float:
        return float(sum(s.mean for s in self.levels))

    @property
    def variance(self) -> float:
        return float(sum(s.var / s.N for s in self.levels if s.N))

    def counts(self) -> list:
        return [s.N for s in self.levels]


class MlmcSampler:
    """Draws coupled corrections ``Y_l`` with per-sample random streams."""

    def __init__(self, prob: FluxProblem, field_spec: FieldSpec, cost_model: str = "nnz"):
        if cost_model not in ("nnz", "time"):
            raise ValueError("cost_model must be 'nnz' or 'time'")
        self.prob = prob
        self.spec = field_spec
        self.cost_model = cost_model
        self.sampler = FieldSampler(prob.grid.centers(), field_spec)
        h = prob.h
        nnz = [lev.nnz() for lev in h.levels]
        self.nnz_cost = [nnz[ell] + (nnz[ell + 1] if ell < h.depth else 0) for ell in range(h.n_levels)]
        self.trace = []

    def kappa(self, level: int, index: int) -> np.ndarray:
        return self.sampler.sample(sample_rng(self.spec.seed, level, index))

    def draw(self, level: int, index: int):
        kappa = self.kappa(level, index)
        t0 = time.perf_counter()
        qf, qc = level_sample(self.prob, kappa, level)
        dt = time.perf_counter() - t0
        y = qf - qc if qc is not None else qf
        self.trace.append((level, index, qf, qc, y))
        return y, qf, qc, dt

    def extend(self, state: MlmcState, level: int, n_new: int) -> None:
        st = state.levels[level]
        for i in range(st.N, st.N + n_new):
            y, _, _, dt = self.draw(level, i)
            st.samples.append(y)
            st.sum_y += y
            st.times.append(dt)
        st.N += n_new
        if self.cost_model == "nnz":
            st.cost = float(self.nnz_cost[level])
        elif st.times:
            st.cost = float(np.median(st.times))


def optimal_counts(var, cost, mse_target: float) -> list:
    """``N_l = ceil(2/mse * sqrt(V_l/C_l) * sum_k sqrt(V_k C_k))``."""
    var = np.maximum(np.asarray(var, float), 0.0)
    cost = np.asarray(cost, float)
    total = np.sum(np.sqrt(var * cost))
    return [int(math.ceil(2.0 / mse_target * math.sqrt(v / c) * total)) for v, c in zip(var, cost)]


def mlmc_run(prob: FluxProblem, field_spec: FieldSpec, mse_target: float, pilot: int = PILOT,
             cost_model: str = "nnz", max_rounds: int = 20) -> MlmcState:
    """Adaptive telescoping estimator of ``E[Q_0]``; variance held below ``mse_target/2``."""
    if not mse_target > 0:
        raise ValueError("mse_target must be positive")
    L = prob.h.n_levels
    state = MlmcState([LevelStats() for _ in range(L)], field_spec.seed, mse_target)
    sampler = MlmcSampler(prob, field_spec, cost_model)
    for ell in range(L):
        sampler.extend(state, ell, pilot)
    for _ in range(max_rounds):
        want = optimal_counts([s.var for s in state.levels], [s.cost for s in state.levels], mse_target)
        extra = [max(w - s.N, 0) for w, s in zip(want, state.levels)]
        if not any(extra):
            break
        for ell, n in enumerate(extra):
            if n:
                sampler.extend(state, ell, n)
    state.sampler = sampler
    return state


def fixed_run(prob: FluxProblem, field_spec: FieldSpec, n_per_level) -> tuple:
    """Fixed sample counts; returns the state and ``(Q_l, Q_{l+1})`` pairs per level."""
    L = prob.h.n_levels
    if np.isscalar(n_per_level):
        n_per_level = [int(n_per_level)] * L
    state = MlmcState([LevelStats() for _ in range(L)], field_spec.seed)
    sampler = MlmcSampler(prob, field_spec)
    for ell in range(L):
        sampler.extend(state, ell, n_per_level[ell])
    pairs = [[(t[2], t[3]) for t in sampler.trace if t[0] == ell] for ell in range(L)]
    return state, pairs


def report(state: MlmcState, extra: dict = None) -> dict:
    """JSON-ready summary; ``levels`` runs from the finest to the coarsest level."""
    out = {
        "estimate": state.estimate,
        "estimator_variance": state.variance,
        "mse_target": state.mse_target,
        "seed": state.seed,
        "sample_counts": state.counts(),
        "levels": [
            {"level": ell, "N": s.N, "mean_Y": s.mean, "var_Y": s.var, "cost": s.cost}
            for ell, s in enumerate(state.levels)
        ],
    }
    if extra:
        out.update(extra)
    return out


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace(path, sampler: MlmcSampler) -> None:
    with open(path, "w") as fh:
        fh.write("level,index,Q_fine,Q_coarse,Y\n")
        for lvl, idx, qf, qc, y in sampler.trace:
            qc_s = "" if qc is None else repr(float(qc))
            fh.write(f"{lvl},{idx},{float(qf)!r},{qc_s},{float(y)!r}\n")


def unit_square(n: int = 32, top: float = -1.0, bottom: float = 0.0) -> TpfaGrid:
    """Unit square with pressure ``top`` on ``ymax``, ``bottom`` on ``ymin``, no flux elsewhere."""
    return TpfaGrid((n, n), boundary={"ymax": top, "ymin": bottom})
