"""Multilevel upscaling: solve on a coarse level, interpolate to the fine level."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .coarsen import CoarsenSpec, Hierarchy, build_hierarchy
from .numerics import SaddleFactor

CSV_COLUMNS = ("level", "m_A", "vertex_dofs", "edge_dofs", "rel_err_u", "rel_err_sigma", "seconds")


def coarse_rhs(h: Hierarchy, f, level: int) -> np.ndarray:
    """``Q_u^{l-1} ... Q_u^0 f``."""
    if not 0 <= level <= h.depth:
        raise ValueError(f"level must lie in [0, {h.depth}]")
    return h.restrict_u(np.asarray(f, dtype=float), level)


def level_factor(h: Hierarchy, level: int, M=None) -> SaddleFactor:
    lev = h.levels[level]
    mode = h.fine.nullspace_mode()
    return SaddleFactor(lev.M if M is None else M, lev.D, mode, lev.ones if mode == "mean_zero" else None)


def solve_level(h: Hierarchy, f, level: int, g=None, factor=None):
    """Level-``level`` solution ``(sigma, u)`` of ``[M D^T; D 0] = [g; -f]`` in coarse dofs."""
    f_c = coarse_rhs(h, f, level)
    g0 = h.fine.rhs_sigma() if g is None else np.asarray(g, dtype=float)
    g_c = h.project_sigma_T(g0, level)
    fac = level_factor(h, level) if factor is None else factor
    return fac.solve(g_c, -f_c)


def upscale_solve(h: Hierarchy, f, level: int, g=None):
    """Level-``level`` solve interpolated through every intermediate level to the fine level."""
    sigma_c, u_c = solve_level(h, f, level, g)
    return h.prolong_u(u_c, level), h.prolong_sigma(sigma_c, level)


@dataclass
class UpscaleRow:
    level: int
    m_A: int
    vertex_dofs: int
    edge_dofs: int
    rel_err_u: float
    rel_err_sigma: float
    seconds: float = float("nan")

    def as_tuple(self, with_time: bool = True):
        sec = f"{self.seconds:.6f}" if with_time else ""
        return (self.level, self.m_A, self.vertex_dofs, self.edge_dofs, f"{self.rel_err_u:.17g}", f"{self.rel_err_sigma:.17g}", sec)


def relative_errors(h: Hierarchy, u_ref, sigma_ref, u, sigma):
    """Euclidean error for ``u`` and ``M^0``-weighted error for ``sigma``."""
    M0 = h.levels[0].M
    du, ds = u - u_ref, sigma - sigma_ref
    nu = np.linalg.norm(u_ref)
    ns = np.sqrt(sigma_ref @ (M0 @ sigma_ref))
    eu = np.linalg.norm(du) / nu if nu > 0 else np.linalg.norm(du)
    es = np.sqrt(max(ds @ (M0 @ ds), 0.0)) / ns if ns > 0 else np.sqrt(max(ds @ (M0 @ ds), 0.0))
    return float(eu), float(es)


def upscale_report(h: Hierarchy, f, g=None, levels=None) -> list:
    """One :class:`UpscaleRow` per coarse level (level 0 is the reference)."""
    u0, s0 = upscale_solve(h, f, 0, g)
    rows = []
    for ell in levels if levels is not None else range(1, h.n_levels):
        t0 = time.perf_counter()
        u, s = upscale_solve(h, f, ell, g)
        dt = time.perf_counter() - t0
        eu, es = relative_errors(h, u0, s0, u, s)
        lev = h.levels[ell]
        rows.append(UpscaleRow(ell, h.spec.m_A, lev.n_vertex_dofs, lev.n_edge_dofs, eu, es, dt))
    return rows


def sweep_mA(fine, spec: CoarsenSpec, f, m_A_list, g=None) -> list:
    """Rebuild the hierarchy for each ``m_A`` and tabulate the upscaling errors."""
    rows = []
    for m in m_A_list:
        h = build_hierarchy(fine, CoarsenSpec(**{**spec.__dict__, "m_A": int(m)}))
        rows.extend(upscale_report(h, f, g))
    return rows


def write_csv(path, rows, with_time: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_tuple(with_time))


def fiedler_rhs(g):
    """Source ``lam * v`` whose exact potential is the Fiedler vector ``v``."""
    from .graph import fiedler_vector

    lam, v = fiedler_vector(g)
    return lam * v, v
