"""Runtime invariants of a coarsening step and of a whole hierarchy."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

TOL_IDENTITY = 1e-11
TOL_COMMUTE = 1e-11
TOL_NULL = 1e-11
TOL_BUBBLE = 1e-10
TOL_PV = 1e-12
TOL_ORTH = 1e-11


class InvariantError(AssertionError):
    pass


def _maxabs(A) -> float:
    if sp.issparse(A):
        A = A.tocoo()
        return float(np.abs(A.data).max(initial=0.0))
    return float(np.abs(np.asarray(A)).max(initial=0.0))


def identity_gap(Q, P) -> float:
    """``max |Q P - I|``."""
    R = sp.csr_matrix(Q @ P) - sp.identity(P.shape[1], format="csr")
    return _maxabs(R)


def commutativity_gap(fine, coarse, ops) -> float:
    """``max |Q_u D - D+ Q_sigma| / max |D|``."""
    R = sp.csr_matrix(ops.Q_u @ fine.D) - sp.csr_matrix(coarse.D @ ops.Q_sigma)
    return _maxabs(R) / max(_maxabs(fine.D), 1e-300)


def d_null_gap(level, part, rng=None, n_samples=None) -> float:
    """``max |(D_B)^T 1_B|`` over aggregates ``B`` of ``part`` on ``level``.

    ``D_B`` is the block of ``D`` on the vertex dofs and interior edge dofs of ``B``.
    """
    from .coarsen import AggregateTopology

    topo = AggregateTopology(level, part)
    ids = np.arange(len(topo.aggs))
    if n_samples is not None and n_samples < len(ids):
        rng = rng if rng is not None else np.random.default_rng(0)
        ids = np.sort(rng.choice(ids, n_samples, replace=False))
    worst = 0.0
    for a in ids:
        rec = topo.aggs[a]
        if len(rec.S) == 0:
            continue
        DB = level.D[rec.U][:, rec.S]
        worst = max(worst, float(np.abs(DB.T @ level.ones[rec.U]).max()))
    return worst


def d_null_rank_ok(level, part, max_dofs: int = 200) -> bool:
    """For small aggregates, check ``ker(D_B^T)`` is one-dimensional."""
    from .coarsen import AggregateTopology

    topo = AggregateTopology(level, part)
    for rec in topo.aggs:
        if len(rec.U) + len(rec.S) > max_dofs:
            continue
        DB = level.D[rec.U][:, rec.S].toarray()
        rank = np.linalg.matrix_rank(DB) if DB.size else 0
        if len(rec.U) - rank != 1:
            return False
    return True


def bubble_gap(level, ops) -> float:
    worst = 0.0
    for rec in ops.aggregates:
        if rec.bubbles is None or rec.bubbles.shape[1] == 0:
            continue
        DA = level.D[rec.U][:, rec.S].toarray()
        worst = max(worst, float(np.abs(DA @ rec.bubbles - rec.P_npv).max()))
    return worst


def pv_margin(level, ops) -> float:
    """Smallest ``|q_PV^T D_{A,F} sigma_PV|`` over all faces and their sides."""
    worst = np.inf
    for face in ops.faces:
        for a, c in face.c.items():
            worst = min(worst, abs(float(c[0])))
    return worst


def npv_trace_gap(level, ops) -> float:
    """Largest ``|q_PV^T D_{A,F} sigma|`` for a non-PV trace ``sigma``."""
    worst = 0.0
    for face in ops.faces:
        for a, c in face.c.items():
            if len(c) > 1:
                worst = max(worst, float(np.abs(c[1:]).max()))
    return worst


def pv_side_gap(ops) -> float:
    return max((f.pv_side_gap for f in ops.faces), default=0.0)


def const_in_range_gap(level, ops) -> float:
    """Distance of ``1_A`` from the range of each ``P_u`` block."""
    worst = 0.0
    for rec in ops.aggregates:
        one = level.ones[rec.U]
        B = rec.P_u
        worst = max(worst, float(np.abs(one - B @ (B.T @ one)).max()))
    return worst


def step_report(fine, coarse, ops, part=None, rng=None, n_samples=None) -> dict:
    rep = {
        "QuPu": identity_gap(ops.Q_u, ops.P_u),
        "QsPs": identity_gap(ops.Q_sigma, ops.P_sigma),
        "commute": commutativity_gap(fine, coarse, ops),
        "bubble_div": bubble_gap(fine, ops),
        "pv_min": pv_margin(fine, ops),
        "npv_trace": npv_trace_gap(fine, ops),
        "pv_side": pv_side_gap(ops),
        "const_range": const_in_range_gap(fine, ops),
        "M_sym": _maxabs(coarse.M - coarse.M.T),
    }
    if part is not None:
        rep["d_null"] = d_null_gap(fine, part, rng, n_samples)
    return rep


def violations(rep: dict) -> list:
    """Names of the entries of a step report that exceed their tolerance."""
    limits = {
        "QuPu": TOL_IDENTITY,
        "QsPs": TOL_IDENTITY,
        "commute": TOL_COMMUTE,
        "bubble_div": TOL_BUBBLE,
        "npv_trace": TOL_ORTH,
        "pv_side": TOL_ORTH,
        "const_range": TOL_NULL,
        "d_null": TOL_NULL,
        "M_sym": 1e-13,
    }
    bad = [k for k, tol in limits.items() if k in rep and not rep[k] <= tol]
    if "pv_min" in rep and not rep["pv_min"] > TOL_PV:
        bad.append("pv_min")
    return bad


def check_step(fine, coarse, ops, part=None) -> dict:
    rep = step_report(fine, coarse, ops, part)
    bad = violations(rep)
    if bad:
        raise InvariantError("coarsening invariants violated: " + ", ".join(f"{k}={rep[k]:.3e}" for k in bad))
    return rep


def verify_hierarchy(h, n_samples: int = 50, seed: int = 0) -> list:
    """One step report per coarsening step; ``d_null`` covers the aggregates of
    every level (fine-level aggregates and, for the coarse levels, aggregates
    of the next partition)."""
    rng = np.random.default_rng(seed)
    reports = []
    for ell, ops in enumerate(h.transfers):
        rep = step_report(h.levels[ell], h.levels[ell + 1], ops, h.partitions[ell], rng, n_samples)
        rep["level"] = ell
        reports.append(rep)
    return reports


def corrupt_column(ops, col: int = 0, scale: float = 1.5):
    """Copy of ``ops`` whose ``P_sigma`` column ``col`` is rescaled (negative control)."""
    import dataclasses

    P = ops.P_sigma.tolil(copy=True)
    P[:, col] = P[:, col] * scale
    return dataclasses.replace(ops, P_sigma=P.tocsr())
