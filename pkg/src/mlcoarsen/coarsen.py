"""Multilevel spectral coarsening of mixed graph Laplacians.

One coarsening step turns a level ``(M, D)`` plus a vertex partition into
interpolations ``P_u``/``P_sigma``, left inverses ``Q_u``/``Q_sigma`` and the
Galerkin pair ``(P_sigma^T M P_sigma, P_u^T D P_sigma)``. Dofs are tracked per
graph entity so the step can be applied again on the coarse level.

Edge dofs of a level are laid out as ``[edge entities | vertex bubbles]``;
edge entities are interior edges followed by boundary edges (edges that hang
off a single vertex, e.g. pressure boundary faces of a TPFA grid).
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .graph import FineMixedSystem, Graph
from .numerics import LocalSaddle, as_csr, spmm, svd_columns, sym_eig
from .partition import Partition, coarse_graph, partition

log = logging.getLogger(__name__)

PV_METHODS = ("simple", "local_solve")


class CoarseningError(RuntimeError):
    """A local construction step violated one of its structural conditions."""


@dataclass
class CoarsenSpec:
    """Parameters of the coarsening.

    ``max_levels`` counts coarse levels (the hierarchy has ``max_levels + 1``
    levels including the fine one). ``face_dofs=None`` keeps every trace that
    survives the SVD; ``face_dofs=1`` keeps only the PV trace.
    """

    max_levels: int = 2
    coarsening_factor: int = 8
    m_A: int = 1
    face_dofs: Optional[int] = None
    pv_method: str = "local_solve"
    spectral_tol: Optional[float] = None
    svd_tol: float = 1e-9
    seed: int = 0
    check: bool = True

    def __post_init__(self):
        if self.max_levels < 0:
            raise ValueError("max_levels must be >= 0")
        if self.coarsening_factor < 1:
            raise ValueError("coarsening_factor must be >= 1")
        if self.m_A < 1:
            raise ValueError("m_A must be >= 1")
        if self.face_dofs is not None and self.face_dofs < 1:
            raise ValueError("face_dofs must be >= 1")
        if self.pv_method not in PV_METHODS:
            raise ValueError(f"pv_method must be one of {PV_METHODS}")


def _ranges(offsets: np.ndarray, ids) -> np.ndarray:
    """Concatenate ``arange(offsets[i], offsets[i+1])`` over ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    starts = offsets[ids]
    lens = offsets[ids + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    shift = np.repeat(starts - np.r_[0, np.cumsum(lens)[:-1]], lens)
    return shift + np.arange(total)


@dataclass
class Level:
    """Operators of one level together with the entity-to-dof bookkeeping."""

    graph: Graph
    bnd_vertex: np.ndarray
    bnd_attr: np.ndarray
    vertex_offsets: np.ndarray
    edge_offsets: np.ndarray
    bubble_offsets: np.ndarray
    M: sp.csr_matrix
    D: sp.csr_matrix
    ones: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.graph.n_vertices

    @property
    def n_interior_edges(self) -> int:
        return self.graph.n_edges

    @property
    def n_edge_entities(self) -> int:
        return self.graph.n_edges + len(self.bnd_vertex)

    @property
    def n_vertex_dofs(self) -> int:
        return int(self.vertex_offsets[-1])

    @property
    def n_edge_dofs(self) -> int:
        return int(self.bubble_offsets[-1])

    def vertex_dofs(self, verts) -> np.ndarray:
        return _ranges(self.vertex_offsets, verts)

    def edge_dofs(self, edge_ids) -> np.ndarray:
        return _ranges(self.edge_offsets, edge_ids)

    def bubble_dofs(self, verts) -> np.ndarray:
        return _ranges(self.bubble_offsets, verts)

    def boundary_edge_dofs(self, attr: int) -> np.ndarray:
        ids = self.n_interior_edges + np.flatnonzero(self.bnd_attr == attr)
        return self.edge_dofs(ids)

    def nnz(self) -> int:
        return int(self.M.nnz + 2 * self.D.nnz)


def fine_level(fine: FineMixedSystem) -> Level:
    n_v = fine.graph.n_vertices
    n_e = fine.n_edge_dofs
    return Level(
        graph=fine.graph,
        bnd_vertex=np.asarray(fine.bnd_vertex, np.int64),
        bnd_attr=np.asarray(fine.bnd_attr, np.int64),
        vertex_offsets=np.arange(n_v + 1),
        edge_offsets=np.arange(n_e + 1),
        bubble_offsets=np.full(n_v + 1, n_e),
        M=as_csr(fine.M0),
        D=as_csr(fine.D0),
        ones=np.ones(n_v),
    )


@dataclass
class AggregateRecord:
    vertices: np.ndarray
    U: np.ndarray  # vertex dofs of the aggregate
    S: np.ndarray  # edge dofs inside the aggregate (interior edges, then bubbles)
    q_pv: np.ndarray = None
    P_npv: np.ndarray = None
    eigvals: np.ndarray = None
    # flux responses (M_N^{-1} D_N^T q) of the selected eigenvectors on Sigma(N(A))
    responses: np.ndarray = None
    response_scale: float = 0.0
    S_N: np.ndarray = None
    bubbles: np.ndarray = None
    solver: LocalSaddle = None

    @property
    def P_u(self) -> np.ndarray:
        return np.column_stack([self.q_pv, self.P_npv])


@dataclass
class FaceRecord:
    aggs: tuple  # (i, j); j == -1 for a boundary face
    entities: np.ndarray
    S: np.ndarray
    sigma_pv: np.ndarray = None
    traces: np.ndarray = None
    Q_rows: np.ndarray = None
    c: dict = field(default_factory=dict)
    extensions: dict = field(default_factory=dict)
    pv_side_gap: float = 0.0

    @property
    def is_boundary(self) -> bool:
        return self.aggs[1] < 0


class AggregateTopology:
    """Dof index sets of aggregates, neighbourhoods and faces of one level."""

    def __init__(self, level: Level, part: Partition):
        self.level = level
        self.partition = part
        assign = part.assignment
        self.assign = assign
        g = level.graph
        e = g.edges
        n_v = g.n_vertices
        self.incidence = sp.csr_matrix(
            (np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[np.arange(len(e)), np.arange(len(e))])),
            shape=(n_v, len(e)),
        )
        self.adjacency = g.adjacency().tocsr()
        inside = assign[e[:, 0]] == assign[e[:, 1]]
        int_by_agg = [[] for _ in range(part.n_aggregates)]
        for k in np.flatnonzero(inside):
            int_by_agg[assign[e[k, 0]]].append(k)
        self.aggs = []
        for a, verts in enumerate(part.aggregates()):
            U = level.vertex_dofs(verts)
            S = np.r_[level.edge_dofs(np.asarray(int_by_agg[a], np.int64)), level.bubble_dofs(verts)]
            self.aggs.append(AggregateRecord(verts, U, S.astype(np.int64)))
        self.faces = []
        for (i, j), ents in zip(part.faces, part.face_edges):
            self.faces.append(FaceRecord((int(i), int(j)), ents, level.edge_dofs(ents)))
        if len(level.bnd_vertex):
            b_agg = assign[level.bnd_vertex]
            keys = sorted(set(zip(b_agg.tolist(), level.bnd_attr.tolist())))
            for a, attr in keys:
                ents = g.n_edges + np.flatnonzero((b_agg == a) & (level.bnd_attr == attr))
                f = FaceRecord((int(a), -1), ents, level.edge_dofs(ents))
                f.attr = int(attr)
                self.faces.append(f)
        self._mask = np.zeros(n_v, bool)

    def neighborhood(self, a: int):
        """Vertex dofs, edge dofs and boundary edge dofs of ``N(A)``
        (``A`` plus distance-1 vertices)."""
        verts = self.aggs[a].vertices
        nbrs = np.unique(np.r_[verts, self.adjacency[verts].indices])
        self._mask[nbrs] = True
        cand = np.unique(self.incidence[nbrs].indices)
        e = self.level.graph.edges
        keep = cand[self._mask[e[cand, 0]] & self._mask[e[cand, 1]]]
        # boundary edges hang off a single vertex
        bnd = self.level.n_interior_edges + np.flatnonzero(self._mask[self.level.bnd_vertex])
        self._mask[nbrs] = False
        U = self.level.vertex_dofs(nbrs)
        S = np.r_[self.level.edge_dofs(keep), self.level.bubble_dofs(nbrs)].astype(np.int64)
        return nbrs, U, S, self.level.edge_dofs(bnd).astype(np.int64)


def _dense(A: sp.csr_matrix, rows, cols) -> np.ndarray:
    """Dense ``A[rows][:, cols]`` gathered straight from the CSR arrays."""
    out = np.zeros((len(rows), len(cols)))
    if len(rows) == 0 or len(cols) == 0:
        return out
    rows = np.asarray(rows, dtype=np.int64)
    pos = _ranges(A.indptr, rows)
    rid = np.repeat(np.arange(len(rows)), A.indptr[rows + 1] - A.indptr[rows])
    colmap = np.full(A.shape[1], -1, dtype=np.int64)
    colmap[cols] = np.arange(len(cols))
    c = colmap[A.indices[pos]]
    hit = c >= 0
    np.add.at(out, (rid[hit], c[hit]), A.data[pos[hit]])
    return out


def _positions(sub: np.ndarray, full: np.ndarray) -> np.ndarray:
    """Index of each entry of ``sub`` inside ``full`` (both without repeats)."""
    order = np.argsort(full)
    pos = np.searchsorted(full[order], sub)
    if np.any(pos >= len(full)) or np.any(full[order][np.minimum(pos, len(full) - 1)] != sub):
        raise CoarseningError("index set is not contained in its neighbourhood")
    return order[pos]


def _unit_columns(X: np.ndarray, scale: float, floor: float = 1e-10) -> np.ndarray:
    """Normalized columns of ``X``; columns below ``floor * scale`` are rounding noise."""
    if X.size == 0:
        return X
    nrm = np.linalg.norm(X, axis=0)
    keep = nrm > floor * scale
    return X[:, keep] / nrm[keep]


def vertex_basis(topo: AggregateTopology, spec: CoarsenSpec) -> list:
    """Local spectral vertex bases, one block ``[q_PV | P_NPV]`` per aggregate."""
    level = topo.level
    for a, rec in enumerate(topo.aggs):
        nbrs, U_N, S_N, B_N = topo.neighborhood(a)
        if len(U_N) == 0:
            raise CoarseningError(f"aggregate {a} has an empty neighbourhood")
        # graph Laplacian of N(A) from its interior edges only
        D_N = _dense(level.D, U_N, S_N)
        M_N = _dense(level.M, S_N, S_N)
        if len(S_N):
            L_N = D_N @ sla.cho_solve(sla.cho_factor(M_N), D_N.T)
        else:
            L_N = np.zeros((len(U_N), len(U_N)))
        lam, V = sym_eig(0.5 * (L_N + L_N.T), sym_tol=1e-8)
        if spec.spectral_tol is not None:
            k = max(1, int(np.sum(lam <= spec.spectral_tol * max(lam[-1], 0.0))))
        else:
            k = min(spec.m_A, len(lam))
        sel = V[:, :k]
        rec.eigvals = lam[:k]
        # flux responses also reach the boundary edges of N(A)
        S_R = np.r_[S_N, B_N]
        if len(S_R):
            X = sla.cho_solve(sla.cho_factor(_dense(level.M, S_R, S_R)), _dense(level.D, U_N, S_R).T)
        else:
            X = np.zeros((0, len(U_N)))
        rec.S_N = S_R
        rec.responses = X @ sel
        rec.response_scale = float(np.abs(X).max(initial=0.0)) * np.sqrt(max(len(U_N), 1))
        ones_A = level.ones[rec.U]
        q = ones_A / np.linalg.norm(ones_A)
        R = sel[_positions(rec.U, U_N)]
        R = _unit_columns(R, 1.0)
        R = R - np.outer(q, q @ R)
        npv = svd_columns(R, spec.svd_tol, reference=1.0) if R.size else np.zeros((len(q), 0))
        npv = npv[:, : max(k - 1, 0)]
        if npv.shape[1]:
            # rounding in weak singular directions leaks back along q
            npv, _ = np.linalg.qr(npv - np.outer(q, q @ npv))
        rec.q_pv = q
        rec.P_npv = npv
    return topo.aggs


def pv_trace(topo: AggregateTopology, f: int, method: str = "local_solve") -> np.ndarray:
    """PV trace on face ``f`` satisfying ``q_PV^T D_{A,F} sigma != 0``."""
    level = topo.level
    face = topo.faces[f]
    i, j = face.aggs
    Ai = topo.aggs[i]
    if method == "simple" or face.is_boundary:
        sigma = _dense(level.D, Ai.U, face.S).T @ Ai.q_pv
    elif method == "local_solve":
        Aj = topo.aggs[j]
        U = np.r_[Ai.U, Aj.U]
        S = np.r_[Ai.S, Aj.S, face.S]
        ones_i, ones_j = level.ones[Ai.U], level.ones[Aj.U]
        g = np.r_[-ones_i / (ones_i @ ones_i), ones_j / (ones_j @ ones_j)]
        solver = LocalSaddle(_dense(level.M, S, S), _dense(level.D, U, S), level.ones[U])
        sig, _ = solver.solve(np.zeros(len(S)), g)
        sigma = sig[len(Ai.S) + len(Aj.S) :, 0]
    else:
        raise ValueError(f"unknown pv_method {method!r}")
    c = Ai.q_pv @ _dense(level.D, Ai.U, face.S) @ sigma
    if not abs(c) > 1e-12:
        raise CoarseningError(f"PV condition violated on face {f}: {c:.3e}")
    return sigma


def face_traces(topo: AggregateTopology, f: int, spec: CoarsenSpec) -> np.ndarray:
    """Trace matrix ``[sigma_PV | non-PV traces]`` of face ``f`` and its projection rows."""
    level = topo.level
    face = topo.faces[f]
    i, j = face.aggs
    Ai = topo.aggs[i]
    sigma_pv = pv_trace(topo, f, spec.pv_method)
    DiF = _dense(level.D, Ai.U, face.S)
    row_pv = Ai.q_pv @ DiF
    c_pv = row_pv @ sigma_pv
    q_pv_row = row_pv / c_pv
    npv = np.zeros((len(face.S), 0))
    want = None if spec.face_dofs is None else spec.face_dofs - 1
    if want is None or want > 0:
        cands, scale = [], 0.0
        for a in (i,) if face.is_boundary else (i, j):
            rec = topo.aggs[a]
            cands.append(rec.responses[_positions(face.S, rec.S_N)])
            scale = max(scale, rec.response_scale)
        C = _unit_columns(np.column_stack(cands), scale)
        C = C - np.outer(sigma_pv, q_pv_row @ C)
        if C.size:
            npv = svd_columns(C, spec.svd_tol, reference=1.0)
        if want is not None:
            npv = npv[:, :want]
        npv = npv - np.outer(sigma_pv, q_pv_row @ npv)
    traces = np.column_stack([sigma_pv, npv])
    # projection rows: PV row, then least-squares rows on the PV-free part
    proj = np.eye(len(face.S)) - np.outer(sigma_pv, q_pv_row)
    if npv.shape[1]:
        q_npv = np.linalg.solve(npv.T @ npv, npv.T @ proj)
        Q_rows = np.vstack([q_pv_row, q_npv])
    else:
        Q_rows = q_pv_row[None, :]
    face.sigma_pv = sigma_pv
    face.traces = traces
    face.Q_rows = Q_rows
    if not face.is_boundary:
        Aj = topo.aggs[j]
        row_j = Aj.q_pv @ _dense(level.D, Aj.U, face.S)
        face.pv_side_gap = float(np.abs(row_j / (row_j @ sigma_pv) - q_pv_row).max())
    return traces


def _local_solver(topo: AggregateTopology, a: int) -> LocalSaddle:
    rec = topo.aggs[a]
    if rec.solver is None:
        level = topo.level
        rec.solver = LocalSaddle(_dense(level.M, rec.S, rec.S), _dense(level.D, rec.U, rec.S), level.ones[rec.U])
    return rec.solver


def extend_trace(topo: AggregateTopology, a: int, f: int, sigma_F: np.ndarray, tol: float = 1e-10):
    """Harmonic extension of face traces into aggregate ``a``.

    Returns ``(sigma_A, c_A)`` with one column/entry per trace column.
    """
    level = topo.level
    rec = topo.aggs[a]
    face = topo.faces[f]
    T = np.atleast_2d(np.asarray(sigma_F, float).T).T
    DaF = _dense(level.D, rec.U, face.S)
    MaF = _dense(level.M, rec.S, face.S)
    flux_in = DaF @ T
    c = rec.q_pv @ flux_in
    rhs_u = np.outer(rec.q_pv, c) - flux_in
    sigma_A, _ = _local_solver(topo, a).solve(-MaF @ T, rhs_u)
    if len(rec.S):
        resid = _dense(level.D, rec.U, rec.S) @ sigma_A - rhs_u
    else:
        resid = rhs_u
    scale = 1.0 + np.abs(rhs_u).max(initial=0.0)
    if np.abs(resid).max(initial=0.0) > tol * scale:
        raise CoarseningError(f"divergence identity of the extension fails in aggregate {a}")
    return sigma_A, c


def bubbles(topo: AggregateTopology, a: int, tol: float = 1e-10) -> np.ndarray:
    """Bubble fluxes in aggregate ``a`` with ``D_A @ B = P_NPV``."""
    level = topo.level
    rec = topo.aggs[a]
    k = rec.P_npv.shape[1]
    if k == 0:
        rec.bubbles = np.zeros((len(rec.S), 0))
        return rec.bubbles
    B, _ = _local_solver(topo, a).solve(np.zeros((len(rec.S), k)), rec.P_npv)
    resid = _dense(level.D, rec.U, rec.S) @ B - rec.P_npv
    if np.abs(resid).max() > tol:
        raise CoarseningError(f"bubble divergence identity fails in aggregate {a}")
    rec.bubbles = B
    return B


@dataclass
class TransferOps:
    """Interpolations, projections and the local pieces they were built from."""

    P_u: sp.csr_matrix
    P_sigma: sp.csr_matrix
    Q_u: sp.csr_matrix
    Q_sigma: sp.csr_matrix
    aggregates: list
    faces: list

    def npv_u(self) -> sp.csr_matrix:
        """``P_u`` with the PV columns zeroed (block-diagonal of the non-PV bases)."""
        rows, cols, vals = [], [], []
        col = 0
        for rec in self.aggregates:
            k = rec.P_npv.shape[1]
            r, c_ = np.meshgrid(rec.U, col + 1 + np.arange(k), indexing="ij")
            rows.append(r.ravel())
            cols.append(c_.ravel())
            vals.append(rec.P_npv.ravel())
            col += 1 + k
        return as_csr(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=self.P_u.shape))


def _block(rows, cols, vals, r_idx, c_idx, block):
    if block.size == 0:
        return
    r, c = np.meshgrid(r_idx, c_idx, indexing="ij")
    rows.append(r.ravel())
    cols.append(c.ravel())
    vals.append(np.asarray(block).ravel())


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    if not rows:
        return sp.csr_matrix(shape)
    return as_csr(sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape))


def assemble_transfers(topo: AggregateTopology) -> TransferOps:
    """Global ``P_u, P_sigma, Q_u, Q_sigma`` from the local blocks."""
    level = topo.level
    n_u, n_s = level.n_vertex_dofs, level.n_edge_dofs
    # coarse vertex dofs
    vcount = np.array([1 + r.P_npv.shape[1] for r in topo.aggs], dtype=np.int64)
    voff = np.r_[0, np.cumsum(vcount)]
    pr, pc, pv = [], [], []
    for a, rec in enumerate(topo.aggs):
        _block(pr, pc, pv, rec.U, voff[a] + np.arange(vcount[a]), rec.P_u)
    P_u = _coo(pr, pc, pv, (n_u, int(voff[-1])))
    # coarse edge dofs: traces per face, then bubbles per aggregate
    tcount = np.array([f.traces.shape[1] for f in topo.faces], dtype=np.int64)
    bcount = np.array([r.bubbles.shape[1] for r in topo.aggs], dtype=np.int64)
    toff = np.r_[0, np.cumsum(tcount)]
    boff = toff[-1] + np.r_[0, np.cumsum(bcount)]
    n_sc = int(boff[-1])
    sr, sc, sv = [], [], []
    qr, qc, qv = [], [], []
    for f, face in enumerate(topo.faces):
        cols = toff[f] + np.arange(tcount[f])
        _block(sr, sc, sv, face.S, cols, face.traces)
        for a, ext in face.extensions.items():
            _block(sr, sc, sv, topo.aggs[a].S, cols, ext)
        _block(qr, qc, qv, cols, face.S, face.Q_rows)
    for a, rec in enumerate(topo.aggs):
        cols = boff[a] + np.arange(bcount[a])
        _block(sr, sc, sv, rec.S, cols, rec.bubbles)
        if bcount[a]:
            Qb = (sp.csr_matrix(rec.P_npv.T) @ level.D[rec.U]).tocoo()
            qr.append(cols[Qb.row])
            qc.append(Qb.col)
            qv.append(Qb.data)
    P_sigma = _coo(sr, sc, sv, (n_s, n_sc))
    Q_sigma = _coo(qr, qc, qv, (n_sc, n_s))
    ops = TransferOps(P_u, P_sigma, as_csr(P_u.T), Q_sigma, topo.aggs, topo.faces)
    ops.vertex_offsets = voff
    ops.edge_offsets = toff
    ops.bubble_offsets = boff
    return ops


def rap(level: Level, ops: TransferOps, topo: AggregateTopology = None) -> Level:
    """Galerkin coarse level: ``M+ = P_s^T M P_s``, ``D+ = P_u^T D P_s``, ``1+ = Q_u 1``."""
    M_c = spmm(ops.P_sigma.T, spmm(level.M, ops.P_sigma))
    M_c = as_csr(0.5 * (M_c + M_c.T))
    D_c = spmm(ops.Q_u, spmm(level.D, ops.P_sigma))
    ones_c = ops.Q_u @ level.ones
    if topo is None:
        return dataclasses.replace(level, M=M_c, D=D_c, ones=ones_c)
    int_faces = [f for f in topo.faces if not f.is_boundary]
    bnd_faces = [f for f in topo.faces if f.is_boundary]
    g_c = coarse_graph(topo.partition)
    return Level(
        graph=g_c,
        bnd_vertex=np.array([f.aggs[0] for f in bnd_faces], dtype=np.int64),
        bnd_attr=np.array([getattr(f, "attr", 0) for f in bnd_faces], dtype=np.int64),
        vertex_offsets=ops.vertex_offsets,
        edge_offsets=ops.edge_offsets,
        bubble_offsets=ops.bubble_offsets,
        M=M_c,
        D=D_c,
        ones=ones_c,
    )


def coarsen_level(level: Level, part: Partition, spec: CoarsenSpec):
    """One full coarsening step; returns ``(TransferOps, coarse Level, topology)``."""
    topo = AggregateTopology(level, part)
    vertex_basis(topo, spec)
    for f, face in enumerate(topo.faces):
        traces = face_traces(topo, f, spec)
        sides = [face.aggs[0]] if face.is_boundary else list(face.aggs)
        for a in sides:
            ext, c = extend_trace(topo, a, f, traces)
            face.extensions[a] = ext
            face.c[a] = c
    for a in range(len(topo.aggs)):
        bubbles(topo, a)
    ops = assemble_transfers(topo)
    coarse = rap(level, ops, topo)
    for rec in topo.aggs:
        rec.solver = None
    return ops, coarse, topo


@dataclass
class Hierarchy:
    levels: list
    transfers: list
    partitions: list
    spec: CoarsenSpec
    fine: FineMixedSystem
    fine_weights: np.ndarray

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def depth(self) -> int:
        """Index of the coarsest level."""
        return len(self.levels) - 1

    def operator_complexity(self) -> float:
        return sum(lev.nnz() for lev in self.levels) / self.levels[0].nnz()

    def dof_counts(self) -> list:
        return [(lev.n_vertex_dofs, lev.n_edge_dofs) for lev in self.levels]

    def interp_u(self, level: int) -> sp.csr_matrix:
        """Composite ``P_u^0 ... P_u^{level-1}`` (fine x level dofs)."""
        P = sp.identity(self.levels[0].n_vertex_dofs, format="csr")
        for t in self.transfers[:level]:
            P = spmm(P, t.P_u)
        return P

    def interp_sigma(self, level: int) -> sp.csr_matrix:
        P = sp.identity(self.levels[0].n_edge_dofs, format="csr")
        for t in self.transfers[:level]:
            P = spmm(P, t.P_sigma)
        return P

    def restrict_u(self, v, level: int) -> np.ndarray:
        for t in self.transfers[:level]:
            v = t.Q_u @ v
        return v

    def restrict_sigma(self, v, level: int) -> np.ndarray:
        for t in self.transfers[:level]:
            v = t.Q_sigma @ v
        return v

    def prolong_u(self, v, level: int) -> np.ndarray:
        for t in reversed(self.transfers[:level]):
            v = t.P_u @ v
        return v

    def prolong_sigma(self, v, level: int) -> np.ndarray:
        for t in reversed(self.transfers[:level]):
            v = t.P_sigma @ v
        return v

    def project_sigma_T(self, g, level: int) -> np.ndarray:
        """``(P_sigma^{0..level-1})^T g`` for a fine flux-equation right-hand side."""
        for t in self.transfers[:level]:
            g = t.P_sigma.T @ g
        return g

    def coarse_graph_partition(self, level: int) -> np.ndarray:
        """Coarse vertex at ``level`` that owns each fine vertex."""
        owner = np.arange(self.levels[0].n_vertices)
        for p in self.partitions[:level]:
            owner = p.assignment[owner]
        return owner


def build_hierarchy(fine: FineMixedSystem, spec: CoarsenSpec) -> Hierarchy:
    """Recursive coarsening of ``fine`` into up to ``spec.max_levels`` coarse levels."""
    if not fine.graph.is_connected():
        raise ValueError("the fine graph must be connected")
    levels = [fine_level(fine)]
    transfers, parts = [], []
    for ell in range(spec.max_levels):
        lev = levels[-1]
        if lev.n_vertices <= spec.coarsening_factor and ell > 0:
            break
        if lev.n_vertices <= 1:
            break
        part = partition(lev.graph, spec.coarsening_factor, seed=spec.seed)
        ops, coarse, _ = coarsen_level(lev, part, spec)
        log.info("level %d: %d vertex dofs, %d edge dofs", ell + 1, coarse.n_vertex_dofs, coarse.n_edge_dofs)
        levels.append(coarse)
        transfers.append(ops)
        parts.append(part)
        if spec.check:
            from .checks import check_step

            check_step(lev, coarse, ops)
    return Hierarchy(levels, transfers, parts, spec, fine, np.asarray(fine.weights, float).copy())


def galerkin_masses(h: Hierarchy, weights) -> list:
    """``M^l`` for every level under new fine edge weights, by recursive RAP."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (h.levels[0].n_edge_dofs,):
        raise ValueError("one weight per fine edge dof required")
    if np.any(~(w > 0)):
        raise ValueError("edge weights must be positive")
    Ms = [as_csr(sp.diags(1.0 / w))]
    for t in h.transfers:
        M_c = spmm(t.P_sigma.T, spmm(Ms[-1], t.P_sigma))
        Ms.append(as_csr(0.5 * (M_c + M_c.T)))
    return Ms


def rescale_coefficient(h: Hierarchy, new_weights) -> Hierarchy:
    """Same transfers and ``D``; every ``M^l`` rebuilt from ``diag(1/w')``."""
    Ms = galerkin_masses(h, new_weights)
    levels = [dataclasses.replace(lev, M=M) for lev, M in zip(h.levels, Ms)]
    return dataclasses.replace(h, levels=levels, fine_weights=np.asarray(new_weights, float).copy())
