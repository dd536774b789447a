"""Weighted graphs, incidence-based mixed systems and TPFA grid assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .numerics import as_csr, sym_eig

SIDES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass
class Graph:
    """Undirected graph with oriented edges ``(tail, head)`` and positive weights."""

    n_vertices: int
    edges: np.ndarray
    weights: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != self.edges.shape[0]:
            raise ValueError("one weight per edge required")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n_vertices):
            raise ValueError("edge endpoint out of range")
        if np.any(~(self.weights > 0)):
            raise ValueError("edge weights must be positive")

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def adjacency(self) -> sp.csr_matrix:
        n, e = self.n_vertices, self.edges
        data = np.ones(2 * len(e))
        A = sp.csr_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        A.data[:] = 1.0
        return A

    def laplacian(self) -> sp.csr_matrix:
        n, e, w = self.n_vertices, self.edges, self.weights
        W = sp.csr_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return as_csr(sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W)

    def n_components(self) -> int:
        if self.n_vertices == 0:
            return 0
        return csgraph.connected_components(self.adjacency(), directed=False)[0]

    def is_connected(self) -> bool:
        return self.n_components() == 1


@dataclass
class FineMixedSystem:
    """Level-0 mixed system.

    Edge dofs are the graph edges followed by boundary edges; a boundary
    edge hangs off one vertex and carries a prescribed pressure that enters
    the flux equation as ``rhs_sigma``.
    """

    graph: Graph
    M0: sp.csr_matrix
    D0: sp.csr_matrix
    weights: np.ndarray
    bnd_vertex: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bnd_attr: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bnd_value: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_interior(self) -> int:
        return self.graph.n_edges

    @property
    def n_edge_dofs(self) -> int:
        return self.M0.shape[0]

    @property
    def boundary(self) -> list:
        """``(edge-dof index, prescribed pressure)`` pairs."""
        k = self.n_interior
        return [(k + i, float(v)) for i, v in enumerate(self.bnd_value)]

    def rhs_sigma(self) -> np.ndarray:
        g = np.zeros(self.n_edge_dofs)
        g[self.n_interior :] = self.bnd_value
        return g

    def nullspace_mode(self) -> str:
        return "nonsingular" if len(self.bnd_vertex) else "mean_zero"

    def boundary_dofs(self, attr: int) -> np.ndarray:
        return self.n_interior + np.flatnonzero(self.bnd_attr == attr)


def incidence(n_vertices: int, tails, heads=None) -> sp.csr_matrix:
    """Signed incidence: +1 at the tail, -1 at the head (head < 0 means none)."""
    tails = np.asarray(tails, dtype=np.int64)
    m = len(tails)
    heads = -np.ones(m, dtype=np.int64) if heads is None else np.asarray(heads, dtype=np.int64)
    has_head = heads >= 0
    rows = np.r_[tails, heads[has_head]]
    cols = np.r_[np.arange(m), np.arange(m)[has_head]]
    vals = np.r_[np.ones(m), -np.ones(int(has_head.sum()))]
    return as_csr(sp.csr_matrix((vals, (rows, cols)), shape=(n_vertices, m)))


def build_incidence(g: Graph, bnd_vertex=None, bnd_weight=None, bnd_attr=None, bnd_value=None) -> FineMixedSystem:
    """Mixed form of the weighted Laplacian of ``g``: ``M0 = diag(1/w)``, ``D0`` incidence."""
    if np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValueError("self-loops are not allowed")
    bv = np.zeros(0, np.int64) if bnd_vertex is None else np.asarray(bnd_vertex, np.int64)
    bw = np.zeros(0) if bnd_weight is None else np.asarray(bnd_weight, float)
    ba = np.zeros(len(bv), np.int64) if bnd_attr is None else np.asarray(bnd_attr, np.int64)
    bval = np.zeros(len(bv)) if bnd_value is None else np.asarray(bnd_value, float)
    if np.any(~(bw > 0)):
        raise ValueError("boundary weights must be positive")
    tails = np.r_[g.edges[:, 0], bv]
    heads = np.r_[g.edges[:, 1], -np.ones(len(bv), np.int64)]
    w = np.r_[g.weights, bw]
    D0 = incidence(g.n_vertices, tails, heads)
    M0 = as_csr(sp.diags(1.0 / w))
    return FineMixedSystem(g, M0, D0, w, bv, ba, bval)


@dataclass
class TpfaGrid:
    """Structured grid of ``dims`` cells with cellwise permeability.

    ``boundary`` maps side names (``xmin``, ``ymax``, ...) to either
    ``"no_flux"`` or a prescribed pressure value; missing sides are no-flux.
    """

    dims: Sequence[int]
    h: Sequence[float] = None
    perm: np.ndarray = None
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) not in (2, 3) or min(self.dims) < 1:
            raise ValueError(f"bad grid dims {self.dims}")
        if self.h is None:
            self.h = tuple(1.0 / d for d in self.dims)
        self.h = tuple(float(x) for x in self.h)
        if len(self.h) != len(self.dims) or min(self.h) <= 0:
            raise ValueError("cell sizes must be positive, one per dimension")
        if self.perm is None:
            self.perm = np.ones(self.n_cells)
        self.perm = np.asarray(self.perm, dtype=float).reshape(-1)
        if self.perm.shape[0] != self.n_cells:
            raise ValueError("one permeability per cell required")
        if np.any(~(self.perm > 0)):
            raise ValueError("permeability must be positive")
        for side, val in self.boundary.items():
            if side not in SIDES[: 2 * self.ndim]:
                raise ValueError(f"unknown boundary side {side!r}")
            if val != "no_flux":
                float(val)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    def cell_index(self) -> np.ndarray:
        """Array of shape ``dims`` holding the cell numbers (x fastest)."""
        return np.arange(self.n_cells).reshape(self.dims[::-1]).transpose()

    def centers(self) -> np.ndarray:
        axes = [(np.arange(d) + 0.5) * h for d, h in zip(self.dims, self.h)]
        mesh = np.meshgrid(*axes, indexing="ij")
        idx = self.cell_index().ravel()
        out = np.empty((self.n_cells, self.ndim))
        for a in range(self.ndim):
            out[idx, a] = mesh[a].ravel()
        return out

    def face_area(self, axis: int) -> float:
        return float(np.prod([h for a, h in enumerate(self.h) if a != axis]))

    def pressure_sides(self) -> list:
        return [s for s in SIDES[: 2 * self.ndim] if self.boundary.get(s, "no_flux") != "no_flux"]


def _tpfa_topology(grid: TpfaGrid):
    """Cell pairs, their axis, and boundary (cell, side-index) pairs in a fixed order."""
    idx = grid.cell_index()
    pairs, axes = [], []
    for a in range(grid.ndim):
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[a], hi[a] = slice(0, -1), slice(1, None)
        t, hd = idx[tuple(lo)].ravel(order="F"), idx[tuple(hi)].ravel(order="F")
        pairs.append(np.c_[t, hd])
        axes.append(np.full(len(t), a))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    axes = np.concatenate(axes)
    bcell, bside = [], []
    for s_idx, side in enumerate(SIDES[: 2 * grid.ndim]):
        if grid.boundary.get(side, "no_flux") == "no_flux":
            continue
        a, upper = divmod(s_idx, 2)
        sl = [slice(None)] * grid.ndim
        sl[a] = -1 if upper else 0
        cells = idx[tuple(sl)].ravel(order="F")
        bcell.append(cells)
        bside.append(np.full(len(cells), s_idx))
    bcell = np.concatenate(bcell) if bcell else np.zeros(0, np.int64)
    bside = np.concatenate(bside) if bside else np.zeros(0, np.int64)
    return pairs.astype(np.int64), axes, bcell.astype(np.int64), bside.astype(np.int64)


def tpfa_weights(grid: TpfaGrid, perm=None) -> np.ndarray:
    """Two-point transmissibilities (interior faces, then pressure-boundary faces).

    Interior: ``A_f / (d_i/k_i + d_j/k_j)`` with ``d`` the center-to-face
    distance; boundary: ``A_f k_i / d_i``.
    """
    k = grid.perm if perm is None else np.asarray(perm, float).reshape(-1)
    if np.any(~(k > 0)):
        raise ValueError("permeability must be positive")
    pairs, axes, bcell, bside = _tpfa_topology(grid)
    h = np.asarray(grid.h)
    area = np.array([grid.face_area(a) for a in range(grid.ndim)])
    d = 0.5 * h[axes]
    w_int = area[axes] / (d / k[pairs[:, 0]] + d / k[pairs[:, 1]])
    baxis = bside // 2
    w_bnd = area[baxis] * k[bcell] / (0.5 * h[baxis])
    return np.r_[w_int, w_bnd]


def assemble_tpfa(grid: TpfaGrid):
    """TPFA finite volumes as a graph: one vertex per cell, one edge per face."""
    pairs, _, bcell, bside = _tpfa_topology(grid)
    w = tpfa_weights(grid)
    n_int = len(pairs)
    g = Graph(grid.n_cells, pairs, w[:n_int], coords=grid.centers())
    values = np.array([float(grid.boundary[SIDES[s]]) for s in bside]) if len(bside) else np.zeros(0)
    fine = build_incidence(g, bcell, w[n_int:], bside, values)
    return g, fine


def fiedler_vector(g: Graph, dense_limit: int = 2000):
    """Smallest positive eigenpair ``(lam, v)`` of the weighted Laplacian."""
    if not g.is_connected():
        raise ValueError("Fiedler vector requires a connected graph")
    if g.n_vertices < 2:
        raise ValueError("need at least two vertices")
    L = g.laplacian()
    if g.n_vertices <= dense_limit:
        lam, V = sym_eig(L.toarray())
        lam1, v = lam[1], V[:, 1]
    else:
        lam, V = spla.eigsh(L.tocsc(), k=2, sigma=-1e-3, which="LM")
        order = np.argsort(lam)
        lam1, v = lam[order[1]], V[:, order[1]]
        v = v - v.mean()
    v = v / np.linalg.norm(v)
    # deterministic sign: first entry of largest magnitude is positive
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return float(lam1), v


def read_edge_list(path) -> Graph:
    """Read ``n_vertices n_edges`` header followed by ``tail head weight`` lines."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1 : 1 + m]
    if len(body) != m:
        raise ValueError(f"{path}: header announces {m} edges, found {len(body)}")
    edges = np.array([[int(r[0]), int(r[1])] for r in body], dtype=np.int64).reshape(-1, 2)
    w = np.array([float(r[2]) if len(r) > 2 else 1.0 for r in body])
    return Graph(n, edges, w)


def write_edge_list(path, g: Graph) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n_vertices} {g.n_edges}\n")
        for (t, h), w in zip(g.edges, g.weights):
            fh.write(f"{int(t)} {int(h)} {float(w)!r}\n")


def random_graph(n: int, seed: int = 0, k: int = 4, log_sigma: float = 1.0) -> Graph:
    """Connected random geometric graph with lognormal weights.

    Points are uniform in the unit square and joined to their ``k`` nearest
    neighbours; leftover components are linked to their closest outside point.
    """
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    _, nbr = cKDTree(pts).query(pts, k=min(k + 1, n))
    pairs = {(min(i, int(j)), max(i, int(j))) for i in range(n) for j in nbr[i, 1:]}
    while True:
        e = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        ncomp, label = csgraph.connected_components(
            sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)), directed=False
        )
        if ncomp == 1:
            break
        inside = np.flatnonzero(label == label[0])
        outside = np.flatnonzero(label != label[0])
        dist, j = cKDTree(pts[outside]).query(pts[inside])
        a = int(np.argmin(dist))
        u, v = int(inside[a]), int(outside[j[a]])
        pairs.add((min(u, v), max(u, v)))
    w = np.exp(log_sigma * rng.standard_normal(len(e)))
    return Graph(n, e, w, coords=pts)
