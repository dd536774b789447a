import csv

import numpy as np
import pytest

from conftest import lognormal_grid, path_graph
from mlcoarsen.coarsen import CoarsenSpec, build_hierarchy
from mlcoarsen.graph import assemble_tpfa, build_incidence, random_graph
from mlcoarsen.upscale import (
    CSV_COLUMNS,
    coarse_rhs,
    fiedler_rhs,
    relative_errors,
    solve_level,
    sweep_mA,
    upscale_report,
    upscale_solve,
    write_csv,
)


@pytest.fixture(scope="module")
def grid_hier():
    _, fine = assemble_tpfa(lognormal_grid(24, seed=5))
    return build_hierarchy(fine, CoarsenSpec(max_levels=2, coarsening_factor=8, m_A=2))


def test_coarse_rhs_level0_unchanged(grid_hier):
    f = np.random.default_rng(0).standard_normal(grid_hier.levels[0].n_vertex_dofs)
    assert np.array_equal(coarse_rhs(grid_hier, f, 0), f)


def test_coarse_rhs_ones_map_to_coarse_ones(grid_hier):
    for ell in range(grid_hier.n_levels):
        assert np.allclose(coarse_rhs(grid_hier, grid_hier.levels[0].ones, ell), grid_hier.levels[ell].ones, atol=1e-12)


def test_coarse_rhs_chain_product(grid_hier):
    f = np.random.default_rng(1).standard_normal(grid_hier.levels[0].n_vertex_dofs)
    Q0, Q1 = (t.Q_u.toarray() for t in grid_hier.transfers)
    assert np.abs(coarse_rhs(grid_hier, f, 2) - Q1 @ (Q0 @ f)).max() <= 1e-12
    with pytest.raises(ValueError):
        coarse_rhs(grid_hier, f, 3)


def test_level0_error_is_zero(grid_hier):
    f = np.zeros(grid_hier.levels[0].n_vertex_dofs)
    u0, s0 = upscale_solve(grid_hier, f, 0)
    assert relative_errors(grid_hier, u0, s0, u0, s0) == (0.0, 0.0)


@pytest.mark.parametrize("level", [1, 2])
def test_galerkin_exactness(grid_hier, level):
    h = grid_hier
    rng = np.random.default_rng(level)
    lev = h.levels[level]
    sc, uc = rng.standard_normal(lev.n_edge_dofs), rng.standard_normal(lev.n_vertex_dofs)
    sigma, u = h.prolong_sigma(sc, level), h.prolong_u(uc, level)
    M0, D0 = h.levels[0].M, h.levels[0].D
    g, f = M0 @ sigma + D0.T @ u, -(D0 @ sigma)
    us, ss = upscale_solve(h, f, level, g)
    assert np.abs(us - u).max() <= 1e-8 * np.abs(u).max()
    assert np.abs(ss - sigma).max() <= 1e-8 * np.abs(sigma).max()


def test_fiedler_source_is_reproduced_on_fine_level():
    g = random_graph(80, seed=2)
    h = build_hierarchy(build_incidence(g), CoarsenSpec(max_levels=1))
    f, v = fiedler_rhs(g)
    _, u = solve_level(h, f, 0)
    assert np.abs(u - v).max() <= 1e-9


def test_errors_decrease_with_mA_on_32_grid():
    _, fine = assemble_tpfa(lognormal_grid(32, seed=0))
    spec = CoarsenSpec(max_levels=2, coarsening_factor=8)
    f = np.zeros(fine.graph.n_vertices)
    rows = sweep_mA(fine, spec, f, [1, 4])
    err = {(r.m_A, r.level): r.rel_err_u for r in rows}
    for ell in (1, 2):
        assert err[4, ell] < err[1, ell]


def test_single_level_sweep_one_row():
    fine = build_incidence(path_graph(4))
    rows = sweep_mA(fine, CoarsenSpec(max_levels=3, coarsening_factor=2), fiedler_rhs(path_graph(4))[0], [1])
    assert len(rows) == 1 and rows[0].level == 1 and rows[0].vertex_dofs == 2


def test_csv_layout(tmp_path, grid_hier):
    f = np.zeros(grid_hier.levels[0].n_vertex_dofs)
    rows = upscale_report(grid_hier, f)
    write_csv(tmp_path / "u.csv", rows, with_time=False)
    with open(tmp_path / "u.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_COLUMNS
    assert len(table) == 1 + grid_hier.depth
    assert all(r[-1] == "" for r in table[1:])
    assert [int(r[0]) for r in table[1:]] == [1, 2]
    assert float(table[1][4]) == rows[0].rel_err_u
