"""Grid machinery and the projected-SOR solvers."""

import numpy as np
import pytest

from thinfb import fixtures
from thinfb.solver import (
    Grid,
    GridField,
    SolverConfig,
    SolverDivergence,
    field_from_function,
    residuals,
    solve_ball,
    solve_top,
    tune_omega,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 33)
    with pytest.raises(ValueError):
        Grid(3, 32)  # even
    with pytest.raises(ValueError):
        Grid(3, 3)  # too small


def test_grid_layout():
    grid = Grid(3, 9)
    assert grid.h == pytest.approx(0.25)
    assert grid.izp == 4
    assert grid.coords[0] == -1.0 and grid.coords[-1] == 1.0
    pts = grid.node_points()
    assert pts.shape == (9, 9, 9, 3)
    # axis 0 is x_d = x_3; the last point component is x_3
    assert pts[0, 0, 0, 2] == -1.0 and pts[-1, 0, 0, 2] == 1.0
    assert pts[0, 0, 0, 0] == -1.0 and pts[0, 0, -1, 0] == 1.0
    assert pts[grid.izp, 0, 0, 2] == 0.0


def test_eval_points_multilinear():
    grid = Grid(3, 9)
    fld = field_from_function(grid, lambda x: 1.0 + 2 * x[..., 0] - x[..., 1] + 0.5 * x[..., 2])
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, (40, 3))
    exact = 1.0 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 2]
    assert np.allclose(fld.eval_points(pts), exact, atol=1e-12)
    # node values reproduce up to the clip guard on the outer faces
    nodes = grid.node_points()
    assert np.allclose(fld.eval_points(nodes), fld.values, atol=1e-5)


def _solve_err(solved, name, n):
    fld, rep = solved(name, n)
    exact = fixtures.boundary_trace(name)(fld.grid.node_points())
    return float(np.abs(fld.values - exact).max()), rep


def test_solve_reproduces_quadratic(solved):
    err, rep = _solve_err(solved, "m2", 33)
    assert err <= 5.0 * Grid(3, 33).h ** 2
    assert rep.residual <= 1e-10


def test_solve_reproduces_u32(solved):
    err, _ = _solve_err(solved, "u32", 33)
    assert err <= 5.0 * Grid(3, 33).h


def test_solve_m1_exact(solved):
    # -|x_d| is piecewise linear: discretely harmonic off the plane, so the
    # solver reproduces it to its tolerance
    err, _ = _solve_err(solved, "m1", 33)
    assert err <= 1e-8


def test_even_symmetry(solved):
    fld, _ = solved("m2", 33)
    izp = fld.grid.izp
    assert np.array_equal(fld.values[:izp], fld.values[izp + 1 :][::-1])


def test_complementarity_residuals(solved):
    fld, _ = solved("u32", 33)
    rep = residuals(fld)
    h2 = fld.grid.h ** 2
    assert rep.harmonic_residual <= 1e-10 * 6.0 / h2  # tol * 2d / h^2
    assert rep.plane_min >= -1e-12
    assert rep.plane_sign_residual <= 1e-10 * 6.0 / h2
    assert rep.compl_residual <= 1e-8


def test_active_set_u32(solved):
    fld, rep = solved("u32", 33)
    # contact fills (roughly) the half plane x_2 <= 0
    assert 0.3 < rep.active_count / fld.grid.n ** 2 < 0.7


def test_solver_deterministic():
    grid = Grid(3, 17)
    tr = fixtures.boundary_trace("m2_perturbed")
    a, _ = solve_top(tr, grid)
    b, _ = solve_top(tr, grid)
    assert np.array_equal(a.values, b.values)


def test_solver_divergence_raises():
    grid = Grid(3, 33)
    with pytest.raises(SolverDivergence) as exc:
        solve_top(fixtures.boundary_trace("u32"), grid,
                  SolverConfig(tol=1e-14, max_iter=50, omega=1.5))
    assert len(exc.value.history) >= 1


def test_nan_boundary_rejected():
    grid = Grid(3, 9)
    with pytest.raises(ValueError):
        solve_top(lambda x: np.full(x.shape[:-1], np.nan), grid)


def test_tune_omega_in_range():
    grid = Grid(3, 17)
    pts = grid.node_points()
    u = np.asarray(fixtures.boundary_trace("m2")(pts))
    assert tune_omega(u.copy(), grid) in (1.5, 1.6, 1.7, 1.8, 1.9)


def test_solve_ball_harmonic_quadratic():
    # x_1^2 - x_3^2 is discretely harmonic and admissible, so the ball solve
    # reproduces it on the free set to the solver tolerance
    grid = Grid(3, 33)
    p = fixtures.polynomial("m2")
    fld, rep = solve_ball(p.eval, grid, SolverConfig(tol=1e-12))
    exact = p.eval(grid.node_points())
    assert float(np.abs(fld.values - exact).max()) <= 1e-8
    assert rep.residual <= 1e-12


def test_solve_ball_pins_outside():
    grid = Grid(3, 17)
    p = fixtures.polynomial("m2")
    fld, _ = solve_ball(p.eval, grid)
    pts = grid.node_points()
    outside = (pts**2).sum(axis=-1) >= 1.0
    assert np.array_equal(fld.values[outside], p.eval(pts)[outside])


def test_field_io_roundtrip(tmp_path, solved):
    fld, _ = solved("u32", 33)
    path = tmp_path / "u.fld"
    fld.save(path)
    back = GridField.load(path)
    assert back.grid == fld.grid
    assert back.even_symmetric == fld.even_symmetric
    assert np.array_equal(back.values, fld.values)


def test_field_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.fld"
    path.write_bytes(b"NOTAFIELD" + b"\x00" * 64)
    with pytest.raises(ValueError):
        GridField.load(path)


def test_export_csv(tmp_path):
    grid = Grid(2, 9)
    fld = field_from_function(grid, lambda x: x[..., 0])
    path = tmp_path / "f.csv"
    fld.export_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,u"
    assert len(lines) == 1 + 81


def test_dirichlet_energy_linear_field():
    grid = Grid(3, 17)
    fld = field_from_function(grid, lambda x: x[..., 0])
    # (1/2) int |grad u|^2 = 4 over the box, up to the edge-count boundary bias
    assert fld.dirichlet_energy() == pytest.approx(4.0, rel=0.15)


def test_d2_solve():
    grid = Grid(2, 33)
    fld, _ = solve_top(fixtures.boundary_trace("m2_d2"), grid)
    exact = fixtures.boundary_trace("m2_d2")(grid.node_points())
    assert float(np.abs(fld.values - exact).max()) <= 5.0 * grid.h**2
