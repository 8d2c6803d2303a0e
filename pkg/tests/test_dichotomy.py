"""Improvement-of-approximation dichotomy and the epiperimetric gap."""

import types

import numpy as np
import pytest

from thinfb import dichotomy, fixtures, monitors, sphere
from thinfb.dichotomy import (
    ApproxState,
    DichotomyConfig,
    EpiReport,
    delta,
    delta_parts,
    epiperimetric_gap,
    fit_rate,
    frequency0_offset,
    improve,
    in_class,
    random_admissible_trace,
    run_iteration,
)
from thinfb.solver import Grid, SolverConfig, field_from_function, solve_top


def test_delta_small_on_exact_fixture(solved):
    fld, _ = solved("m2", 33)
    h1, kappa, bundle = delta_parts(fld, fixtures.polynomial("m2"))
    assert kappa == pytest.approx(0.0, abs=1e-14)
    assert h1 <= 5.0 * fld.grid.h
    assert delta(fld, fixtures.polynomial("m2")) == max(h1, kappa)


def test_delta_detects_distance(solved):
    fld, _ = solved("m2_perturbed", 33)
    p = fixtures.polynomial("m2")
    assert delta(fld, p) > delta_parts(fld, p)[1]  # h1 part dominates
    assert delta(fld, p) < 0.2


def test_in_class(solved):
    fld, _ = solved("m2", 33)
    p = fixtures.polynomial("m2")
    assert in_class(fld, p, 0.5, 1.0)
    assert not in_class(fld, p, 1e-12, 1.0)


def test_frequency0_offset_reads_constant_shift():
    grid = Grid(3, 33)
    p = fixtures.polynomial("m2")
    for c in (0.02, -0.05):
        fld = field_from_function(grid, lambda x, c=c: p.eval(x) + c)
        assert frequency0_offset(fld, p) == pytest.approx(c, abs=2e-3)


def test_improve_requires_eps_below_threshold(solved):
    fld, _ = solved("m2", 33)
    state = ApproxState(p=fixtures.polynomial("m2"), eps=0.5, weiss=0.0,
                        scale=1.0, branch="initial", field=fld)
    with pytest.raises(ValueError):
        improve(state)


def test_improve_branch_b_on_near_exact(solved):
    fld, _ = solved("m1_perturbed", 33)
    p = fixtures.polynomial("m1")
    state = ApproxState(p=p, eps=0.09, weiss=0.0, scale=1.0, branch="initial", field=fld)
    nxt = improve(state)
    assert nxt.branch == "b"
    assert nxt.eps == pytest.approx(0.045)
    assert nxt.scale == pytest.approx(0.5)
    assert "violation" not in nxt.diagnostics


def test_improve_branch_a_on_lower_degree_mode():
    # a degree-1 harmonic mode cannot be absorbed by a degree-2 class update,
    # but it does carry a genuine Weiss drop for lambda = 2
    grid = Grid(3, 33)
    p = fixtures.polynomial("m2")
    fld, _ = solve_top(lambda x: p.eval(x) + 0.05 * x[..., 0], grid)
    state = ApproxState(p=p, eps=0.05, weiss=0.0, scale=1.0, branch="initial", field=fld)
    nxt = improve(state)
    assert nxt.branch == "a"
    assert "violation" not in nxt.diagnostics
    assert nxt.diagnostics["w_drop"] >= 1e-3 * 0.05**2
    assert nxt.eps == pytest.approx(0.0999)  # expanded, capped below eps_tilde


def test_improve_records_violation_when_neither_branch(solved, monkeypatch):
    # flat Weiss (monkeypatched) plus an unreachable residual: both branches fail
    grid = Grid(3, 33)
    p = fixtures.polynomial("m2")
    q = fixtures.polynomial("x1x2")
    fld, _ = solve_top(lambda x: p.eval(x) + 0.6 * q.eval(x), grid)
    monkeypatch.setattr(monitors, "weiss", lambda *a, **k: 0.0)
    state = ApproxState(p=p, eps=0.02, weiss=0.0, scale=1.0, branch="initial", field=fld)
    nxt = improve(state)
    assert nxt.branch == "a"
    assert "violation" in nxt.diagnostics


def test_run_iteration_smoke(solved):
    fld, _ = solved("m1_perturbed", 33)
    log = run_iteration(fld, fixtures.polynomial("m1"), 0.09, n_max=2)
    assert len(log.states) == 3
    assert log.violations == []
    assert all(s.branch == "b" for s in log.states[1:])
    text = log.to_jsonl()
    assert text.count("\n") == 4  # three rungs plus the summary line
    assert log.constants["weiss_eps_exponent"] == 2.0


def test_fit_rate_synthetic_geometric():
    states = [types.SimpleNamespace(eps=0.1 * 0.5**n, scale=0.5**n) for n in range(8)]
    log = types.SimpleNamespace(states=states)
    rep = fit_rate(log, "odd")
    assert rep.parity == "odd"
    assert rep.value == pytest.approx(1.0, abs=1e-10)  # eps ~ r0^n exactly
    assert rep.ci[0] <= 1.0 + 1e-9 and rep.ci[1] >= 1.0 - 1e-9


def test_fit_rate_synthetic_power_law():
    states = [types.SimpleNamespace(eps=0.5 * max(n, 1) ** -2.0, scale=0.5**n)
              for n in range(10)]
    rep = fit_rate(types.SimpleNamespace(states=states), "even")
    assert rep.value == pytest.approx(2.0, abs=1e-10)


def test_fit_rate_needs_rungs():
    states = [types.SimpleNamespace(eps=0.1, scale=1.0)] * 3
    with pytest.raises(ValueError):
        fit_rate(types.SimpleNamespace(states=states), "odd")
    with pytest.raises(ValueError):
        fit_rate(types.SimpleNamespace(states=[types.SimpleNamespace(eps=0.1, scale=1.0)] * 5),
                 "both")


def test_random_admissible_trace_properties():
    a = random_admissible_trace(1, seed=3)
    b = random_admissible_trace(1, seed=3)
    assert np.array_equal(a.values, b.values)
    assert np.sqrt(sphere.sphere_integral(a, a.values)) == pytest.approx(1.0, abs=1e-10)
    assert float(a.values[0].min()) >= -1e-10  # nonnegative equator


def test_epiperimetric_gap_prechecks():
    grid = Grid(3, 17)
    w = random_admissible_trace(1, seed=0)
    bad = sphere.SphereField(3, 2.0 * w.values)
    with pytest.raises(ValueError):
        epiperimetric_gap(bad, 1, grid)  # norm is not 1
    neg = sphere.SphereField(3, w.values - 2.0)
    with pytest.raises(ValueError):
        epiperimetric_gap(neg, 1, grid)  # negative on the equator


def test_epiperimetric_gap_small_run():
    grid = Grid(3, 17)
    rep = epiperimetric_gap(random_admissible_trace(1, seed=1), 1, grid)
    assert isinstance(rep, EpiReport)
    assert rep.gap >= -10.0 * grid.h
    assert rep.solution_weiss <= rep.trace_weiss + 10.0 * grid.h


def test_config_r0_propagates(solved):
    fld, _ = solved("m1_perturbed", 33)
    log = run_iteration(fld, fixtures.polynomial("m1"), 0.09, r0=0.5, n_max=1,
                        cfg=DichotomyConfig(r0=0.25))
    assert log.states[1].scale == pytest.approx(0.5)
