"""Shared fixtures: cached grid solves and replacement bundles.

Solves are deterministic, so caching them per (name, d, n) lets the unit
tests and the acceptance suite share work without coupling their assertions.
"""

from __future__ import annotations

import pytest

from thinfb import fixtures, sphere
from thinfb.solver import Grid, SolverConfig, solve_top

_SOLVES: dict = {}
_BUNDLES: dict = {}
_GEOMS: dict = {}


def solve_fixture(name: str, n: int = 65, d: int = 3):
    key = (name, d, n)
    if key not in _SOLVES:
        grid = Grid(d, n)
        _SOLVES[key] = solve_top(fixtures.boundary_trace(name), grid, SolverConfig())
    return _SOLVES[key]


def geom_for(d: int, m: int) -> sphere.LayerGeometry:
    if (d, m) not in _GEOMS:
        _GEOMS[d, m] = sphere.choose_eta(d, m)
    return _GEOMS[d, m]


def bundle_for(name: str) -> sphere.ReplacementBundle:
    if name not in _BUNDLES:
        p = fixtures.polynomial(name)
        _BUNDLES[name] = sphere.replace(p, geom_for(p.dim, p.degree))
    return _BUNDLES[name]


@pytest.fixture(scope="session")
def solved():
    return solve_fixture


@pytest.fixture(scope="session")
def bundles():
    return bundle_for


@pytest.fixture(scope="session")
def geoms():
    return geom_for
