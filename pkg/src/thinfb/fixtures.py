"""Canonical fixture catalog: polynomials and boundary traces used everywhere.

Polynomial fixtures are exact-rational class elements; trace fixtures are
callables on point arrays (..., d), even in x_d, suitable for solve_top.
"""

from __future__ import annotations

from fractions import Fraction as F

import numpy as np

from .polyhom import HomPoly


def u32(pts: np.ndarray) -> np.ndarray:
    """The 3/2-homogeneous solution Re((x_{d-1} + i |x_d|)^{3/2})."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    z = pts[..., d - 2] + 1j * np.abs(pts[..., d - 1])
    return np.real(z ** 1.5)


def _polys() -> dict[str, HomPoly]:
    return {
        # -|x_d|: the degree-1 odd cone generator
        "m1": HomPoly(3, 1, "odd", {(0, 0, 1): F(-1)}),
        # x_1^2 - x_d^2: even, nonnegative on the plane
        "m2": HomPoly(3, 2, "even", {(2, 0, 0): F(1), (0, 0, 2): F(-1)}),
        # -|x_d|(x_1^2 + x_2^2 - (2/3)x_d^2): odd cone element of degree 3
        "m3": HomPoly(3, 3, "odd", {(2, 0, 1): F(-1), (0, 2, 1): F(-1), (0, 0, 3): F(2, 3)}),
        # x_1 x_2: even, sign-changing on the plane (not in the cone)
        "x1x2": HomPoly(3, 2, "even", {(1, 1, 0): F(1)}),
        # marginally admissible odd base: slope -x_1^2 on the plane
        "odd_base": HomPoly(3, 3, "odd", {(2, 0, 1): F(-1), (0, 0, 3): F(1, 3)}),
        # odd perturbation direction with slope +x_2^2
        "odd_pert": HomPoly(3, 3, "odd", {(0, 2, 1): F(1), (0, 0, 3): F(-1, 3)}),
        # degree-3 even harmonic (Re (x_1 + i x_2)^3), perturbation direction
        "cubic_even": HomPoly(3, 3, "even", {(3, 0, 0): F(1), (1, 2, 0): F(-3)}),
        # degree-4 even harmonic, nonnegative on the plane (trace (x_1^2+x_2^2)^2):
        # perturbing a plane-nonnegative solution by it keeps it a solution
        "quartic_even": HomPoly(
            3, 4, "even",
            {(4, 0, 0): F(1), (2, 2, 0): F(2), (0, 4, 0): F(1),
             (2, 0, 2): F(-8), (0, 2, 2): F(-8), (0, 0, 4): F(8, 3)},
        ),
        # d=2 pair
        "m2_d2": HomPoly(2, 2, "even", {(2, 0): F(1), (0, 2): F(-1)}),
        "m1_d2": HomPoly(2, 1, "odd", {(0, 1): F(-1)}),
    }


def polynomial(name: str) -> HomPoly:
    cat = _polys()
    if name not in cat:
        raise KeyError(f"unknown polynomial fixture {name!r}; have {sorted(cat)}")
    return cat[name]


def polynomial_names() -> list[str]:
    return sorted(_polys())


def boundary_trace(name: str):
    """Named boundary data for the grid solver (callables on (..., d) points)."""
    if name == "u32":
        return u32
    if name in ("m1", "m2", "m3", "x1x2", "m2_d2", "m1_d2"):
        p = polynomial(name)
        return p.eval
    if name == "m1_perturbed":
        p = polynomial("m1")
        z = polynomial("m2")
        s = 0.05 / z.norm()
        return lambda x: p.eval(x) + s * z.eval(x)
    if name == "m2_perturbed":
        p = polynomial("m2")
        z = polynomial("quartic_even")
        s = 0.05 / z.norm()
        return lambda x: p.eval(x) + s * z.eval(x)
    if name == "m3_perturbed":
        p = polynomial("m3")
        return lambda x: p.eval(x) + 0.02 * u32(x)
    raise KeyError(f"unknown trace fixture {name!r}")


def trace_names() -> list[str]:
    return sorted(
        ["u32", "m1", "m2", "m3", "x1x2", "m2_d2", "m1_d2",
         "m1_perturbed", "m2_perturbed", "m3_perturbed"]
    )
