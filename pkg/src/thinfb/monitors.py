"""Monotone quantities and rescalings for solved fields.

Shell integrals interpolate the field onto an angular quadrature (mirrored
Gauss-Legendre in the polar variable so the plane kink is never straddled,
uniform azimuth with a multiple of four nodes so 90-degree rotations about
the x_d axis map the point set to itself).  Ball integrals are radial
composites of shells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polyhom import HomPoly, sphere_quadrature
from .solver import Grid, GridField

__all__ = [
    "MonitorSeries",
    "ContactSet",
    "weiss",
    "almgren",
    "weiss_monotonicity_audit",
    "radial_change",
    "rescale",
    "pin_down",
    "contact_set",
    "monitor_series",
    "gradsq_field",
    "shell_integral",
    "ball_integral",
]


# ---------------------------------------------------------------------------
# gradient handling: one-sided x_d derivative on the plane


def _grad_components(fld: GridField) -> list[np.ndarray]:
    """Nodal gradient (central differences; one-sided in x_d on the plane,
    taken from x_d > 0, with the lower half mirrored for even fields)."""
    u = fld.values
    h = fld.grid.h
    comps = list(np.gradient(u, h))  # axis order: x_d, ..., x_1
    izp = fld.grid.izp
    gz = comps[0]
    gz[izp] = (-3.0 * u[izp] + 4.0 * u[izp + 1] - u[izp + 2]) / (2.0 * h)
    if fld.even_symmetric:
        # odd reflection of the x_d derivative below the plane
        gz[:izp] = -gz[izp + 1 :][::-1]
    return comps


def gradsq_field(fld: GridField) -> GridField:
    comps = _grad_components(fld)
    vals = sum(c**2 for c in comps)
    return GridField(fld.grid, vals, fld.even_symmetric)


def grad_eval(fld: GridField, pts: np.ndarray) -> np.ndarray:
    """Interpolated gradient at points (..., d); one-sided at the plane."""
    comps = _grad_components(fld)
    pts = np.asarray(pts, dtype=float)
    out = np.empty(pts.shape)
    for a, c in enumerate(comps):
        cf = GridField(fld.grid, c, even_symmetric=False)
        out[..., fld.grid.d - 1 - a] = cf.eval_points(pts)
    return out


# ---------------------------------------------------------------------------
# shell / ball quadrature


def _shell_rule(grid: Grid, r: float):
    ratio = r / grid.h
    if grid.d == 2:
        n_az = 4 * max(16, math.ceil(ratio))
        return sphere_quadrature(2, n_az=n_az)
    n_polar = max(10, math.ceil(1.5 * ratio))
    n_az = 4 * max(10, math.ceil(0.75 * ratio))
    return sphere_quadrature(3, n_polar=n_polar, n_az=n_az)


def shell_integral(fld: GridField, r: float, fn=None) -> float:
    """Integral over the sphere of radius r of fn(field values) (fn=None: identity)."""
    pts, w = _shell_rule(fld.grid, r)
    vals = fld.eval_points(r * pts)
    if fn is not None:
        vals = fn(vals)
    return float(np.dot(vals, w)) * r ** (fld.grid.d - 1)


def ball_integral(fld: GridField, r: float) -> float:
    """Integral of the field over the ball B_r (radial composite of shells)."""
    grid = fld.grid
    h = grid.h
    n_panels = max(4, math.ceil(r / h))
    edges = np.linspace(0.0, r, n_panels + 1)
    gl_x = np.array([-1.0, 1.0]) / math.sqrt(3.0)
    total = 0.0
    pts, w = _shell_rule(grid, r)
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        for x in gl_x:
            s = mid + half * x
            vals = fld.eval_points(s * pts)
            total += half * float(np.dot(vals, w)) * s ** (grid.d - 1)
    return total


# ---------------------------------------------------------------------------
# Weiss energy and Almgren frequency


class RadiusBelowResolution(ValueError):
    pass


def _check_radius(grid: Grid, r: float):
    if r < 4.0 * grid.h - 1e-12 or r > 1.0 + 1e-12:
        raise RadiusBelowResolution(f"radius {r} outside [4h, 1] for h={grid.h}")


def _shell_u_un_u2(fld: GridField, r: float):
    """Shell integrals (int u u_nu, int u^2) over dB_r via one interpolation pass."""
    pts, w = _shell_rule(fld.grid, r)
    uvals = fld.eval_points(r * pts)
    gvals = grad_eval(fld, r * pts)
    un = (gvals * pts).sum(axis=-1)
    return float(np.dot(uvals * un, w)) * r ** (fld.grid.d - 1), float(
        np.dot(uvals**2, w)
    ) * r ** (fld.grid.d - 1)


def weiss(
    fld: GridField,
    lam: float,
    r: float,
    _gradsq: GridField | None = None,
    method: str = "boundary",
) -> float:
    """Scale-normalized Dirichlet energy minus lam times the shell norm.

    method="boundary" rewrites the Dirichlet term as int_{dB_r} u u_nu (valid
    when u solves the problem, since u vanishes on the contact set); it avoids
    the cancellation of two large ball integrals and is the default.
    method="volume" integrates |grad u|^2 over the ball and is required when
    the field is not a solution (energy comparisons between competitors).
    """
    _check_radius(fld.grid, r)
    d = fld.grid.d
    if method == "volume":
        gsq = _gradsq if _gradsq is not None else gradsq_field(fld)
        vol = ball_integral(gsq, r)
        shell = shell_integral(fld, r, fn=np.square)
        return vol / r ** (d - 2 + 2 * lam) - lam * shell / r ** (d - 1 + 2 * lam)
    uun, u2 = _shell_u_un_u2(fld, r)
    return uun / r ** (d - 2 + 2 * lam) - lam * u2 / r ** (d - 1 + 2 * lam)


def almgren(fld: GridField, r: float, method: str = "boundary") -> float:
    """Frequency N(r) = r * int_{B_r} |grad u|^2 / int_{dB_r} u^2."""
    _check_radius(fld.grid, r)
    uun, shell = _shell_u_un_u2(fld, r)
    if method == "volume":
        num = ball_integral(gradsq_field(fld), r)
    else:
        num = uun
    if shell <= 0.0:
        raise ZeroDivisionError("vanishing shell norm")
    return r * num / shell


@dataclass
class MonitorSeries:
    radii: np.ndarray
    weiss: np.ndarray
    frequency: np.ndarray
    lam: float
    quadrature: dict = field(default_factory=dict)

    def export_csv(self, path, allowance: float | None = None):
        cols = [self.radii, self.weiss, self.frequency]
        header = "r,W,N"
        if allowance is not None:
            cols.append(np.full_like(self.radii, allowance))
            header += ",allowance"
        np.savetxt(path, np.stack(cols, axis=1), delimiter=",", header=header, comments="")


def monitor_series(fld: GridField, lam: float, radii) -> MonitorSeries:
    radii = np.asarray(sorted(radii, reverse=True), dtype=float)
    W = np.array([weiss(fld, lam, r) for r in radii])
    N = np.array([almgren(fld, r) for r in radii])
    return MonitorSeries(
        radii, W, N, lam, quadrature={"h": fld.grid.h, "scheme": "mirrored-GL x uniform"}
    )


def weiss_monotonicity_audit(fld: GridField, lam: float, radii, allowance: float):
    """Consecutive radius pairs (descending) where W drops beyond the allowance;
    each violation carries (r_large, r_small, W_large, W_small)."""
    series = monitor_series(fld, lam, radii)
    out = []
    for k in range(len(series.radii) - 1):
        if series.weiss[k] < series.weiss[k + 1] - allowance:
            out.append(
                (
                    float(series.radii[k]),
                    float(series.radii[k + 1]),
                    float(series.weiss[k]),
                    float(series.weiss[k + 1]),
                )
            )
    return out, series


def weiss_derivative(fld: GridField, lam: float, r: float) -> float:
    """Right side of the monotonicity identity: (2/r) * int_{dB_1} (grad u_r . nu - lam u_r)^2
    for the lam-homogeneous rescaling u_r."""
    _check_radius(fld.grid, r)
    pts, w = _shell_rule(fld.grid, r)
    uvals = fld.eval_points(r * pts)
    gvals = grad_eval(fld, r * pts)
    radial = (gvals * pts).sum(axis=-1)  # grad u(rx) . x-hat
    integrand = (r ** (1.0 - lam) * radial - lam * r ** (-lam) * uvals) ** 2
    return (2.0 / r) * float(np.dot(integrand, w))


def radial_change(fld: GridField, lam: float, r: float, s: float, allowance: float = 0.0):
    """(lhs, rhs) of the radial-change bound between homogeneous rescalings.

    lhs = int_{dB_1} |u_r - u_s|; rhs = sqrt(log(r/s)) * sqrt(W(r) - W(s)).
    Raises if W(r) < W(s) beyond the allowance (monotonicity failure)."""
    if not (4.0 * fld.grid.h <= s < r <= 1.0 + 1e-12):
        raise ValueError("need 4h <= s < r <= 1")
    Wr = weiss(fld, lam, r)
    Ws = weiss(fld, lam, s)
    if Wr < Ws - allowance:
        raise ArithmeticError(f"Weiss monotonicity failure: W({r})={Wr} < W({s})={Ws}")
    pts, w = _shell_rule(fld.grid, r)
    ur = fld.eval_points(r * pts) / r**lam
    us = fld.eval_points(s * pts) / s**lam
    lhs = float(np.dot(np.abs(ur - us), w))
    rhs = math.sqrt(math.log(r / s)) * math.sqrt(max(Wr - Ws, 0.0))
    return lhs, rhs


# ---------------------------------------------------------------------------
# rescaling


def rescale(fld: GridField, q, r: float, mode) -> GridField:
    """Resample u around plane point q at scale r onto the unit grid.

    mode: ("homogeneous", m) divides by r^m; "normalized" divides by the
    r^{-(d-1)/2}-scaled shell L2 norm.
    """
    grid = fld.grid
    q = np.asarray(q, dtype=float)
    if np.abs(q).max() + r > 1.0 + 1e-12:
        raise ValueError("B_r(q) leaves the domain")
    pts = grid.node_points()
    vals = fld.eval_points(q + r * pts)
    if mode == "normalized":
        # u_{q,r} = r^{(d-1)/2} u(q+rx) / ||u||_{L2(dB_r(q))}; in resampled
        # variables this is division by the unit-shell L2 norm.
        resampled = GridField(grid, vals, fld.even_symmetric and q[-1] == 0.0)
        norm2 = shell_integral(resampled, 1.0, fn=np.square)
        if norm2 <= 0.0:
            raise ZeroDivisionError("vanishing shell norm in normalized rescaling")
        vals = vals / math.sqrt(norm2)
    else:
        kind, m = mode
        if kind != "homogeneous":
            raise ValueError("mode must be 'normalized' or ('homogeneous', m)")
        vals = vals / r**m
    return GridField(grid, vals, fld.even_symmetric)


# ---------------------------------------------------------------------------
# contact set and pin-down predicate


@dataclass
class ContactSet:
    contact: np.ndarray  # boolean mask on the plane slab
    free_boundary: np.ndarray
    zero_tol: float


def contact_set(fld: GridField) -> ContactSet:
    plane = fld.values[fld.grid.izp]
    zero_tol = 10.0 * np.finfo(float).eps * max(np.abs(fld.values).max(), 1.0)
    contact = np.abs(plane) <= zero_tol
    free = np.zeros_like(contact)
    for a in range(contact.ndim):
        for shift in (1, -1):
            rolled = np.roll(contact, shift, axis=a)
            edge = tuple(
                (0 if shift == 1 else -1) if b == a else slice(None) for b in range(contact.ndim)
            )
            rolled[edge] = True
            free |= contact & ~rolled
    return ContactSet(contact=contact, free_boundary=free, zero_tol=zero_tol)


class HypothesisFailure(ValueError):
    pass


def pin_down(fld: GridField, p: HomPoly, eps: float, M: float, hyp_tol: float = 1e-7):
    """Plane nodes where u must vanish given u <= p + eps, and the violations.

    Checks the hypothesis nodewise first.  The region is the inner plane disc
    of radius 1 - sqrt(eps) intersected with {d_d p <= -M sqrt(eps)} (one-sided
    derivative of the odd representative)."""
    if p.cls != "odd":
        raise ValueError("pin-down applies to odd-class polynomials")
    grid = fld.grid
    pts = grid.node_points()
    pvals = p.eval(pts)
    slack = float((fld.values - pvals).max())
    if slack > eps + hyp_tol:
        raise HypothesisFailure(f"u <= p + eps fails by {slack - eps:.3e}")
    plane_pts = pts[grid.izp]
    dd = p.grad(plane_pts)[..., -1]
    xnorm = np.linalg.norm(plane_pts[..., :-1], axis=-1)
    region = (xnorm <= 1.0 - math.sqrt(max(eps, 0.0))) & (dd <= -M * math.sqrt(max(eps, 0.0)))
    cs = contact_set(fld)
    violations = region & ~cs.contact
    return region, int(violations.sum())
