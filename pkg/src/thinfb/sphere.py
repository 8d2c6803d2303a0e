"""Boundary-layer replacement machinery on the sphere.

Given a degree-m class polynomial p, the replacement pbar minimizes the
spherical energy  int |grad_S w|^2 - lam(m) w^2  among fields that agree with
p outside the band L_eta = {|x_d| < eta |x|} and are nonnegative on the
equator.  The module extracts the interface density f, the equator measure g,
the deficit kappa = int_{S_eta^+} f, the projection phi of f/kappa onto the
class, and the log-corrector Phi.

Discretization: latitude-longitude grid (d=3) or angle grid (d=2) with the
equator as a grid circle and the interfaces snapped to grid latitudes.  The
band problem is solved for the correction v = pbar - p directly: the source
carried by p is imposed analytically (zero in the band interior; the one-sided
derivative jump of odd-class polynomials on the equator), so admissible
polynomials yield v identically zero and kappa = 0 to machine precision.
Everything is stored on the closed upper hemisphere; fields are even in x_d.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .polyhom import HomPoly, basis, project_to_Pm, sphere_area

DYADIC_FLOOR = 12  # eta = 2^-12 is the end of the dyadic search


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class LayerGeometry:
    """Band layout on the hemisphere grid, with its convexity certificate."""

    d: int
    m: int
    eta_request: float  # dyadic value selected by the search
    eta: float  # effective half-width after snapping to a grid latitude
    nb: int  # interface latitude index; band rows are 0..nb-1
    n_lat: int  # latitude rows incl. equator (row 0) and pole (row n_lat-1)
    n_phi: int  # azimuth nodes (d=3); ignored for d=2
    lam: float
    margin: float
    eig_min: float  # certified smallest eigenvalue of -Lap_S - lam on the band

    @property
    def dmu(self) -> float:
        if self.d == 3:
            return 0.5 * np.pi / (self.n_lat - 1)
        return np.pi / (self.n_lat - 1)

    def latitudes(self) -> np.ndarray:
        return self.dmu * np.arange(self.n_lat)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "m": self.m, "eta_request": self.eta_request,
            "eta": self.eta, "nb": self.nb, "n_lat": self.n_lat,
            "n_phi": self.n_phi, "lam": self.lam, "margin": self.margin,
            "eig_min": self.eig_min,
        }

    @staticmethod
    def from_dict(dd: dict) -> "LayerGeometry":
        return LayerGeometry(**dd)


def _coeffs(geom: LayerGeometry):
    """Row-wise stencil weights aN, aS, aP and nodal areas on the hemisphere.

    Conservative flux form: aN[i], aS[i] couple latitude i to i+1, i-1; aP[i]
    is the azimuthal weight.  Row 0 uses the mirror closure (aS[0] = aN[0]).
    """
    dmu = geom.dmu
    mu = geom.latitudes()
    if geom.d == 3:
        cos = np.cos(mu)
        cos = np.where(np.abs(cos) < 1e-15, 1e-15, cos)  # pole row unused here
        aN = np.cos(mu + 0.5 * dmu) / (cos * dmu**2)
        aS = np.cos(mu - 0.5 * dmu) / (cos * dmu**2)
        aS[0] = aN[0]
        dphi = 2.0 * np.pi / geom.n_phi
        aP = 1.0 / (cos**2 * dphi**2)
        area = 2.0 * cos * dmu * dphi  # full-sphere cell of an even field
        area[0] = dmu * dphi  # the equator cell straddles the plane
    else:
        aN = np.full(geom.n_lat, 1.0 / dmu**2)
        aS = aN.copy()
        aP = np.zeros(geom.n_lat)
        area = np.full(geom.n_lat, 2.0 * dmu)
        area[0] = area[-1] = dmu  # both equator points t = 0, pi
    return aN, aS, aP, area


def _equator_nodes(geom: LayerGeometry) -> np.ndarray:
    if geom.d == 3:
        phi = 2.0 * np.pi * np.arange(geom.n_phi) / geom.n_phi
        return np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], axis=1)
    return np.array([[1.0, 0.0], [-1.0, 0.0]])


def interface_points(geom: LayerGeometry):
    """Nodes of S_eta^+ and the H^{d-2} mass each carries."""
    mu_b = geom.nb * geom.dmu
    if geom.d == 3:
        phi = 2.0 * np.pi * np.arange(geom.n_phi) / geom.n_phi
        c = np.cos(mu_b)
        pts = np.stack(
            [c * np.cos(phi), c * np.sin(phi), np.full_like(phi, np.sin(mu_b))], axis=1
        )
        masses = np.full(geom.n_phi, c * 2.0 * np.pi / geom.n_phi)
        return pts, masses
    pts = np.array(
        [[np.cos(mu_b), np.sin(mu_b)], [-np.cos(mu_b), np.sin(mu_b)]]
    )
    return pts, np.ones(2)  # counting measure in d=2


def hemisphere_nodes(geom: LayerGeometry) -> np.ndarray:
    """All grid nodes as unit vectors, shape (n_lat, n_phi, d) or (n_lat, d)."""
    mu = geom.latitudes()
    if geom.d == 3:
        phi = 2.0 * np.pi * np.arange(geom.n_phi) / geom.n_phi
        cmu, smu = np.cos(mu)[:, None], np.sin(mu)[:, None]
        return np.stack(
            [cmu * np.cos(phi), cmu * np.sin(phi), np.broadcast_to(smu, (geom.n_lat, geom.n_phi))],
            axis=-1,
        )
    return np.stack([np.cos(mu), np.sin(mu)], axis=-1)


# ---------------------------------------------------------------------------
# eigenvalue certificate and eta selection


def _band_matrices(geom: LayerGeometry):
    """Stiffness K and diagonal mass M of -Lap_S on the Dirichlet band.

    Unknowns are the band rows 0..nb-1 (d=3: times n_phi; d=2: the two
    segments near t=0 and t=pi stacked).  K is symmetric positive definite
    whenever the certificate margin holds after subtracting lam*M.
    """
    aN, aS, aP, area = _coeffs(geom)
    nb = geom.nb
    if geom.d == 3:
        nphi = geom.n_phi
        N = nb * nphi
        idx = lambda i, j: i * nphi + j % nphi
        rows, cols, vals = [], [], []
        w = np.empty(N)
        for i in range(nb):
            for j in range(nphi):
                k = idx(i, j)
                w[k] = area[i]
                diag = aN[i] + aS[i] + 2.0 * aP[i]
                rows.append(k); cols.append(k); vals.append(diag * area[i])
                if i + 1 < nb:
                    rows.append(k); cols.append(idx(i + 1, j)); vals.append(-aN[i] * area[i])
                if i > 0:
                    rows.append(k); cols.append(idx(i - 1, j)); vals.append(-aS[i] * area[i])
                else:
                    rows.append(k); cols.append(idx(1, j) if nb > 1 else k)
                    vals.append(-aS[0] * area[0] if nb > 1 else 0.0)
                for dj in (-1, 1):
                    rows.append(k); cols.append(idx(i, j + dj)); vals.append(-aP[i] * area[i])
        K = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
    else:
        nt = geom.n_lat
        N = 2 * nb
        seg = [list(range(nb)), list(range(nt - 1, nt - 1 - nb, -1))]
        rows, cols, vals = [], [], []
        w = np.empty(N)
        for s, nodes in enumerate(seg):
            for a, i in enumerate(nodes):
                k = s * nb + a
                w[k] = area[i]
                diag = aN[i] + aS[i]
                rows.append(k); cols.append(k); vals.append(diag * area[i])
                if a + 1 < nb:  # toward the interface
                    rows.append(k); cols.append(k + 1); vals.append(-area[i] / geom.dmu**2)
                if a > 0:
                    rows.append(k); cols.append(k - 1); vals.append(-area[i] / geom.dmu**2)
                elif nb > 1:  # mirror at the equator endpoint
                    rows.append(k); cols.append(k + 1); vals.append(-area[i] / geom.dmu**2)
        K = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
    K = 0.5 * (K + K.T)
    return K, w


def band_eigen_min(geom: LayerGeometry, max_iter: int = 300, tol: float = 1e-11) -> float:
    """Smallest eigenvalue of -Lap_S - lam on the Dirichlet band.

    Shift-and-invert power iteration at sigma = -lam - 1, which lies strictly
    below the whole spectrum because -Lap_S is nonnegative.
    """
    K, w = _band_matrices(geom)
    M = sp.diags(w).tocsc()
    sigma = -geom.lam - 1.0
    B = (K - geom.lam * M) - sigma * M
    lu = spla.splu(B.tocsc())
    rng = np.random.default_rng(20260824)
    v = rng.standard_normal(K.shape[0])
    v /= np.linalg.norm(v)
    rho_old = np.inf
    A = K - geom.lam * M
    for _ in range(max_iter):
        v = lu.solve(w * v)
        v /= np.linalg.norm(v)
        rho = float(v @ (A @ v)) / float(v @ (w * v))
        if abs(rho - rho_old) <= tol * max(1.0, abs(rho)):
            break
        rho_old = rho
    return rho


def geometry_for(
    d: int,
    m: int,
    eta_request: float,
    margin: float = 0.5,
    n_lat: int = 97,
    n_phi: int = 128,
) -> LayerGeometry:
    """Band geometry at a requested eta, snapped to the latitude grid, with
    the eigenvalue certificate value recorded (not enforced)."""
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if m > 8:
        raise ValueError("degrees above 8 are out of scope")
    if not 0.0 < eta_request < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    lam = float(m * (m + d - 2))
    dmu = (0.5 * np.pi if d == 3 else np.pi) / (n_lat - 1)
    max_nb = (n_lat - 1) // 2 - 1 if d == 2 else n_lat - 2
    nb = int(round(np.arcsin(eta_request) / dmu))
    nb = max(3, min(nb, max_nb))
    eta = float(np.sin(nb * dmu))
    geom = LayerGeometry(d, m, eta_request, eta, nb, n_lat, n_phi, lam, margin, 0.0)
    eig = band_eigen_min(geom)
    return LayerGeometry(d, m, eta_request, eta, nb, n_lat, n_phi, lam, margin, eig)


def choose_eta(
    d: int,
    m: int,
    margin: float = 0.5,
    n_lat: int = 97,
    n_phi: int = 128,
) -> LayerGeometry:
    """Largest dyadic eta whose band passes the eigenvalue certificate.

    The certificate is eig_min(-Lap_S - lam(m)) >= margin on the band with
    zero interface data, computed on the same grid the replacement uses.
    """
    last = None
    for j in range(1, DYADIC_FLOOR + 1):
        last = geometry_for(d, m, 2.0**-j, margin, n_lat, n_phi)
        if last.eig_min >= margin:
            return last
    return last  # narrowest band; certificate value recorded regardless


def refine(geom: LayerGeometry, factor: int = 2) -> LayerGeometry:
    """Same band at ``factor``-times the resolution (interfaces unchanged)."""
    g2 = LayerGeometry(
        geom.d, geom.m, geom.eta_request, geom.eta, geom.nb * factor,
        (geom.n_lat - 1) * factor + 1,
        geom.n_phi * factor if geom.d == 3 else geom.n_phi,
        geom.lam, geom.margin, 0.0,
    )
    eig = band_eigen_min(g2)
    return LayerGeometry(
        g2.d, g2.m, g2.eta_request, g2.eta, g2.nb, g2.n_lat, g2.n_phi,
        g2.lam, g2.margin, eig,
    )


# ---------------------------------------------------------------------------
# sphere fields


@dataclass
class SphereField:
    """Nodal values on the closed upper hemisphere grid, even in x_d.

    d=3: shape (n_lat, n_phi), row 0 the equator, last row the pole
    (replicated across azimuth).  d=2: shape (n_t,) over t in [0, pi].
    """

    d: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.d == 3 and self.values.ndim != 2:
            raise ValueError("d=3 sphere field must be 2-D")
        if self.d == 2 and self.values.ndim != 1:
            raise ValueError("d=2 sphere field must be 1-D")

    def copy(self) -> "SphereField":
        return SphereField(self.d, self.values.copy())

    def eval_dirs(self, dirs: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at unit vectors of shape (..., d)."""
        dirs = np.asarray(dirs, dtype=float)
        if self.d == 3:
            n_lat, n_phi = self.values.shape
            dmu = 0.5 * np.pi / (n_lat - 1)
            z = np.clip(np.abs(dirs[..., 2]), 0.0, 1.0)
            mu = np.arcsin(z)
            phi = np.mod(np.arctan2(dirs[..., 1], dirs[..., 0]), 2.0 * np.pi)
            fi = np.clip(mu / dmu, 0.0, n_lat - 1 - 1e-12)
            i0 = fi.astype(np.int64)
            ti = fi - i0
            fj = phi / (2.0 * np.pi / n_phi)
            j0 = fj.astype(np.int64) % n_phi
            tj = fj - np.floor(fj)
            j1 = (j0 + 1) % n_phi
            v = self.values
            return (
                (1 - ti) * ((1 - tj) * v[i0, j0] + tj * v[i0, j1])
                + ti * ((1 - tj) * v[i0 + 1, j0] + tj * v[i0 + 1, j1])
            )
        n_t = self.values.shape[0]
        dt = np.pi / (n_t - 1)
        t = np.arctan2(np.abs(dirs[..., 1]), dirs[..., 0])
        fi = np.clip(t / dt, 0.0, n_t - 1 - 1e-12)
        i0 = fi.astype(np.int64)
        ti = fi - i0
        return (1 - ti) * self.values[i0] + ti * self.values[i0 + 1]

    def eval_extension(self, m: int, pts: np.ndarray) -> np.ndarray:
        """m-homogeneous extension: field(x/|x|) * |x|^m at points (..., d)."""
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(pts, axis=-1)
        safe = np.where(r > 0.0, r, 1.0)
        vals = self.eval_dirs(pts / safe[..., None]) * safe**m
        if m > 0:
            vals = np.where(r > 0.0, vals, 0.0)
        return vals


def field_from_poly(p: HomPoly, geom: LayerGeometry) -> SphereField:
    return SphereField(geom.d, p.eval(hemisphere_nodes(geom)))


def sphere_integral(sf: SphereField, other: np.ndarray | None = None) -> float:
    """Full-sphere integral of the (even) field, optionally times ``other``."""
    vals = sf.values if other is None else sf.values * other
    if sf.d == 3:
        n_lat, n_phi = vals.shape
        dmu = 0.5 * np.pi / (n_lat - 1)
        dphi = 2.0 * np.pi / n_phi
        mu = dmu * np.arange(n_lat)
        w = 2.0 * np.cos(mu) * dmu * dphi
        w[0] = dmu * dphi
        w[-1] = 2.0 * (1.0 - np.cos(0.5 * dmu)) * 2.0 * np.pi / n_phi
        return float((vals * w[:, None]).sum())
    n_t = vals.shape[0]
    dt = np.pi / (n_t - 1)
    w = np.full(n_t, 2.0 * dt)
    w[0] = w[-1] = dt
    return float((vals * w).sum())


def grad_s_squared(sf: SphereField) -> np.ndarray:
    """Nodal |grad_S field|^2 by central differences (even mirror at row 0)."""
    v = sf.values
    if sf.d == 3:
        n_lat, n_phi = v.shape
        dmu = 0.5 * np.pi / (n_lat - 1)
        dphi = 2.0 * np.pi / n_phi
        dmu_v = np.gradient(v, dmu, axis=0)
        dmu_v[0] = 0.0  # even symmetry across the equator
        cos = np.cos(dmu * np.arange(n_lat))
        cos = np.maximum(cos, np.sin(0.5 * dmu))  # keep the pole row finite
        dphi_v = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2.0 * dphi)
        return dmu_v**2 + (dphi_v / cos[:, None]) ** 2
    n_t = v.shape[0]
    dt = np.pi / (n_t - 1)
    dv = np.gradient(v, dt)
    dv[0] = dv[-1] = 0.0
    return dv**2


def h1_ball_norm(sf: SphereField, m: int) -> float:
    """H^1(B_1) norm of the m-homogeneous extension of the field."""
    l2 = sphere_integral(sf, sf.values)
    grad_tang = sphere_integral(SphereField(sf.d, grad_s_squared(sf)))
    d = sf.d
    denom_g = d + 2 * m - 2
    if denom_g <= 0:
        raise ValueError("homogeneous extension not in H^1 for this (d, m)")
    return float(np.sqrt((m * m * l2 + grad_tang) / denom_g + l2 / (d + 2 * m)))


# ---------------------------------------------------------------------------
# the replacement


class ReplacementDivergence(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class InconsistentBundle(RuntimeError):
    """kappa vanished while the correction did not (or vice versa)."""


@dataclass
class ReplacementBundle:
    geom: LayerGeometry
    p: HomPoly
    pbar: SphereField
    v: SphereField
    f: np.ndarray  # density on S_eta^+ nodes (one value per azimuth node)
    g: np.ndarray  # nodal masses on the equator
    kappa: float
    phi: HomPoly
    Phi_log_coeff: float
    report: dict = field(default_factory=dict)
    _H: SphereField | None = field(default=None, repr=False)

    @property
    def H(self) -> SphereField:
        if self._H is None:
            self._H = _solve_H(self)
        return self._H

    def sup_v(self) -> float:
        return float(self.v.values.max(initial=0.0))

    def v_h1(self) -> float:
        return h1_ball_norm(self.v, self.geom.m)

    def to_json(self) -> str:
        return json.dumps(
            {
                "geom": self.geom.to_dict(),
                "p": self.p.to_text(),
                "pbar": self.pbar.values.tolist(),
                "v": self.v.values.tolist(),
                "f": self.f.tolist(),
                "g": self.g.tolist(),
                "kappa": self.kappa,
                "phi": self.phi.to_text(),
                "Phi_log_coeff": self.Phi_log_coeff,
                "report": self.report,
            }
        )

    @staticmethod
    def from_json(text: str) -> "ReplacementBundle":
        dd = json.loads(text)
        geom = LayerGeometry.from_dict(dd["geom"])
        return ReplacementBundle(
            geom=geom,
            p=HomPoly.from_text(dd["p"]),
            pbar=SphereField(geom.d, np.array(dd["pbar"])),
            v=SphereField(geom.d, np.array(dd["v"])),
            f=np.array(dd["f"]),
            g=np.array(dd["g"]),
            kappa=dd["kappa"],
            phi=HomPoly.from_text(dd["phi"]),
            Phi_log_coeff=dd["Phi_log_coeff"],
            report=dd["report"],
        )


def _equator_source(p: HomPoly, geom: LayerGeometry) -> np.ndarray:
    """Analytic distributional mass density of p on the equator row.

    Even-class polynomials are smooth across the plane: zero.  Odd-class ones
    carry the one-sided normal derivative jump 2*d_d q as a line density;
    dividing by the latitude spacing converts it to a nodal area density.
    """
    eq = _equator_nodes(geom)
    if p.cls == "even":
        return np.zeros(len(eq))
    return 2.0 * p.grad(eq)[:, geom.d - 1] / geom.dmu


def _band_residual(v, aN, aS, aP, diag, src, obs):
    nb = v.shape[0] - 1
    res = 0.0
    for i in range(nb):
        south = v[1] if i == 0 else v[i - 1]
        local = (
            aN[i] * v[i + 1] + aS[i] * south
            + aP[i] * (np.roll(v[i], -1) + np.roll(v[i], 1)) + src[i]
        ) / diag[i]
        if i == 0:
            local = np.maximum(local, obs)
        res = max(res, float(np.abs(v[i] - local).max()))
    return res


def _solve_band_3d(geom, src, obs, tol, max_iter, omega):
    nb, nphi = geom.nb, geom.n_phi
    aN, aS, aP, _ = _coeffs(geom)
    diag = aN + aS + 2.0 * aP - geom.lam
    v = np.zeros((nb + 1, nphi))
    src_rows = np.zeros((nb, nphi))
    src_rows[0] = src
    aNc, aSc, aPc, dg = (np.ascontiguousarray(a[:nb]) for a in (aN, aS, aP, diag))
    obs = np.ascontiguousarray(obs)
    sweeps = 0
    while sweeps < max_iter:
        for _ in range(20):
            kernels.band_sweep(v, aNc, aSc, aPc, dg, src_rows, obs, omega, 0)
            kernels.band_sweep(v, aNc, aSc, aPc, dg, src_rows, obs, omega, 1)
        sweeps += 20
        res = _band_residual(v, aN, aS, aP, diag, src_rows, obs)
        if res <= tol:
            return v, sweeps, res
    raise ReplacementDivergence(
        f"band SOR stalled at residual {res:.3e} after {sweeps} sweeps", res
    )


def _solve_band_2d(geom, src, obs):
    """Exact solve of the two 1-D band segments (obstacle at one node each).

    Each segment is a tridiagonal system for -v'' - lam v = src with v = 0 at
    the interface and a lower bound at the equator endpoint; the constraint
    is active or not, so two linear solves settle it exactly.
    """
    from scipy.linalg import solve_banded

    nb, dt, lam = geom.nb, geom.dmu, geom.lam
    nt = geom.n_lat
    v = np.zeros(nt)

    def segment(s_eq, bound):
        # unknowns a=0..nb-1 (a=0 equator with mirror), Dirichlet at a=nb
        n = nb
        ab = np.zeros((3, n))
        ab[1] = 2.0 / dt**2 - lam
        ab[0, 1:] = -1.0 / dt**2
        ab[2, :-1] = -1.0 / dt**2
        ab[0, 1] -= 1.0 / dt**2  # mirror doubles the equator's inward link
        rhs = np.zeros(n)
        rhs[0] = s_eq
        sol = solve_banded((1, 1), ab, rhs)
        if sol[0] >= bound:
            return sol
        # constraint active: pin the equator value and solve the rest
        if n == 1:
            return np.array([bound])
        ab2 = np.zeros((3, n - 1))
        ab2[1] = 2.0 / dt**2 - lam
        ab2[0, 1:] = -1.0 / dt**2
        ab2[2, :-1] = -1.0 / dt**2
        rhs2 = np.zeros(n - 1)
        rhs2[0] = bound / dt**2
        rest = solve_banded((1, 1), ab2, rhs2)
        return np.concatenate([[bound], rest])

    v[:nb] = segment(src[0], obs[0])
    v[nt - 1 : nt - 1 - nb : -1] = segment(src[1], obs[1])
    return v


def replace(
    p: HomPoly,
    geom: LayerGeometry,
    tol: float = 1e-13,
    max_iter: int = 100_000,
    omega: float = 1.9,
) -> ReplacementBundle:
    """Constrained minimizer of the spherical band energy and its measures."""
    if p.degree != geom.m or p.dim != geom.d:
        raise ValueError("polynomial degree/dimension does not match the geometry")
    nrm = p.norm()
    if not (0.5 - 1e-9 <= nrm <= 4.0 + 1e-9):
        raise ValueError(f"polynomial sphere norm {nrm:.3f} outside [1/2, 4]")

    eq = _equator_nodes(geom)
    src = _equator_source(p, geom)
    obs = -p.eval(eq) if p.cls == "even" else np.zeros(len(eq))
    scale = max(1.0, float(np.abs(p.eval(hemisphere_nodes(geom))).max()))

    if geom.d == 3:
        vb, sweeps, res = _solve_band_3d(geom, src, obs, tol * scale, max_iter, omega)
        vfull = np.zeros((geom.n_lat, geom.n_phi))
        vfull[: geom.nb + 1] = vb
        f = (4.0 * vb[geom.nb - 1] - vb[geom.nb - 2]) / (2.0 * geom.dmu)
        aN, aS, aP, _ = _coeffs(geom)
        diag = aN + aS + 2.0 * aP - geom.lam
        Lv0 = (
            aN[0] * vb[1] + aS[0] * vb[1]
            + aP[0] * (np.roll(vb[0], -1) + np.roll(vb[0], 1))
            - diag[0] * vb[0]
        )
        dphi = 2.0 * np.pi / geom.n_phi
        g = (src + Lv0) * geom.dmu * dphi
        _, masses = interface_points(geom)
        kappa = float((f * masses).sum())
    else:
        vfull = _solve_band_2d(geom, src, obs)
        sweeps, res = 0, 0.0
        nb, dt, nt = geom.nb, geom.dmu, geom.n_lat
        f = np.array(
            [
                (4.0 * vfull[nb - 1] - vfull[nb - 2]) / (2.0 * dt),
                (4.0 * vfull[nt - nb] - vfull[nt - nb + 1]) / (2.0 * dt),
            ]
        )
        Lv0 = np.array(
            [
                2.0 * vfull[1] / dt**2 - (2.0 / dt**2 - geom.lam) * vfull[0],
                2.0 * vfull[-2] / dt**2 - (2.0 / dt**2 - geom.lam) * vfull[-1],
            ]
        )
        g = (src + Lv0) * dt
        kappa = float(f.sum())

    v_sf = SphereField(geom.d, vfull)
    pbar = SphereField(geom.d, p.eval(hemisphere_nodes(geom)) + vfull)
    sup_v = float(np.abs(vfull).max())
    if kappa <= 1e-14 * scale and sup_v > 1e-10 * scale:
        raise InconsistentBundle(
            f"kappa = {kappa:.3e} but sup|v| = {sup_v:.3e}"
        )

    if kappa > 1e-14 * scale:
        pts, masses = interface_points(geom)
        both = np.vstack([pts, pts * np.array([1.0] * (geom.d - 1) + [-1.0])])
        mboth = np.concatenate([f * masses, f * masses]) / kappa
        phi = project_to_Pm(("measure", both, mboth), p.dim, p.degree, p.cls)
    else:
        phi = HomPoly(p.dim, p.degree, p.cls, {})

    denom = geom.d + 2 * geom.m - 2
    if denom == 0:
        denom = np.inf  # the log corrector is undefined for (d, m) = (2, 0)
    return ReplacementBundle(
        geom=geom,
        p=p,
        pbar=pbar,
        v=v_sf,
        f=np.asarray(f, dtype=float),
        g=np.asarray(g, dtype=float),
        kappa=kappa,
        phi=phi,
        Phi_log_coeff=1.0 / denom,
        report={"sweeps": sweeps, "residual": res, "tol": tol, "omega": omega,
                "backend": kernels.BACKEND},
    )


@dataclass
class ReplacementResiduals:
    equator_min: float  # min of pbar on the equator (should be >= -tol)
    band_residual: float  # max |(Lap_S + lam) pbar| off the equator in the band
    equator_sign: float  # max positive part of the equator measure density
    compl_residual: float  # max |pbar * measure| on the equator


def replacement_residuals(bundle: ReplacementBundle) -> ReplacementResiduals:
    """Nodewise complementarity diagnostics for a computed replacement."""
    geom = bundle.geom
    v = bundle.v.values
    if geom.d == 3:
        aN, aS, aP, _ = _coeffs(geom)
        diag = aN + aS + 2.0 * aP - geom.lam
        band = 0.0
        for i in range(1, geom.nb):
            Lv = (
                aN[i] * v[i + 1] + aS[i] * v[i - 1]
                + aP[i] * (np.roll(v[i], -1) + np.roll(v[i], 1))
                - diag[i] * v[i]
            )
            band = max(band, float(np.abs(Lv).max()))
        eqv = bundle.pbar.values[0]
    else:
        dt = geom.dmu
        band = 0.0
        for seg in (range(1, geom.nb), range(geom.n_lat - 2, geom.n_lat - 1 - geom.nb, -1)):
            for i in seg:
                Lv = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / dt**2 + geom.lam * v[i]
                band = max(band, abs(float(Lv)))
        eqv = bundle.pbar.values[[0, -1]]
    dens = bundle.g  # nodal masses; sign is what matters
    return ReplacementResiduals(
        equator_min=float(np.min(eqv)),
        band_residual=band,
        equator_sign=float(np.maximum(dens, 0.0).max(initial=0.0)),
        compl_residual=float(np.abs(eqv * dens).max(initial=0.0)),
    )


# ---------------------------------------------------------------------------
# lemma-style verifications


def verify_f_comparability(bundle: ReplacementBundle):
    """Extremes of f/kappa over the interface nodes (both positive)."""
    if bundle.kappa <= 0.0:
        raise ValueError("comparability requires kappa > 0")
    ratio = bundle.f / bundle.kappa
    return float(ratio.min()), float(ratio.max())


@dataclass
class KappaVFit:
    ts: np.ndarray
    kappas: np.ndarray
    sup_vs: np.ndarray
    h1s: np.ndarray
    slope_supv: float  # log sup v vs log kappa
    slope_h1: float  # log ||v||_H1 vs log kappa
    kappa_over_supv_max: float  # fitted C for kappa <= C sup v


def verify_kappa_v_bounds(p0: HomPoly, p1: HomPoly, geom: LayerGeometry, ts=None) -> KappaVFit:
    """Scaling of kappa, sup v and ||v||_H1 along the pencil p0 + t p1."""
    if ts is None:
        ts = 2.0 ** -np.arange(1, 9)
    ts = np.asarray(ts, dtype=float)
    kappas, sups, h1s = [], [], []
    for t in ts:
        b = replace(p0 + t * p1, geom)
        kappas.append(b.kappa)
        sups.append(b.sup_v())
        h1s.append(b.v_h1())
    kappas, sups, h1s = map(np.array, (kappas, sups, h1s))
    if np.all(kappas == 0.0):
        raise ValueError("degenerate family: kappa vanishes identically")
    ok = kappas > 0.0
    lk = np.log(kappas[ok])
    slope_supv = float(np.polyfit(lk, np.log(sups[ok]), 1)[0])
    slope_h1 = float(np.polyfit(lk, np.log(h1s[ok]), 1)[0])
    return KappaVFit(
        ts=ts, kappas=kappas, sup_vs=sups, h1s=h1s,
        slope_supv=slope_supv, slope_h1=slope_h1,
        kappa_over_supv_max=float((kappas[ok] / sups[ok]).max()),
    )


# ---------------------------------------------------------------------------
# the corrector H and the log extension Phi


def _solve_H(bundle: ReplacementBundle) -> SphereField:
    """Solve (Lap_S + lam) H = f/kappa - phi with the class side condition.

    Even class: H is made L^2-orthogonal to the degree-m class (the Fredholm
    kernel); odd class: Dirichlet H = 0 on the equator, kernel orthogonality
    picking the canonical representative.  The small bordered sparse system
    handles both at once.
    """
    geom, p = bundle.geom, bundle.p
    if bundle.kappa <= 0.0:
        raise ValueError("H is defined only for kappa > 0")
    lam = geom.lam
    bas = basis(p.dim, p.degree, p.cls)
    nodes = hemisphere_nodes(geom)
    phi_vals = bundle.phi.eval(nodes)

    if geom.d == 3:
        n_lat, nphi = geom.n_lat, geom.n_phi
        M = n_lat - 1  # pole row index
        aN, aS, aP, area = _coeffs(geom)
        diag = aN + aS + 2.0 * aP - lam
        N = M * nphi + 1
        pole = N - 1
        idx = lambda i, j: i * nphi + j % nphi
        rows, cols, vals = [], [], []
        rhs = np.zeros(N)
        dirichlet_eq = p.cls == "odd"
        dphi = 2.0 * np.pi / nphi
        for i in range(M):
            for j in range(nphi):
                k = idx(i, j)
                if i == 0 and dirichlet_eq:
                    rows.append(k); cols.append(k); vals.append(1.0)
                    continue
                rows.append(k); cols.append(k); vals.append(-diag[i])
                north = pole if i == M - 1 else idx(i + 1, j)
                rows.append(k); cols.append(north); vals.append(aN[i])
                south = idx(1, j) if i == 0 else idx(i - 1, j)
                rows.append(k); cols.append(south); vals.append(aS[i])
                rows.append(k); cols.append(idx(i, j + 1)); vals.append(aP[i])
                rows.append(k); cols.append(idx(i, j - 1)); vals.append(aP[i])
                rhs[k] = -phi_vals[i, j]
                if i == geom.nb:
                    rhs[k] += bundle.f[j] / (bundle.kappa * geom.dmu)
        # pole flux balance
        cap = 2.0 * np.pi * (1.0 - np.cos(0.5 * geom.dmu))
        cflux = np.cos((M - 0.5) * geom.dmu) * dphi / geom.dmu
        for j in range(nphi):
            rows.append(pole); cols.append(idx(M - 1, j)); vals.append(cflux / cap)
        rows.append(pole); cols.append(pole); vals.append(-nphi * cflux / cap + lam)
        rhs[pole] = -float(bundle.phi.eval(np.array([[0.0] * (geom.d - 1) + [1.0]]))[0])

        w = np.empty(N)
        for i in range(M):
            w[i * nphi : (i + 1) * nphi] = area[i]
        w[pole] = 2.0 * cap

        flat_nodes = np.vstack([nodes[:M].reshape(-1, 3), [[0.0, 0.0, 1.0]]])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
        K = len(bas)
        if K:
            P = np.stack([b.eval(flat_nodes) for b in bas], axis=1)
            if dirichlet_eq:
                P[: nphi] = 0.0  # keep the identity rows clean
            Q = (w[:, None] * np.stack([b.eval(flat_nodes) for b in bas], axis=1)).T
            big = sp.bmat([[A, sp.csc_matrix(P)], [sp.csc_matrix(Q), None]], format="csc")
            sol = spla.spsolve(big, np.concatenate([rhs, np.zeros(K)]))[:N]
        else:
            sol = spla.spsolve(A, rhs)
        H = np.empty((n_lat, nphi))
        H[:M] = sol[:-1].reshape(M, nphi)
        H[M] = sol[pole]
    else:
        n_t = geom.n_lat
        dt = geom.dmu
        N = n_t
        A = np.zeros((N, N))
        rhs = np.zeros(N)
        dirichlet_eq = p.cls == "odd"
        for i in range(n_t):
            if i in (0, n_t - 1) and dirichlet_eq:
                A[i, i] = 1.0
                continue
            A[i, i] = -(2.0 / dt**2 - lam)
            lo = 1 if i == 0 else i - 1
            hi = n_t - 2 if i == n_t - 1 else i + 1
            A[i, lo] += 1.0 / dt**2
            A[i, hi] += 1.0 / dt**2
            rhs[i] = -phi_vals[i]
        rhs[geom.nb] += bundle.f[0] / (bundle.kappa * dt)
        rhs[n_t - 1 - geom.nb] += bundle.f[1] / (bundle.kappa * dt)
        w = np.full(N, 2.0 * dt)
        w[0] = w[-1] = dt
        K = len(bas)
        if K:
            P = np.stack([b.eval(nodes) for b in bas], axis=1)
            if dirichlet_eq:
                P[[0, -1]] = 0.0
            Q = (w[:, None] * np.stack([b.eval(nodes) for b in bas], axis=1)).T
            big = np.block([[A, P], [Q, np.zeros((K, K))]])
            sol = np.linalg.solve(big, np.concatenate([rhs, np.zeros(K)]))[:N]
        else:
            sol = np.linalg.solve(A, rhs)
        H = sol

    hf = SphereField(geom.d, H)
    if bas:
        # exact re-projection: the border enforces this only through the grid
        vals_flat = hf.values
        for b in bas:
            bn = field_from_poly(b, geom)
            coef = sphere_integral(SphereField(geom.d, vals_flat * bn.values)) / sphere_integral(
                SphereField(geom.d, bn.values * bn.values)
            )
            vals_flat = vals_flat - coef * bn.values
        hf = SphereField(geom.d, vals_flat)
        if p.cls == "odd":
            if geom.d == 3:
                hf.values[0] = 0.0
            else:
                hf.values[[0, -1]] = 0.0
    return hf


def fredholm_residuals(bundle: ReplacementBundle) -> np.ndarray:
    """<f/kappa - phi, p_j> over the class basis (zero up to quadrature)."""
    bas = basis(bundle.p.dim, bundle.p.degree, bundle.p.cls)
    if not bas:
        return np.zeros(0)
    pts, masses = interface_points(bundle.geom)
    flip = np.array([1.0] * (bundle.geom.d - 1) + [-1.0])
    out = []
    for b in bas:
        meas = float((b.eval(pts) * bundle.f * masses).sum()) + float(
            (b.eval(pts * flip) * bundle.f * masses).sum()
        )
        out.append(meas / bundle.kappa - bundle.phi.inner(b))
    return np.array(out)


def build_Phi(bundle: ReplacementBundle, x: np.ndarray, h_min: float = 1e-3) -> np.ndarray:
    """The log-corrected extension H(x/|x|)|x|^m + c phi(x/|x|)|x|^m log|x|."""
    if bundle.kappa <= 0.0:
        raise ValueError("Phi is defined only for kappa > 0")
    if not np.isfinite(bundle.Phi_log_coeff):
        raise ValueError("log corrector undefined for (d, m) = (2, 0)")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < h_min):
        raise ValueError("evaluation inside the exclusion radius")
    m = bundle.geom.m
    dirs = x / r[..., None]
    return (
        bundle.H.eval_dirs(dirs) * r**m
        + bundle.Phi_log_coeff * bundle.phi.eval(dirs) * r**m * np.log(r)
    )


def phi_l2_norm(bundle: ReplacementBundle) -> float:
    return bundle.phi.norm()


def phi_c01_norm(bundle: ReplacementBundle, h_min: float = 1e-3, n_r: int = 24) -> float:
    """sup |Phi| + sup |grad Phi| over B_1 minus the exclusion ball, sampled."""
    geom = bundle.geom
    radii = np.linspace(max(2 * h_min, 0.05), 1.0, n_r)
    if geom.d == 3:
        mu = geom.latitudes()[:-1]
        phi_ang = 2.0 * np.pi * (np.arange(geom.n_phi) + 0.3) / geom.n_phi
        cm, sm = np.cos(mu)[:, None], np.sin(mu)[:, None]
        dirs = np.stack(
            [cm * np.cos(phi_ang), cm * np.sin(phi_ang),
             np.broadcast_to(sm, (mu.size, geom.n_phi))], axis=-1
        ).reshape(-1, 3)
    else:
        t = np.linspace(0.0, np.pi, 4 * geom.n_lat)
        dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, geom.d)
    vals = build_Phi(bundle, pts, h_min=h_min)
    eps = 1e-4
    gmax = 0.0
    for a in range(geom.d):
        shift = np.zeros(geom.d)
        shift[a] = eps
        gp = build_Phi(bundle, pts + shift, h_min=h_min * 0.5)
        gm = build_Phi(bundle, pts - shift, h_min=h_min * 0.5)
        gmax = max(gmax, float(np.abs((gp - gm) / (2 * eps)).max()))
    return float(np.abs(vals).max()) + gmax
