"""Finite-dimensional spaces of degree-m homogeneous harmonic polynomials.

Two parity classes on R^d, both giving functions even in x_d:

* even class: polynomials p with every x_d-exponent even and Delta p = 0.
* odd class: we store a harmonic polynomial q, odd in x_d; the represented
  function is p(x', x_d) = q(x', |x_d|), harmonic off the hyperplane and
  vanishing on it.

Coefficients of class elements come out of an exact rational nullspace
computation, so harmonicity holds with no floating tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement

import numpy as np
from scipy import optimize

__all__ = [
    "HomPoly",
    "ConeMembership",
    "basis",
    "basis_raw",
    "project_to_Pm",
    "cone_check",
    "sphere_quadrature",
    "sphere_area",
    "monomials",
    "sphere_monomial_mean",
    "spherical_harmonic_dim",
]


def monomials(d: int, m: int) -> list[tuple[int, ...]]:
    """Degree-m exponent tuples in d variables, graded-lex (here: lex) order."""
    out = []
    for combo in combinations_with_replacement(range(d), m):
        e = [0] * d
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    out = sorted(set(out), reverse=True)
    return out


def class_monomials(d: int, m: int, cls: str) -> list[tuple[int, ...]]:
    want_odd = cls == "odd"
    return [e for e in monomials(d, m) if (e[d - 1] % 2 == 1) == want_odd]


def sphere_monomial_mean(e: tuple[int, ...]) -> Fraction:
    """Mean of x^e over S^{d-1}, exact. Zero unless all exponents are even."""
    if any(k % 2 for k in e):
        return Fraction(0)
    d = len(e)
    num = Fraction(1)
    for k in e:
        for j in range(1, k, 2):  # (k-1)!!
            num *= j
    den = Fraction(1)
    tot = sum(e)
    for j in range(0, tot, 2):
        den *= d + j
    return num / den


def sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def spherical_harmonic_dim(d: int, m: int) -> int:
    """Dimension of degree-m spherical harmonics in d variables."""
    if m == 0:
        return 1
    if m == 1:
        return d
    return math.comb(m + d - 1, d - 1) - math.comb(m + d - 3, d - 1)


def _laplacian_coeffs(coeffs: dict, d: int) -> dict:
    out: dict = {}
    for e, c in coeffs.items():
        for i in range(d):
            if e[i] >= 2:
                e2 = list(e)
                e2[i] -= 2
                key = tuple(e2)
                out[key] = out.get(key, 0) + c * e[i] * (e[i] - 1)
    return {k: v for k, v in out.items() if v != 0}


@dataclass(frozen=True)
class HomPoly:
    """A degree-m element of the even or odd parity class.

    ``coeffs`` maps degree-m exponent tuples to coefficients of the harmonic
    representative q.  For the odd class, evaluation substitutes |x_d|.
    """

    dim: int
    degree: int
    cls: str
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.cls not in ("even", "odd"):
            raise ValueError("class must be 'even' or 'odd'")
        want_odd = self.cls == "odd"
        for e, c in self.coeffs.items():
            if len(e) != self.dim or sum(e) != self.degree:
                raise ValueError(f"monomial {e} is not degree-{self.degree} in {self.dim} vars")
            if c != 0 and (e[self.dim - 1] % 2 == 1) != want_odd:
                raise ValueError(f"monomial {e} has wrong x_d parity for class {self.cls}")

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other: "HomPoly") -> "HomPoly":
        if (self.dim, self.degree, self.cls) != (other.dim, other.degree, other.cls):
            raise ValueError("incompatible polynomials")
        c = dict(self.coeffs)
        for e, v in other.coeffs.items():
            c[e] = c.get(e, 0) + v
        c = {e: v for e, v in c.items() if v != 0}
        return HomPoly(self.dim, self.degree, self.cls, c)

    def __sub__(self, other: "HomPoly") -> "HomPoly":
        return self + other * (-1)

    def __mul__(self, s) -> "HomPoly":
        if not isinstance(s, (int, Fraction)):
            s = float(s)
        return HomPoly(self.dim, self.degree, self.cls, {e: v * s for e, v in self.coeffs.items()})

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.coeffs.values())

    # -- evaluation ------------------------------------------------------

    def _arrays(self):
        keys = sorted(self.coeffs, reverse=True)
        exps = np.array(keys, dtype=np.int64).reshape(-1, self.dim)
        cs = np.array([float(self.coeffs[k]) for k in keys])
        return exps, cs

    def eval(self, x) -> np.ndarray:
        """Evaluate p at points x of shape (..., d).  Even in x_d by construction."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        pts = x.reshape(-1, self.dim).copy()
        pts[:, -1] = np.abs(pts[:, -1])
        if not self.coeffs:
            vals = np.zeros(pts.shape[0])
        else:
            exps, cs = self._arrays()
            vals = (pts[:, None, :] ** exps[None, :, :]).prod(axis=2) @ cs
        return vals[0] if scalar else vals.reshape(x.shape[:-1])

    def grad(self, x) -> np.ndarray:
        """Gradient of q at (x', |x_d|); on the plane this is the one-sided
        derivative taken from x_d > 0.  Off the plane the x_d component carries
        the sign of x_d (true gradient of p)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        pts = x.reshape(-1, self.dim).copy()
        sgn = np.where(pts[:, -1] < 0, -1.0, 1.0)
        pts[:, -1] = np.abs(pts[:, -1])
        g = np.zeros_like(pts)
        if self.coeffs:
            exps, cs = self._arrays()
            for i in range(self.dim):
                ei = exps[:, i]
                mask = ei > 0
                if not mask.any():
                    continue
                e2 = exps[mask].copy()
                e2[:, i] -= 1
                mono = (pts[:, None, :] ** e2[None, :, :]).prod(axis=2)
                g[:, i] = mono @ (cs[mask] * ei[mask])
        g[:, -1] *= sgn
        return g[0] if scalar else g.reshape(x.shape)

    # -- exact structure -------------------------------------------------

    def laplacian_residual(self) -> float:
        res = _laplacian_coeffs(self.coeffs, self.dim)
        return float(max((abs(float(v)) for v in res.values()), default=0.0))

    def inner(self, other: "HomPoly") -> float:
        """L2(S^{d-1}) inner product (surface measure, not normalized)."""
        mean = self.inner_exact(other)
        return float(mean) * sphere_area(self.dim)

    def inner_exact(self, other: "HomPoly"):
        """Mean over the sphere of p*q; exact when both coefficient sets are rational."""
        tot = 0
        for e1, c1 in self.coeffs.items():
            for e2, c2 in other.coeffs.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                w = sphere_monomial_mean(e)
                if w != 0:
                    tot += c1 * c2 * w
        return tot

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    # -- text serialization ----------------------------------------------

    def to_text(self) -> str:
        lines = [f"# dim={self.dim} degree={self.degree} class={self.cls}"]
        for e in sorted(self.coeffs, reverse=True):
            c = self.coeffs[e]
            if c == 0:
                continue
            fr = c if isinstance(c, Fraction) else Fraction(*float(c).as_integer_ratio())
            lines.append(" ".join(map(str, e)) + f" : {fr.numerator}/{fr.denominator}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "HomPoly":
        dim = degree = None
        cls = None
        coeffs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = dict(tok.split("=") for tok in line[1:].split())
                dim, degree, cls = int(parts["dim"]), int(parts["degree"]), parts["class"]
                continue
            lhs, rhs = line.split(":")
            e = tuple(int(t) for t in lhs.split())
            num, den = rhs.strip().split("/")
            coeffs[e] = Fraction(int(num), int(den))
        if dim is None:
            raise ValueError("missing header line")
        return HomPoly(dim, degree, cls, coeffs)


@dataclass(frozen=True)
class ConeMembership:
    is_plus: bool
    witness: np.ndarray
    margin: float


# ---------------------------------------------------------------------------
# basis construction


def _rational_nullspace(rows: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    """Exact nullspace of the matrix given by ``rows`` (RREF with Fractions)."""
    mat = [list(r) for r in rows]
    pivots = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(mat)) if mat[i][c] != 0), None)
        if piv is None:
            continue
        mat[r], mat[piv] = mat[piv], mat[r]
        inv = 1 / mat[r][c]
        mat[r] = [v * inv for v in mat[r]]
        for i in range(len(mat)):
            if i != r and mat[i][c] != 0:
                f = mat[i][c]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        pivots.append(c)
        r += 1
        if r == len(mat):
            break
    free = [c for c in range(ncols) if c not in pivots]
    null = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -mat[i][fc]
        null.append(v)
    return null


def basis_raw(d: int, m: int, cls: str) -> list[HomPoly]:
    """Exact rational (unnormalized) basis of the class: kernel of the
    Laplacian coefficient map on the parity-restricted degree-m monomials."""
    if d < 2 or m < 0:
        raise ValueError("need d >= 2, m >= 0")
    cols = class_monomials(d, m, cls)
    if not cols:
        return []
    if m < 2:
        return [HomPoly(d, m, cls, {e: Fraction(1)}) for e in cols]
    out_idx = {e: i for i, e in enumerate(monomials(d, m - 2))}
    rows = [[Fraction(0)] * len(cols) for _ in out_idx]
    for j, e in enumerate(cols):
        for i in range(d):
            if e[i] >= 2:
                e2 = list(e)
                e2[i] -= 2
                rows[out_idx[tuple(e2)]][j] += e[i] * (e[i] - 1)
    null = _rational_nullspace(rows, len(cols))
    polys = []
    for v in null:
        coeffs = {e: c for e, c in zip(cols, v) if c != 0}
        polys.append(HomPoly(d, m, cls, coeffs))
    return polys


def basis(d: int, m: int, cls: str) -> list[HomPoly]:
    """Deterministic L2(S^{d-1})-orthonormal basis of the class (may be empty)."""
    raw = basis_raw(d, m, cls)
    if not raw:
        return []
    n = len(raw)
    gram = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            gram[i, j] = gram[j, i] = raw[i].inner(raw[j])
    L = np.linalg.cholesky(gram)
    Linv = np.linalg.inv(L)
    out = []
    for i in range(n):
        coeffs: dict = {}
        for j in range(i + 1):
            w = Linv[i, j]
            if w == 0.0:
                continue
            for e, c in raw[j].coeffs.items():
                coeffs[e] = coeffs.get(e, 0.0) + w * float(c)
        out.append(HomPoly(d, m, cls, {e: c for e, c in coeffs.items() if c != 0.0}))
    return out


# ---------------------------------------------------------------------------
# quadrature and projection


def sphere_quadrature(d: int, n_polar: int = 64, n_az: int = 128):
    """Quadrature (points, weights) on S^{d-1}; weights sum to the surface area.

    For d=3 the polar rule is Gauss-Legendre on x_d in [0,1] mirrored to
    [-1,0], so integrands that are smooth in |x_d| are handled at full order.
    """
    if d == 2:
        ang = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        w = np.full(n_az, 2.0 * np.pi / n_az)
        return pts, w
    if d == 3:
        t, wt = np.polynomial.legendre.leggauss(n_polar)
        t = 0.5 * (t + 1.0)  # [0, 1]
        wt = 0.5 * wt
        t = np.concatenate([-t[::-1], t])
        wt = np.concatenate([wt[::-1], wt])
        phi = 2.0 * np.pi * np.arange(n_az) / n_az
        rho = np.sqrt(np.maximum(1.0 - t**2, 0.0))
        pts = np.empty((t.size * n_az, 3))
        pts[:, 0] = np.outer(rho, np.cos(phi)).ravel()
        pts[:, 1] = np.outer(rho, np.sin(phi)).ravel()
        pts[:, 2] = np.repeat(t, n_az)
        w = np.repeat(wt * (2.0 * np.pi / n_az), n_az)
        return pts, w
    raise NotImplementedError("quadrature only for d in {2, 3}")


class QuadratureFailure(RuntimeError):
    """Measure support too fine for the requested projection resolution."""


def project_to_Pm(data, d: int, m: int, cls: str, n_polar: int = 64, n_az: int = 128) -> HomPoly:
    """L2(S^{d-1}) projection of ``data`` onto the class.

    ``data`` is either a callable on sphere points, or a discrete measure
    ``("measure", points, masses)`` integrated by direct summation.
    """
    bas = basis(d, m, cls)
    zero = HomPoly(d, m, cls, {})
    if not bas:
        return zero
    if isinstance(data, tuple) and data[0] == "measure":
        _, pts, masses = data
        pts = np.asarray(pts, dtype=float)
        masses = np.asarray(masses, dtype=float)
        if pts.shape[0] == 0:
            raise QuadratureFailure("empty measure")
        coefs = [float(np.dot(p.eval(pts), masses)) for p in bas]
    else:
        pts, w = sphere_quadrature(d, n_polar, n_az)
        vals = np.asarray(data(pts), dtype=float)
        coefs = [float(np.dot(vals * w, p.eval(pts))) for p in bas]
    out = zero
    for c, p in zip(coefs, bas):
        out = out + c * p
    return out


# ---------------------------------------------------------------------------
# cone membership


def _equator_points(d: int, n: int) -> np.ndarray:
    if d == 2:
        return np.array([[1.0, 0.0], [-1.0, 0.0]])
    if d == 3:
        ang = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
    # d == 4: Fibonacci lattice on the equatorial S^2
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z**2, 0.0))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    th = golden * i
    return np.stack([r * np.cos(th), r * np.sin(th), z, np.zeros(n)], axis=1)


def cone_check(p: HomPoly, n_samples: int = 1440, tol: float = 1e-9) -> ConeMembership:
    """Membership in the admissible cone.

    Even class: margin = min of p over the equator.  Odd class: margin =
    min of -d_d q over the equator (superharmonicity of the represented p).
    """
    d = p.dim

    if p.cls == "even":
        def obj_pts(pts):
            return p.eval(pts)
    else:
        def obj_pts(pts):
            return -p.grad(pts)[..., -1] if pts.ndim > 1 else -p.grad(pts)[-1]

    pts = _equator_points(d, n_samples)
    vals = obj_pts(pts)
    i0 = int(np.argmin(vals))
    margin = float(vals[i0])
    witness = pts[i0]

    # analytic refinement: polish the sampled minimum on the equator chart
    if d == 3:
        def f(a):
            return float(obj_pts(np.array([math.cos(a), math.sin(a), 0.0])))

        a0 = math.atan2(witness[1], witness[0])
        da = 2.0 * math.pi / n_samples
        res = optimize.minimize_scalar(f, bounds=(a0 - 2 * da, a0 + 2 * da), method="bounded")
        if res.fun < margin:
            margin = float(res.fun)
            witness = np.array([math.cos(res.x), math.sin(res.x), 0.0])
    elif d == 4:
        def f(ang):
            th, ph = ang
            x = np.array(
                [math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th), 0.0]
            )
            return float(obj_pts(x))

        th0 = math.acos(np.clip(witness[2], -1, 1))
        ph0 = math.atan2(witness[1], witness[0])
        res = optimize.minimize(f, [th0, ph0], method="Nelder-Mead")
        if res.fun < margin:
            margin = float(res.fun)
            th, ph = res.x
            witness = np.array(
                [math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th), 0.0]
            )

    return ConeMembership(is_plus=margin >= -tol, witness=witness, margin=margin)
