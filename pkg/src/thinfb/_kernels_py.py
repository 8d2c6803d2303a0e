"""Pure-numpy projected-SOR sweep kernels (fallback backend).

Array layout: the leading axis is always the x_d axis, so the obstacle
hyperplane is the single slab ``u[izp]``.  All sweeps are red-black, update
only the upper half plus the plane, and keep the mirror slab ``u[izp-1]``
refreshed so plane updates read reflected data.
"""

import numpy as np

BACKEND = "python"


def _mask3(shape, izp, color):
    k, j, i = np.ogrid[0 : shape[0], 0 : shape[1], 0 : shape[2]]
    return (k + izp + j + 1 + i + 1) % 2 == color


def psor_sweep_sym_3d(u, izp, omega, color):
    """One half-sweep of projected SOR on the symmetric 3-D grid VI."""
    n = u.shape[0]
    u[izp - 1] = u[izp + 1]
    blk = u[izp : n - 1, 1:-1, 1:-1]
    nb = (
        u[izp + 1 : n, 1:-1, 1:-1]
        + u[izp - 1 : n - 2, 1:-1, 1:-1]
        + u[izp : n - 1, 2:, 1:-1]
        + u[izp : n - 1, :-2, 1:-1]
        + u[izp : n - 1, 1:-1, 2:]
        + u[izp : n - 1, 1:-1, :-2]
    )
    new = (1.0 - omega) * blk + (omega / 6.0) * nb
    new[0] = np.maximum(new[0], 0.0)
    mask = _mask3(blk.shape, izp, color)
    blk[mask] = new[mask]
    u[izp - 1] = u[izp + 1]


def psor_sweep_sym_2d(u, izp, omega, color):
    n = u.shape[0]
    u[izp - 1] = u[izp + 1]
    blk = u[izp : n - 1, 1:-1]
    nb = (
        u[izp + 1 : n, 1:-1]
        + u[izp - 1 : n - 2, 1:-1]
        + u[izp : n - 1, 2:]
        + u[izp : n - 1, :-2]
    )
    new = (1.0 - omega) * blk + (omega / 4.0) * nb
    new[0] = np.maximum(new[0], 0.0)
    k, i = np.ogrid[0 : blk.shape[0], 0 : blk.shape[1]]
    mask = (k + izp + i + 1) % 2 == color
    blk[mask] = new[mask]
    u[izp - 1] = u[izp + 1]


def band_sweep(w, aN, aS, aP, diag, src, obs, omega, color):
    """One half-sweep of projected SOR on the spherical band correction VI.

    ``w`` has shape (nb+1, nphi): row 0 is the equator (mirror neighbor,
    lower obstacle ``obs``), rows 1..nb-1 are free band latitudes, row nb is
    Dirichlet data.  ``src`` is the per-node source density; azimuthal
    direction is periodic.
    """
    nb = w.shape[0] - 1
    for i in range(nb):
        north = w[i + 1]
        south = w[1] if i == 0 else w[i - 1]
        east = np.roll(w[i], -1)
        west = np.roll(w[i], 1)
        new = (1.0 - omega) * w[i] + omega * (
            aN[i] * north + aS[i] * south + aP[i] * (east + west) + src[i]
        ) / diag[i]
        if i == 0:
            new = np.maximum(new, obs)
        j = np.arange(w.shape[1])
        mask = (i + j) % 2 == color
        w[i][mask] = new[mask]
