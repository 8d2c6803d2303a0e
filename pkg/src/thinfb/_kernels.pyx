# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled projected-SOR sweep kernels.  Mirrors _kernels_py exactly."""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"


def psor_sweep_sym_3d(double[:, :, ::1] u, int izp, double omega, int color):
    cdef int n = u.shape[0]
    cdef int iz, iy, ix
    cdef double nb, new
    for ix in range(n):
        for iy in range(n):
            u[izp - 1, iy, ix] = u[izp + 1, iy, ix]
    for iz in range(izp, n - 1):
        for iy in range(1, n - 1):
            # update parity: (iz + iy + ix) % 2 == color, matching _kernels_py
            ix = 1 + ((iz + iy + 1 + color) % 2)
            while ix < n - 1:
                nb = (
                    u[iz + 1, iy, ix]
                    + u[iz - 1, iy, ix]
                    + u[iz, iy + 1, ix]
                    + u[iz, iy - 1, ix]
                    + u[iz, iy, ix + 1]
                    + u[iz, iy, ix - 1]
                )
                new = (1.0 - omega) * u[iz, iy, ix] + (omega / 6.0) * nb
                if iz == izp and new < 0.0:
                    new = 0.0
                u[iz, iy, ix] = new
                ix += 2
        if iz == izp:
            for iy in range(n):
                for ix in range(n):
                    u[izp - 1, iy, ix] = u[izp + 1, iy, ix]
    for iy in range(n):
        for ix in range(n):
            u[izp - 1, iy, ix] = u[izp + 1, iy, ix]


def psor_sweep_sym_2d(double[:, ::1] u, int izp, double omega, int color):
    cdef int n = u.shape[0]
    cdef int iz, ix
    cdef double nb, new
    for ix in range(n):
        u[izp - 1, ix] = u[izp + 1, ix]
    for iz in range(izp, n - 1):
        # update parity: (iz + ix) % 2 == color, matching _kernels_py
        ix = 1 + ((iz + 1 + color) % 2)
        while ix < n - 1:
            nb = u[iz + 1, ix] + u[iz - 1, ix] + u[iz, ix + 1] + u[iz, ix - 1]
            new = (1.0 - omega) * u[iz, ix] + (omega / 4.0) * nb
            if iz == izp and new < 0.0:
                new = 0.0
            u[iz, ix] = new
            ix += 2
        if iz == izp:
            for ix in range(n):
                u[izp - 1, ix] = u[izp + 1, ix]
    for ix in range(n):
        u[izp - 1, ix] = u[izp + 1, ix]


def band_sweep(double[:, ::1] w, double[::1] aN, double[::1] aS,
               double[::1] aP, double[::1] diag, double[:, ::1] src,
               double[::1] obs, double omega, int color):
    cdef int nb = w.shape[0] - 1
    cdef int nphi = w.shape[1]
    cdef int i, j
    cdef double south, east, west, new
    for i in range(nb):
        j = (i + color) % 2
        while j < nphi:
            if i == 0:
                south = w[1, j]
            else:
                south = w[i - 1, j]
            east = w[i, (j + 1) % nphi]
            west = w[i, (j - 1) % nphi if j > 0 else nphi - 1]
            new = (1.0 - omega) * w[i, j] + omega * (
                aN[i] * w[i + 1, j] + aS[i] * south + aP[i] * (east + west)
                + src[i, j]
            ) / diag[i]
            if i == 0 and new < obs[j]:
                new = obs[j]
            w[i, j] = new
            j += 2
