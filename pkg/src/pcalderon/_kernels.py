"""Hot numeric kernels: element assembly for the perturbed p-energy.

Each kernel has a numba @njit implementation and a pure-numpy fallback.
Selection: numba is used when importable unless the environment variable
PCALDERON_NUMBA is set to 0/false/off.  `pcalderon._kernels.USING_NUMBA`
reports the active path; benchmarks/bench_kernels.py compares the two.

Convention: the residual/hessian here are derivatives of
    E(u) = sum_T area_T * gamma_T * (|grad u|_T^2 + eps)^(p/2)
divided by the constant factor p, i.e. the discrete Euler-Lagrange form
    G_i = sum_T area_T * gamma_T * w_T * grad u . grad phi_i,
    w_T = (|grad u|_T^2 + eps)^((p-2)/2).
"""

import os

import numpy as np

_flag = os.environ.get("PCALDERON_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off", "no")

if _want_numba:
    try:
        from numba import njit
        USING_NUMBA = True
    except ImportError:  # pragma: no cover
        USING_NUMBA = False
else:
    USING_NUMBA = False


# ---------------------------------------------------------------- numpy path

def _gradients_np(u, tris, bx, by):
    ue = u[tris]
    return (bx * ue).sum(axis=1), (by * ue).sum(axis=1)


def _energy_np(u, tris, bx, by, area, gamma_t, p, eps):
    gx, gy = _gradients_np(u, tris, bx, by)
    return float((area * gamma_t * (gx * gx + gy * gy + eps) ** (0.5 * p)).sum())


def _residual_np(u, tris, bx, by, area, gamma_t, p, eps):
    gx, gy = _gradients_np(u, tris, bx, by)
    w = area * gamma_t * (gx * gx + gy * gy + eps) ** (0.5 * (p - 2.0))
    cx = w * gx
    cy = w * gy
    out = np.zeros(len(u))
    for k in range(3):
        out += np.bincount(tris[:, k], weights=cx * bx[:, k] + cy * by[:, k],
                           minlength=len(u))
    return out


def _hessian_entries_np(u, tris, bx, by, area, gamma_t, p, eps):
    gx, gy = _gradients_np(u, tris, bx, by)
    s = gx * gx + gy * gy + eps
    w = gamma_t * area * s ** (0.5 * (p - 2.0))
    w2 = gamma_t * area * (p - 2.0) * s ** (0.5 * (p - 4.0))
    di = w2 * gx
    dj = w2 * gy
    ent = np.empty((len(tris), 3, 3))
    for i in range(3):
        gi = di * bx[:, i] + dj * by[:, i]
        for j in range(3):
            ent[:, i, j] = w * (bx[:, i] * bx[:, j] + by[:, i] * by[:, j]) \
                + gi * (gx * bx[:, j] + gy * by[:, j])
    return ent


def _flux_pairing_np(fx, fy, g, tris, bx, by):
    ggx, ggy = _gradients_np(g, tris, bx, by)
    return float((fx * ggx + fy * ggy).sum())


# ---------------------------------------------------------------- numba path

if USING_NUMBA:

    @njit(cache=True)
    def _gradients_nb(u, tris, bx, by):
        nt = tris.shape[0]
        gx = np.empty(nt)
        gy = np.empty(nt)
        for t in range(nt):
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            gx[t] = bx[t, 0] * u[a] + bx[t, 1] * u[b] + bx[t, 2] * u[c]
            gy[t] = by[t, 0] * u[a] + by[t, 1] * u[b] + by[t, 2] * u[c]
        return gx, gy

    @njit(cache=True)
    def _energy_nb(u, tris, bx, by, area, gamma_t, p, eps):
        acc = 0.0
        for t in range(tris.shape[0]):
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            gx = bx[t, 0] * u[a] + bx[t, 1] * u[b] + bx[t, 2] * u[c]
            gy = by[t, 0] * u[a] + by[t, 1] * u[b] + by[t, 2] * u[c]
            acc += area[t] * gamma_t[t] * (gx * gx + gy * gy + eps) ** (0.5 * p)
        return acc

    @njit(cache=True)
    def _residual_nb(u, tris, bx, by, area, gamma_t, p, eps):
        out = np.zeros(u.shape[0])
        for t in range(tris.shape[0]):
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            gx = bx[t, 0] * u[a] + bx[t, 1] * u[b] + bx[t, 2] * u[c]
            gy = by[t, 0] * u[a] + by[t, 1] * u[b] + by[t, 2] * u[c]
            w = area[t] * gamma_t[t] * (gx * gx + gy * gy + eps) ** (0.5 * (p - 2.0))
            cx = w * gx
            cy = w * gy
            out[a] += cx * bx[t, 0] + cy * by[t, 0]
            out[b] += cx * bx[t, 1] + cy * by[t, 1]
            out[c] += cx * bx[t, 2] + cy * by[t, 2]
        return out

    @njit(cache=True)
    def _hessian_entries_nb(u, tris, bx, by, area, gamma_t, p, eps):
        nt = tris.shape[0]
        ent = np.empty((nt, 3, 3))
        for t in range(nt):
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            gx = bx[t, 0] * u[a] + bx[t, 1] * u[b] + bx[t, 2] * u[c]
            gy = by[t, 0] * u[a] + by[t, 1] * u[b] + by[t, 2] * u[c]
            s = gx * gx + gy * gy + eps
            w = gamma_t[t] * area[t] * s ** (0.5 * (p - 2.0))
            w2 = gamma_t[t] * area[t] * (p - 2.0) * s ** (0.5 * (p - 4.0))
            for i in range(3):
                gi = w2 * (gx * bx[t, i] + gy * by[t, i])
                for j in range(3):
                    ent[t, i, j] = w * (bx[t, i] * bx[t, j] + by[t, i] * by[t, j]) \
                        + gi * (gx * bx[t, j] + gy * by[t, j])
        return ent

    @njit(cache=True)
    def _flux_pairing_nb(fx, fy, g, tris, bx, by):
        acc = 0.0
        for t in range(tris.shape[0]):
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            ggx = bx[t, 0] * g[a] + bx[t, 1] * g[b] + bx[t, 2] * g[c]
            ggy = by[t, 0] * g[a] + by[t, 1] * g[b] + by[t, 2] * g[c]
            acc += fx[t] * ggx + fy[t] * ggy
        return acc

    element_gradients = _gradients_nb
    energy = _energy_nb
    residual = _residual_nb
    hessian_entries = _hessian_entries_nb
    flux_pairing = _flux_pairing_nb
else:
    element_gradients = _gradients_np
    energy = _energy_np
    residual = _residual_np
    hessian_entries = _hessian_entries_np
    flux_pairing = _flux_pairing_np


# fallbacks kept importable under their own names for the benchmark
numpy_kernels = {
    "element_gradients": _gradients_np,
    "energy": _energy_np,
    "residual": _residual_np,
    "hessian_entries": _hessian_entries_np,
    "flux_pairing": _flux_pairing_np,
}
