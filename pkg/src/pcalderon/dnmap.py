"""Opaque Dirichlet-to-Neumann measurements and pointwise flux recovery.

DNMeasurement hides the interior model (mesh, conductivity, solver) behind
an interface that accepts boundary data and test functions and returns
scalars; reconstruction code may touch nothing else.  Pointwise values of
the boundary flux are recovered by normalized mollifier probes with
extrapolation in the probe radius, and the normal derivative of the
solution follows from the monotone scalar equation
    (q^2 + t^2)^((p-2)/2) t = |flux| / gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import NonConvergentProbe, ProbeUnresolved
from .fields import BoundaryData, as_boundary_data
from .forward import (ForwardSolution, LinearOperator, SolverConfig,
                      linear_solve_p2, solve_dirichlet)
from .geometry import Domain, Mesh, boundary_quadrature


class DNMeasurement:
    """Measurement interface for one hidden conductivity.

    Public surface: the equation exponent p, the domain geometry, the
    boundary discretization (quadrature, local size), and weak pairings.
    The conductivity and interior solutions stay private; repeated
    identical pairings are served from a solution cache keyed by the
    boundary-data identity.
    """

    def __init__(self, domain: Domain, mesh: Mesh, conductivity, p: float,
                 config: Optional[SolverConfig] = None):
        self.domain = domain
        self.p = float(p)
        self._mesh = mesh
        self._gamma = conductivity
        self._config = config if config is not None else SolverConfig(p=self.p)
        self._cache: dict = {}
        self._linear_op: Optional[LinearOperator] = None

    # -- public geometry ----------------------------------------------------
    def boundary_quadrature(self, order: int):
        return boundary_quadrature(self._mesh, order)

    def local_size_at(self, x):
        return self._mesh.local_size_at(x)

    @property
    def eps_final(self):
        return self._config.eps_schedule[-1]

    # -- hidden solves ------------------------------------------------------
    def _operator(self):
        if self._linear_op is None:
            self._linear_op = LinearOperator(self._mesh, self._gamma)
        return self._linear_op

    def _solution(self, v: BoundaryData) -> ForwardSolution:
        sol = self._cache.get(v.key)
        if sol is None:
            sol = solve_dirichlet(self._mesh, self._gamma, self.p, v,
                                  self._config, linear_op=self._operator())
            self._cache[v.key] = sol
        return sol


def weak_pairing(meas: DNMeasurement, v, g=None) -> float:
    """Weak DN pairing: the perturbed flux of the solution for v against the
    gradient of an interior extension of g.

    g = None (or g identical to v) pairs the measurement with its own data;
    the discrete solution then serves as the extension, which makes
    <DN(v), v> coincide exactly with the assembled flux energy.  Any other g
    is extended by P1 interpolation of its closed form.
    """
    v = as_boundary_data(v)
    sol = meas._solution(v)
    mesh = meas._mesh
    if g is None or g is v or (isinstance(g, BoundaryData) and g.key == v.key):
        gridfun = sol.u
    else:
        g = as_boundary_data(g)
        gridfun = np.asarray(g(mesh.vertices), dtype=float)
    return float(sol.dn_functional @ gridfun)


# ------------------------------------------------------------------- probes

@dataclass(frozen=True)
class MollifierProbe:
    """Normalized tent test function localized at a boundary point."""

    x0: np.ndarray
    delta: float
    normalization: float      # 1 / int_bdry of the interpolated tent


@dataclass(frozen=True)
class ProbeResult:
    x0: np.ndarray
    deltas: tuple
    raw: tuple                # pairings before normalization
    normalized: tuple
    value: float              # extrapolated limit
    residual: float           # extrapolation increment diagnostic
    observed_rate: Optional[float]
    converged: bool


def _boundary_trace_arrays(mesh):
    cache = mesh._cache
    if "probe_trace" not in cache:
        a = mesh.boundary_edges[:, 0]
        b = mesh.boundary_edges[:, 1]
        elen = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a], axis=1)
        cache["probe_trace"] = (a, b, elen)
    return cache["probe_trace"]


def _tent_pairing(meas, sol, x0, delta):
    """Pairing of the cached solution with the P1 interpolant of the tent
    (delta - |x - x0|)+ and the boundary integral of the same interpolant.

    Pairing with any P1 field is the dot product with the assembled DN
    functional, so only vertices inside the tent support contribute.
    """
    mesh = meas._mesh
    x0 = np.asarray(x0, dtype=float)
    vids = mesh.vertex_tree.query_ball_point(x0, delta)
    vids = np.asarray(vids, dtype=np.int64)
    if len(vids) == 0:
        return 0.0, 0.0
    eta = delta - np.linalg.norm(mesh.vertices[vids] - x0, axis=1)
    num = float(sol.dn_functional[vids] @ eta)

    a, b, elen = _boundary_trace_arrays(mesh)
    ea = np.maximum(delta - np.linalg.norm(mesh.vertices[a] - x0, axis=1), 0.0)
    eb = np.maximum(delta - np.linalg.norm(mesh.vertices[b] - x0, axis=1), 0.0)
    trace = float((elen * 0.5 * (ea + eb)).sum())
    return num, trace


def _extrapolate_to_zero(deltas, values):
    """Neville polynomial extrapolation of (delta, value) to delta = 0 on the
    last three levels (kills the first- and second-order probe biases)."""
    n = min(3, len(values))
    d = np.asarray(deltas[-n:], dtype=float)
    v = [float(x) for x in values[-n:]]
    tab = [v[:]]
    for k in range(1, n):
        row = [np.nan] * n
        for i in range(k, n):
            row[i] = (d[i] * tab[k - 1][i - 1] - d[i - k] * tab[k - 1][i]) \
                / (d[i] - d[i - k])
        tab.append(row)
    value = tab[n - 1][n - 1]
    prev = tab[n - 2][n - 1] if n >= 2 else v[-1]
    return float(value), float(abs(value - prev))


def strong_dn_probe(meas: DNMeasurement, v, x0, deltas,
                    *, min_ratio: float = 5.0, atol: float = 1e-9,
                    strict: bool = True) -> ProbeResult:
    """Mollifier-probe recovery of the pointwise boundary flux at x0."""
    v = as_boundary_data(v)
    deltas = tuple(float(d) for d in deltas)
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    local = meas.local_size_at(np.asarray(x0, dtype=float))
    if deltas[-1] < min_ratio * local * (1.0 - 1e-9):
        raise ProbeUnresolved(
            f"smallest delta {deltas[-1]:.3e} < {min_ratio:g} x local size {local:.3e}")
    sol = meas._solution(v)
    raw = []
    normalized = []
    for d in deltas:
        num, trace = _tent_pairing(meas, sol, x0, d)
        raw.append(num)
        normalized.append(num / trace if trace > 0 else 0.0)
    value, residual = _extrapolate_to_zero(deltas, normalized)
    rate = None
    if len(normalized) >= 3:
        d01 = abs(normalized[-2] - normalized[-3])
        d12 = abs(normalized[-1] - normalized[-2])
        if d12 > 0 and d01 > 0:
            rate = float(np.log(d01 / d12)
                         / np.log(deltas[-3] / deltas[-2]))
    scale = max(abs(normalized[-1]), abs(normalized[-2])) if len(normalized) > 1 else 0.0
    diff = abs(normalized[-1] - normalized[-2]) if len(normalized) > 1 else 0.0
    # below the absolute scale atol the relative comparison is meaningless
    converged = not (diff > 0.1 * scale and scale > atol)
    if strict and not converged:
        raise NonConvergentProbe(
            f"probe values at the two smallest deltas differ by "
            f"{diff:.3e} (> 10% of {scale:.3e})")
    return ProbeResult(x0=np.asarray(x0, dtype=float), deltas=deltas,
                       raw=tuple(raw), normalized=tuple(normalized),
                       value=value, residual=residual, observed_rate=rate,
                       converged=converged)


def strong_dn_at(meas: DNMeasurement, v, x0, deltas) -> float:
    """Extrapolated pointwise flux gamma |grad u|^(p-2) du/dnu at x0."""
    return strong_dn_probe(meas, v, x0, deltas).value


def probe_field(meas: DNMeasurement, v, points, deltas, *, strict: bool = False):
    """Probe many boundary points with a shared delta schedule.

    Returns (values, results); individual non-convergent probes are flagged
    in the results rather than raised (the field sweeps through zeros of the
    flux where relative comparisons are meaningless).
    """
    values = np.zeros(len(points))
    results = []
    for i, q in enumerate(np.atleast_2d(np.asarray(points, dtype=float))):
        res = strong_dn_probe(meas, v, q, deltas, strict=strict)
        values[i] = res.value
        results.append(res)
    return values, results


# ------------------------------------------------------- normal derivative

def _f_monotone(t, q, p):
    return (q * q + t * t) ** (0.5 * (p - 2.0)) * t


def monotone_root(tangential_norm: float, p: float, rhs: float) -> float:
    """Unique nonnegative root of (q^2 + t^2)^((p-2)/2) t = rhs.

    Bracketed bisection refined by safeguarded Newton; the function is
    continuous, strictly increasing and unbounded, so the bracket is valid.
    """
    q = float(tangential_norm)
    p = float(p)
    rhs = float(rhs)
    if rhs < 0:
        raise ValueError("rhs must be nonnegative")
    if rhs == 0.0:
        return 0.0
    if p == 2.0:
        return rhs
    t_hi = max(1.0, rhs ** (1.0 / (p - 1.0)) + q)
    while _f_monotone(t_hi, q, p) < rhs:
        t_hi *= 2.0
    lo, hi = 0.0, t_hi
    for _ in range(60):
        midp = 0.5 * (lo + hi)
        if _f_monotone(midp, q, p) < rhs:
            lo = midp
        else:
            hi = midp
    t = 0.5 * (lo + hi)
    tol = 1e-12 * max(1.0, rhs)
    for _ in range(40):
        ft = _f_monotone(t, q, p) - rhs
        if abs(ft) <= tol:
            break
        s = q * q + t * t
        dft = s ** (0.5 * (p - 4.0)) * (q * q + (p - 1.0) * t * t)
        step = ft / dft
        t_new = t - step
        if not (lo < t_new < hi):          # safeguard: bisect instead
            if ft > 0:
                hi = t
            else:
                lo = t
            t_new = 0.5 * (lo + hi)
        t = t_new
    return float(t)


def monotone_root_many(tangential_norms, p, rhs_values):
    """Vectorized variant used when recovering whole boundary fields."""
    q = np.asarray(tangential_norms, dtype=float)
    r = np.asarray(rhs_values, dtype=float)
    if np.any(r < 0):
        raise ValueError("rhs must be nonnegative")
    if p == 2.0:
        return r.copy()
    t_hi = np.maximum(1.0, r ** (1.0 / (p - 1.0)) + q)
    for _ in range(60):
        grow = _f_monotone(t_hi, q, p) < r
        if not grow.any():
            break
        t_hi = np.where(grow, 2.0 * t_hi, t_hi)
    lo = np.zeros_like(r)
    hi = t_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = _f_monotone(mid, q, p) < r
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = 0.5 * (lo + hi)
    tol = 1e-12 * np.maximum(1.0, r)
    for _ in range(40):
        ft = _f_monotone(t, q, p) - r
        if (np.abs(ft) <= tol).all():
            break
        s = q * q + t * t
        with np.errstate(divide="ignore", invalid="ignore"):
            dft = s ** (0.5 * (p - 4.0)) * (q * q + (p - 1.0) * t * t)
            step = np.where(dft > 0, ft / dft, 0.0)
        t = np.clip(t - step, 0.0, t_hi)
    return np.where(r == 0.0, 0.0, t)


def recover_normal_derivative(strong_value: float, gamma_at_x0: float,
                              tangential_grad, p: float) -> float:
    """Normal derivative of u from the pointwise flux: solve the monotone
    equation for |du/dnu| and restore the sign of the flux."""
    if gamma_at_x0 <= 0:
        raise ValueError("gamma at the point must be positive")
    tg = np.atleast_1d(np.asarray(tangential_grad, dtype=float))
    q = float(np.linalg.norm(tg))
    t = monotone_root(q, p, abs(strong_value) / gamma_at_x0)
    return t * float(np.sign(strong_value))


def detect_critical(strong_value: float, tol: float) -> bool:
    """du/dnu vanishes exactly where the pointwise flux does."""
    return abs(strong_value) <= tol


# ----------------------------------------------------------------------- i/o

def write_probe_sweep_csv(path, points, results: Sequence[ProbeResult]):
    """CSV export: one row per (probe point, delta) plus the extrapolated value."""
    with open(path, "w", newline="") as f:
        f.write("x0_index,delta,raw_pairing,normalized_value,extrapolated_value\n")
        for i, res in enumerate(results):
            for d, raw, norm in zip(res.deltas, res.raw, res.normalized):
                f.write(f"{i},{d!r},{raw!r},{norm!r},{res.value!r}\n")
