"""Wolff's separable p-harmonic profile and the oscillating boundary data.

The profile a solves a'' + V(a, a') a = 0 from (a, a')(0) = (1, 0); it is
periodic with zero mean, and h(y) = exp(-y2) a(y1) is p-harmonic on the
half plane.  Localized, frequency-scaled copies of h serve as Dirichlet
data concentrating at a chosen boundary point.

The same normalized profile must be used both to build boundary data and
to compute the scaling constant c_p: under profile rescaling a -> c a the
constant scales by c^p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad, solve_ivp, trapezoid
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import (DegenerateGradient, DegeneratePhasePoint, PeriodNotFound,
                     ToleranceNotMet)
from .fields import BoundaryData
from .geometry import BoundaryFrame, Domain

_T_MAX = 100.0
_CLOSURE_BOUND = 1e-8
_GRID_N = 4096


def oscillator_potential(a, ap, p):
    """State-dependent restoring coefficient of the profile ODE.

    ((2p-3) a'^2 + (p-1) a^2) / ((p-1) a'^2 + a^2); 0-homogeneous in (a, a').
    """
    a = np.asarray(a, dtype=float)
    ap = np.asarray(ap, dtype=float)
    n2 = a * a + ap * ap
    if np.any(n2 < 1e-300):
        raise DegeneratePhasePoint("(a, a') too close to the phase-plane origin")
    num = (2.0 * p - 3.0) * ap * ap + (p - 1.0) * a * a
    den = (p - 1.0) * ap * ap + a * a
    out = num / den
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WolffProfile:
    """Periodic profile with dense samples over one period.

    energy_mean is the period average of (a^2 + a'^2)^(p/2).
    """

    p: float
    period: float
    energy_mean: float
    ts: np.ndarray
    a_samples: np.ndarray
    ap_samples: np.ndarray
    closure_defect: float
    accuracy: float
    _a_spline: CubicSpline = field(repr=False, default=None)
    _ap_spline: CubicSpline = field(repr=False, default=None)

    def a(self, t):
        return self._a_spline(np.mod(t, self.period))

    def ap(self, t):
        return self._ap_spline(np.mod(t, self.period))


def _integrate(p, tol, y0):
    def rhs(t, y):
        a, ap = y
        num = (2.0 * p - 3.0) * ap * ap + (p - 1.0) * a * a
        den = (p - 1.0) * ap * ap + a * a
        return (ap, -(num / den) * a)

    def ev(t, y):
        return y[1]
    ev.direction = -1

    return solve_ivp(rhs, (0.0, _T_MAX), y0, method="DOP853",
                     rtol=tol, atol=tol * 1e-2, dense_output=True, events=ev)


def solve_profile(p: float, tol: float = 1e-10) -> WolffProfile:
    """Integrate the profile ODE and detect the period as the first return
    of the event {a' = 0, a > 0} after the start."""
    return _solve_profile_from(p, tol, (1.0, 0.0))


def _solve_profile_from(p, tol, y0):
    if not (1.0 < p < np.inf):
        raise ValueError(f"p must be in (1, inf), got {p}")
    if not (0.0 < tol <= 1e-6):
        raise ValueError(f"tol must be in (0, 1e-6], got {tol}")
    sol = _integrate(p, tol, np.asarray(y0, dtype=float))
    events = sol.t_events[0]
    events = events[events > 1e-3]
    events = events[sol.sol(events)[0] > 0]
    if len(events) == 0:
        raise PeriodNotFound(f"no return event before t = {_T_MAX} for p = {p}")
    lam = float(events[0])
    # polish the event time on the dense output
    f = lambda t: sol.sol(t)[1]
    lo, hi = lam - 1e-4, lam + 1e-4
    if f(lo) > 0.0 > f(hi):
        lam = brentq(f, lo, hi, xtol=1e-13)

    a0, ap0 = y0
    aL, apL = sol.sol(lam)
    closure = abs(aL - a0) + abs(apL - ap0)
    if closure > _CLOSURE_BOUND:
        raise ToleranceNotMet(f"closure defect {closure:.2e} > {_CLOSURE_BOUND:.0e}")

    ts = np.linspace(0.0, lam, _GRID_N + 1)
    samples = sol.sol(ts)
    a = samples[0].copy()
    ap = samples[1].copy()
    # make exactly periodic for the spline (defect is below the bound)
    a[-1] = a[0]
    ap[-1] = ap[0]
    k = float(trapezoid((a * a + ap * ap) ** (0.5 * p), ts) / lam)
    spline_err = (lam / _GRID_N) ** 4
    return WolffProfile(p=float(p), period=lam, energy_mean=k,
                        ts=ts, a_samples=a, ap_samples=ap,
                        closure_defect=closure,
                        accuracy=max(closure, spline_err),
                        _a_spline=CubicSpline(ts, a, bc_type="periodic"),
                        _ap_spline=CubicSpline(ts, ap, bc_type="periodic"))


# ------------------------------------------------------------------- cutoffs

def _smoothstep_fall(s):
    """C^3 descent 1 -> 0 on [0, 1] (degree-7 Hermite)."""
    return 1.0 - s ** 4 * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s ** 3)


def _smoothstep_fall_deriv(s):
    return -140.0 * s ** 3 * (1.0 - s) ** 3


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff: 1 on [0, 1/2], descent on [1/2, 1], 0 beyond."""

    kind: str = "smoothstep7"
    smooth_order: int = 3

    def value(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "indicator":
            return (r < 1.0).astype(float)
        s = np.clip(2.0 * r - 1.0, 0.0, 1.0)
        out = np.where(r <= 0.5, 1.0, np.where(r >= 1.0, 0.0, _smoothstep_fall(s)))
        return float(out) if out.ndim == 0 else out

    def derivative(self, r):
        """d zeta / dr (signed r supported; odd extension)."""
        r = np.asarray(r, dtype=float)
        sgn = np.sign(r)
        ra = np.abs(r)
        if self.kind == "indicator":
            return np.zeros_like(ra)
        s = np.clip(2.0 * ra - 1.0, 0.0, 1.0)
        mid = (ra > 0.5) & (ra < 1.0)
        out = np.where(mid, 2.0 * _smoothstep_fall_deriv(s), 0.0) * sgn
        return float(out) if out.ndim == 0 else out

    def power_integral(self, p):
        """int_R zeta(|s|)^p ds, computed adaptively on the compact support."""
        if self.kind == "indicator":
            return 2.0
        tail, _ = quad(lambda s: self.value(s) ** p, 0.5, 1.0,
                       epsabs=1e-13, epsrel=1e-11)
        return 2.0 * (0.5 + tail)


def smoothstep_cutoff() -> CutoffSpec:
    return CutoffSpec(kind="smoothstep7", smooth_order=3)


def indicator_cutoff() -> CutoffSpec:
    """Idealized cutoff (1 on [0,1)); for test oracles only, not C^3."""
    return CutoffSpec(kind="indicator", smooth_order=0)


def scaling_constant(profile: WolffProfile, cutoff: CutoffSpec, d: int = 2) -> float:
    """Constant governing the localization limit of the scaled energies:
    (K/p) * int zeta^p, with K the profile energy mean."""
    if d != 2:
        raise ValueError("only d = 2 is supported")
    return profile.energy_mean / profile.p * cutoff.power_integral(profile.p)


# -------------------------------------------------------------- evaluations

def half_space_solution(profile: WolffProfile, y):
    """h(y) = exp(-y2) a(y1) on the closed upper half plane."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    ys = np.atleast_2d(y)
    out = np.exp(-ys[:, 1]) * profile.a(ys[:, 0])
    return float(out[0]) if single else out


def half_space_gradient(profile: WolffProfile, y):
    """Analytic gradient of h: (exp(-y2) a'(y1), -exp(-y2) a(y1))."""
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    e = np.exp(-ys[:, 1])
    g = np.column_stack([e * profile.ap(ys[:, 0]), -e * profile.a(ys[:, 0])])
    return g[0] if np.asarray(y).ndim == 1 else g


def p_laplace_residual(profile: WolffProfile, y, step: float) -> float:
    """Centered finite-difference div(|grad h|^(p-2) grad h) at an interior
    point; a verification oracle (should vanish at order step^2)."""
    y = np.asarray(y, dtype=float)
    if y[1] <= 2.0 * step:
        raise ValueError("need y2 > 2*step to stay in the half plane")
    p = profile.p

    def flux(pt):
        g = half_space_gradient(profile, pt)
        n = np.linalg.norm(g)
        if n < 1e-12:
            raise DegenerateGradient("|grad h| < 1e-12 at a stencil point")
        return n ** (p - 2.0) * g

    e1 = np.array([step, 0.0])
    e2 = np.array([0.0, step])
    d1 = (flux(y + e1)[0] - flux(y - e1)[0]) / (2.0 * step)
    d2 = (flux(y + e2)[1] - flux(y - e2)[1]) / (2.0 * step)
    return float(d1 + d2)


@dataclass(frozen=True)
class OscillatingDatum:
    """Localized oscillating Dirichlet data around a boundary point.

    Frequency N along the flattened boundary, cutoff support of radius 1/M
    around the frame base point; N defaults to M^2 and must satisfy N >= M^2.
    """

    frame: BoundaryFrame
    M: float
    N: float
    cutoff: CutoffSpec
    profile: WolffProfile

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.N < self.M ** 2:
            raise ValueError("N must be >= M^2")

    @property
    def boundary_wavelength(self):
        """Wavelength of the datum oscillation along the boundary."""
        return self.period_scaled

    @property
    def period_scaled(self):
        return self.profile.period / self.N


def make_datum(frame, M, profile, cutoff=None, N=None) -> OscillatingDatum:
    cutoff = cutoff if cutoff is not None else smoothstep_cutoff()
    N = float(N) if N is not None else float(M) ** 2
    return OscillatingDatum(frame=frame, M=float(M), N=N, cutoff=cutoff,
                            profile=profile)


def eval_oscillating_datum(datum: OscillatingDatum, domain: Domain, x):
    """v(x) = h(N f(x)) zeta(M |x - x0|), with f the boundary-flattening map."""
    pts, single = np.atleast_2d(np.asarray(x, dtype=float)), np.asarray(x).ndim == 1
    y = (pts - datum.frame.x0) @ datum.frame.rot.T
    rho = domain.rho_at(pts)
    val = np.exp(-datum.N * rho) * datum.profile.a(datum.N * y[:, 0]) \
        * datum.cutoff.value(datum.M * np.linalg.norm(y, axis=1))
    return float(val[0]) if single else val


def oscillating_boundary_data(datum: OscillatingDatum, domain: Domain) -> BoundaryData:
    """Wrap a datum as cacheable boundary data with its closed-form
    tangential derivative along the boundary."""
    key = (f"vM|p={datum.profile.p!r}|M={datum.M!r}|N={datum.N!r}"
           f"|x0={datum.frame.x0[0]!r},{datum.frame.x0[1]!r}|cut={datum.cutoff.kind}")

    def fn(pts):
        return eval_oscillating_datum(datum, domain, pts)

    def dtan(pts, tangents):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        tangents = np.atleast_2d(np.asarray(tangents, dtype=float))
        y = (pts - datum.frame.x0) @ datum.frame.rot.T
        r = np.linalg.norm(y, axis=1)
        rho = domain.rho_at(pts)
        grho = domain.grad_rho_at(pts)
        ty = tangents @ datum.frame.rot.T          # tangent in frame coords
        dy1 = ty[:, 0]
        dr = np.divide((y * ty).sum(axis=1), r, out=np.zeros_like(r), where=r > 0)
        drho = (grho * tangents).sum(axis=1)
        N, M = datum.N, datum.M
        e = np.exp(-N * rho)
        a = datum.profile.a(N * y[:, 0])
        apv = datum.profile.ap(N * y[:, 0])
        z = datum.cutoff.value(M * r)
        dz = datum.cutoff.derivative(M * r)
        return e * (apv * N * dy1 * z + a * dz * M * dr) - N * drho * e * a * z

    meta = {"oscillation_wavelength": datum.period_scaled,
            "support_radius": 1.0 / datum.M,
            "center": tuple(datum.frame.x0),
            "M": datum.M, "N": datum.N}
    return BoundaryData(fn=fn, key=key, tangential_derivative=dtan, meta=meta)


def write_profile_csv(profile: WolffProfile, path, cutoff: Optional[CutoffSpec] = None):
    """CSV dump of (t, a, a'); header comments carry p, period, energy mean,
    and the scaling constant when a cutoff is given."""
    lines = [f"# p={profile.p!r}", f"# lambda={profile.period!r}",
             f"# K={profile.energy_mean!r}"]
    if cutoff is not None:
        cp = scaling_constant(profile, cutoff)
        lines.append(f"# c_p={cp!r} cutoff={cutoff.kind}")
    lines.append("t,a,ap")
    for t, a, ap in zip(profile.ts, profile.a_samples, profile.ap_samples):
        lines.append(f"{float(t)!r},{float(a)!r},{float(ap)!r}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
