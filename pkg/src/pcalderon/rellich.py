"""Boundary reconstruction of the conductivity and its gradient.

The scaled self-pairing of localized oscillating data recovers gamma at the
target point; the integration-by-parts identity
    int (d_a gamma) |grad u|^p dx
      = int gamma (a . nu) |grad u|^p dS - p int (d_a u) flux dS
turns the same measurements into the directional derivative of gamma, with
the boundary fields recovered from the DN interface alone: the pointwise
flux by mollifier probes and the normal derivative by the monotone scalar
equation.

Sensitivity note: for directions with a . nu(x0) away from zero the two
boundary terms above are each much larger than their difference at finite
frequency, so measurement error is amplified by roughly N/M; tangential
directions do not suffer from this.  The per-row diagnostics expose the
cancellation magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .dnmap import (DNMeasurement, detect_critical, monotone_root_many,
                    strong_dn_probe, weak_pairing)
from .errors import ProbeUnresolved, SamplingMismatch
from .fields import BoundaryData, as_boundary_data
from .forward import Conductivity
from .geometry import BoundaryQuadrature, Domain, boundary_frame
from .wolff import (CutoffSpec, WolffProfile, make_datum,
                    oscillating_boundary_data, scaling_constant)

PROBE_BASE_FRACTION = 3.2      # largest probe radius = wavelength / 3.2
MESH_POINTS_PER_WAVELENGTH = 64.0


def localization_scaling(value: float, M: float, N: float, d: int, p: float) -> float:
    """Normalization M^(d-1) N^(1-p) making the localized energies converge."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be >= 1")
    return float(M) ** (d - 1) * float(N) ** (1.0 - p) * value


def rellich_boundary_terms(gamma_on_boundary, strong_dn, boundary_grad_u,
                           alpha, quad: BoundaryQuadrature, p: float,
                           return_parts: bool = False):
    """Boundary side of the identity: int gamma (a.nu) |grad u|^p dS minus
    p int (a . grad u) flux dS, with the flux given by strong DN samples."""
    gamma_b = np.asarray(gamma_on_boundary, dtype=float)
    lam = np.asarray(strong_dn, dtype=float)
    grad_u = np.asarray(boundary_grad_u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    nq = len(quad.points)
    if gamma_b.shape != (nq,) or lam.shape != (nq,) or grad_u.shape != (nq, 2):
        raise SamplingMismatch(
            f"fields must be sampled at the {nq} quadrature points")
    speed = np.linalg.norm(grad_u, axis=1)
    term1 = float((quad.weights * gamma_b * (quad.normals @ alpha) * speed ** p).sum())
    term2 = float(p) * float((quad.weights * (grad_u @ alpha) * lam).sum())
    if return_parts:
        return term1 - term2, term1, term2
    return term1 - term2


def rellich_interior_integral(mesh, solution, grad_gamma, alpha, p=None) -> float:
    """Interior side int (a . grad gamma) |grad u|^p dx; a test oracle using
    the hidden truth, never part of the reconstruction."""
    p = float(p) if p is not None else solution.p
    alpha = np.asarray(alpha, dtype=float)
    g = solution.element_gradients
    dg = np.asarray(grad_gamma(mesh.centroids), dtype=float)
    speed = np.linalg.norm(g, axis=1)
    return float((mesh.areas * (dg @ alpha) * speed ** p).sum())


# ----------------------------------------------------------- mesh/delta plans

def datum_mesh_foci(profile: WolffProfile, x0, M_list, h,
                    points_per_wavelength: float = MESH_POINTS_PER_WAVELENGTH,
                    radius_factor: float = 2.0):
    """Grading plan: around the target point each datum needs edges at
    wavelength/points_per_wavelength inside radius radius_factor/M.

    The density resolves both the P1 interpolation of the oscillation and
    the probe radii (smallest probe = 5 local sizes = wavelength/12.8)."""
    x0 = np.asarray(x0, dtype=float)
    foci = []
    for M in M_list:
        N = float(M) ** 2
        lh = min(h, profile.period / (points_per_wavelength * N))
        foci.append((x0.copy(), lh, radius_factor / float(M)))
    return foci


def datum_probe_deltas(datum):
    """Probe radii tied to the datum oscillation: wavelength/(3.2, 6.4, 12.8)."""
    lam_n = datum.period_scaled
    return (lam_n / PROBE_BASE_FRACTION,
            lam_n / (2 * PROBE_BASE_FRACTION),
            lam_n / (4 * PROBE_BASE_FRACTION))


def smooth_probe_deltas(local_size, delta0: float = 0.2, levels: int = 3,
                        min_ratio: float = 5.0):
    """Halving schedule from delta0, floored at min_ratio local sizes."""
    out = []
    d = float(delta0)
    floor = min_ratio * float(local_size)
    while len(out) < levels and d >= floor:
        out.append(d)
        d *= 0.5
    if len(out) < 2:
        raise ValueError(
            f"cannot build a probe schedule above the floor {floor:.3e}")
    return tuple(out)


# ------------------------------------------------------------ gamma recovery

def recover_gamma_at(meas: DNMeasurement, domain: Domain, x0,
                     profile: WolffProfile, cutoff: CutoffSpec, M_list,
                     N_list=None):
    """Per-M estimates of gamma(x0) from scaled self-pairings of the
    oscillating data; the mesh behind meas must resolve the largest N."""
    M_list = list(M_list)
    if any(b <= a for a, b in zip(M_list, M_list[1:])):
        raise ValueError("M_list must be increasing")
    if profile.p != meas.p:
        raise ValueError("profile exponent disagrees with the measurement")
    frame = boundary_frame(domain, x0)
    cp = scaling_constant(profile, cutoff)
    rows = []
    for i, M in enumerate(M_list):
        N = None if N_list is None else N_list[i]
        datum = make_datum(frame, M, profile, cutoff, N=N)
        v = oscillating_boundary_data(datum, domain)
        energy = weak_pairing(meas, v, None)
        gamma_hat = localization_scaling(energy, datum.M, datum.N, 2, meas.p) / cp
        rows.append({"M": datum.M, "N": datum.N, "energy": energy,
                     "gamma_hat": gamma_hat, "c_p": cp})
    return rows


def recover_gamma_boundary(meas: DNMeasurement, domain: Domain,
                           profile: WolffProfile, cutoff: CutoffSpec,
                           grid_n: int = 16, M_rec: float = 4.0):
    """DN-only boundary trace of gamma: the scaled-energy estimate on a
    uniform angular grid, interpolated by a periodic cubic spline.

    The measurement mesh must resolve the M_rec datum at every grid point.
    Returns (gamma_b(points), diagnostics).
    """
    thetas = np.arange(grid_n) * 2.0 * np.pi / grid_n
    ring = np.column_stack([np.cos(thetas), np.sin(thetas)])
    ring = domain.project_to_boundary(ring)
    estimates = np.empty(grid_n)
    for i, q in enumerate(ring):
        row = recover_gamma_at(meas, domain, q, profile, cutoff, [M_rec])[0]
        estimates[i] = row["gamma_hat"]
    th_ext = np.concatenate([thetas, [2.0 * np.pi]])
    vals = np.concatenate([estimates, [estimates[0]]])
    spline = CubicSpline(th_ext, vals, bc_type="periodic")

    def gamma_b(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return spline(np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi))

    return gamma_b, {"grid_thetas": thetas, "grid_estimates": estimates,
                     "M_rec": M_rec}


# ----------------------------------------------------- boundary grad u field

def _kernel_weights_at_quad(mesh, quad, x0, delta):
    """Trace of the interpolated tent at the quadrature points (matches the
    effective probe kernel exactly)."""
    a = mesh.boundary_edges[quad.edge_index, 0]
    b = mesh.boundary_edges[quad.edge_index, 1]
    ea = np.maximum(delta - np.linalg.norm(mesh.vertices[a] - x0, axis=1), 0.0)
    eb = np.maximum(delta - np.linalg.norm(mesh.vertices[b] - x0, axis=1), 0.0)
    pa = mesh.vertices[a]
    pb = mesh.vertices[b]
    seg = pb - pa
    t = ((quad.points - pa) * seg).sum(axis=1) / (seg ** 2).sum(axis=1)
    return ea * (1.0 - t) + eb * t


def _matched_smooth(mesh, quad, values, x0, deltas):
    """Apply the probe kernel family + extrapolation to a known boundary
    field, so that known and probed fields carry identical smoothing."""
    from .dnmap import _extrapolate_to_zero
    smoothed = []
    for d in deltas:
        w = _kernel_weights_at_quad(mesh, quad, x0, d) * quad.weights
        tot = w.sum()
        smoothed.append(float((w * values).sum() / tot) if tot > 0 else 0.0)
    return _extrapolate_to_zero(deltas, smoothed)[0]


def boundary_gradient_field(meas: DNMeasurement, v, gamma_boundary,
                            sample_points, p: float, *,
                            quad: Optional[BoundaryQuadrature] = None,
                            deltas=None, tangents=None, normals=None,
                            match_smoothing: bool = True,
                            critical_tol: float = 1e-8):
    """Full gradient of the solution at boundary sample points.

    Tangential part from differentiating the Dirichlet data along the
    boundary, normal part from probed flux values through the monotone
    equation.  When the data carries oscillation metadata, probing is
    restricted to the support neighborhood (outside it the datum vanishes
    identically and probes at the oscillation scale are unresolvable on the
    coarse part of the mesh); samples there are zero.

    With match_smoothing the tangential data samples pass through the same
    mollifier kernels as the probed flux, which keeps the two fields
    consistently filtered; both converge to the pointwise values.
    """
    v = as_boundary_data(v)
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    n = len(pts)
    gb = np.asarray(gamma_boundary(pts) if callable(gamma_boundary)
                    else gamma_boundary, dtype=float)
    if gb.shape != (n,):
        raise SamplingMismatch("gamma_boundary must align with sample_points")
    if normals is None:
        normals = meas.domain.outward_normal(pts)
    if tangents is None:
        tangents = np.column_stack([-normals[:, 1], normals[:, 0]])

    # tangential derivative of the data
    if v.tangential_derivative is not None:
        dvds = np.asarray(v.tangential_derivative(pts, tangents), dtype=float)
    else:
        step = 0.5 * np.asarray([meas.local_size_at(q) for q in pts])
        plus = meas.domain.project_to_boundary(pts + step[:, None] * tangents)
        minus = meas.domain.project_to_boundary(pts - step[:, None] * tangents)
        gap = np.linalg.norm(plus - minus, axis=1)
        dvds = (v(plus) - v(minus)) / gap

    meta = v.meta or {}
    if deltas is None:
        if "oscillation_wavelength" in meta:
            lam_n = meta["oscillation_wavelength"]
            deltas = (lam_n / PROBE_BASE_FRACTION,
                      lam_n / (2 * PROBE_BASE_FRACTION),
                      lam_n / (4 * PROBE_BASE_FRACTION))
        else:
            deltas = smooth_probe_deltas(max(meas.local_size_at(q) for q in pts))
    deltas = tuple(float(d) for d in deltas)

    if "support_radius" in meta:
        # probe margin beyond the data support, kept inside the refined zone
        # (radius 2/M) so every active probe is resolvable by construction
        center = np.asarray(meta["center"], dtype=float)
        margin = min(2.0 * deltas[0], 0.9 * meta["support_radius"])
        active = np.linalg.norm(pts - center, axis=1) \
            <= meta["support_radius"] + margin
    else:
        active = np.ones(n, dtype=bool)

    lam = np.zeros(n)
    prob_res = np.zeros(n)
    n_bad = 0
    n_skipped = 0
    for i in np.where(active)[0]:
        try:
            res = strong_dn_probe(meas, v, pts[i], deltas, strict=False)
        except ProbeUnresolved:
            active[i] = False      # coarse-zone point: datum vanishes there
            n_skipped += 1
            continue
        lam[i] = res.value
        prob_res[i] = res.residual
        n_bad += 0 if res.converged else 1

    if match_smoothing and active.any():
        if quad is None:
            raise ValueError("match_smoothing needs the quadrature the samples came from")
        sm = dvds.copy()
        for i in np.where(active)[0]:
            sm[i] = _matched_smooth(meas._mesh, quad, dvds, pts[i], deltas)
        dvds_used = np.where(active, sm, dvds)
    else:
        dvds_used = dvds
    dvds_used = np.where(active, dvds_used, 0.0)

    rhs = np.abs(lam) / gb
    t = monotone_root_many(np.abs(dvds_used), p, rhs)
    dnu = t * np.sign(lam)
    grad = dvds_used[:, None] * tangents + dnu[:, None] * normals
    scale = np.abs(lam).max() if n else 0.0
    critical = np.array([detect_critical(l, critical_tol * max(1.0, scale))
                         for l in lam])
    root_residual = np.abs((np.abs(dvds_used) ** 2 + t ** 2) ** (0.5 * (p - 2.0)) * t
                           - rhs)
    return {
        "points": pts, "grad": grad, "strong_dn": lam,
        "tangential": dvds_used, "tangential_raw": dvds, "normal": dnu,
        "tangents": tangents, "normals": normals, "active": active,
        "critical": critical, "deltas": deltas,
        "diagnostics": {
            "probe_residual_max": float(prob_res.max()) if n else 0.0,
            "probe_nonconverged": int(n_bad),
            "probe_skipped_unresolved": int(n_skipped),
            "active_count": int(active.sum()),
            "root_residual_max": float(root_residual.max()) if n else 0.0,
        },
    }


# ------------------------------------------------------------ reconstruction

@dataclass
class ReconstructionResult:
    """Per-M estimates of gamma(x0) and directional derivatives of gamma."""

    x0: np.ndarray
    alphas: list                  # list of (label, direction) pairs
    p: float
    c_p: float
    gamma_mode: str
    rows: list = field(default_factory=list)
    truth: Optional[dict] = None  # {"gamma": value, "grad": vector}

    @property
    def final(self):
        return self.rows[-1] if self.rows else None

    def full_gradient(self, row=None):
        """Least-squares gradient from the directional estimates of a row."""
        row = row if row is not None else self.final
        dirs = np.array([a for _, a in self.alphas])
        vals = np.array([row["dgamma_hat"][label] for label, _ in self.alphas])
        sol, *_ = np.linalg.lstsq(dirs, vals, rcond=None)
        return sol

    def to_json_dict(self):
        out = {
            "x0": list(map(float, self.x0)),
            "p": self.p,
            "c_p": self.c_p,
            "gamma_mode": self.gamma_mode,
            "alphas": {label: list(map(float, a)) for label, a in self.alphas},
            "rows": self.rows,
        }
        if self.truth is not None:
            out["truth"] = self.truth
        return out

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True, default=float)
            f.write("\n")

    def write_csv(self, path):
        """Summary: one row per M with the first direction's estimate."""
        label0 = self.alphas[0][0]
        with open(path, "w", newline="") as f:
            f.write("M,N,gamma_hat,dgamma_hat,err_gamma,err_dgamma\n")
            for row in self.rows:
                eg = ed = ""
                if self.truth is not None:
                    eg = repr(abs(row["gamma_hat"] - self.truth["gamma"]))
                    ed = repr(abs(row["dgamma_hat"][label0]
                                  - self.truth["dgamma"][label0]))
                f.write(f"{row['M']!r},{row['N']!r},{row['gamma_hat']!r},"
                        f"{row['dgamma_hat'][label0]!r},{eg},{ed}\n")


def _alpha_list(alpha):
    if isinstance(alpha, dict):
        return [(k, np.asarray(a, dtype=float)) for k, a in alpha.items()]
    arr = np.asarray(alpha, dtype=float)
    if arr.ndim == 1:
        return [("alpha", arr)]
    return [(f"alpha{i}", a) for i, a in enumerate(arr)]


def recover_grad_gamma(meas: DNMeasurement, domain: Domain, x0, alpha,
                       profile: WolffProfile, cutoff: CutoffSpec, M_list,
                       gamma_boundary_mode: str = "oracle", *,
                       truth: Optional[Conductivity] = None,
                       quad_order: int = 3,
                       recovered_grid: int = 16, M_rec: float = 4.0,
                       match_smoothing: bool = True) -> ReconstructionResult:
    """Full reconstruction: per-M estimates of gamma(x0) and the directional
    derivatives d_a gamma(x0) for each direction in alpha.

    gamma on the boundary enters the identity's first term; mode "oracle"
    injects the truth (isolates the pipeline error), mode "recovered" uses
    the DN-only estimate on an angular grid with periodic cubic
    interpolation.
    """
    alphas = _alpha_list(alpha)
    for label, a in alphas:
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError(f"direction {label} must be a unit vector")
    x0 = np.asarray(x0, dtype=float)
    frame = boundary_frame(domain, x0)
    cp = scaling_constant(profile, cutoff)
    quad = meas.boundary_quadrature(quad_order)

    if gamma_boundary_mode == "oracle":
        if truth is None:
            raise ValueError("oracle mode needs the true conductivity")
        gamma_b = lambda pts: truth(pts)
        gb_diag = {}
    elif gamma_boundary_mode == "recovered":
        gamma_b, gb_diag = recover_gamma_boundary(
            meas, domain, profile, cutoff, grid_n=recovered_grid, M_rec=M_rec)
    else:
        raise ValueError("gamma_boundary_mode must be 'oracle' or 'recovered'")

    result = ReconstructionResult(x0=x0, alphas=alphas, p=meas.p, c_p=cp,
                                  gamma_mode=gamma_boundary_mode)
    if truth is not None:
        tg = truth.gradient(x0[None, :])[0]
        result.truth = {"gamma": float(truth(x0[None, :])[0]),
                        "dgamma": {label: float(tg @ a) for label, a in alphas},
                        "grad": [float(t) for t in tg]}

    gamma_q = np.asarray(gamma_b(quad.points), dtype=float)
    for M in M_list:
        datum = make_datum(frame, M, profile, cutoff)
        v = oscillating_boundary_data(datum, domain)
        energy = weak_pairing(meas, v, None)
        gamma_hat = localization_scaling(energy, datum.M, datum.N, 2, meas.p) / cp

        fields = boundary_gradient_field(
            meas, v, gamma_q, quad.points, meas.p, quad=quad,
            deltas=datum_probe_deltas(datum), tangents=None,
            normals=quad.normals, match_smoothing=match_smoothing)
        row = {"M": datum.M, "N": datum.N, "gamma_hat": float(gamma_hat),
               "energy": float(energy), "c_p": cp,
               "dgamma_hat": {}, "rhs_parts": {},
               "diagnostics": fields["diagnostics"]}
        for label, a in alphas:
            rhs, t1, t2 = rellich_boundary_terms(
                gamma_q, fields["strong_dn"], fields["grad"], a, quad, meas.p,
                return_parts=True)
            est = localization_scaling(rhs, datum.M, datum.N, 2, meas.p) / cp
            row["dgamma_hat"][label] = float(est)
            row["rhs_parts"][label] = {"term_normal_power": float(t1),
                                       "term_flux": float(t2),
                                       "cancellation": float(
                                           abs(t1 - t2) / max(abs(t1), abs(t2), 1e-300))}
        if truth is not None:
            row["err_gamma"] = float(abs(gamma_hat - result.truth["gamma"]))
            row["err_dgamma"] = {label: float(abs(row["dgamma_hat"][label]
                                                  - result.truth["dgamma"][label]))
                                 for label, _ in alphas}
        result.rows.append(row)
    result.rows.sort(key=lambda r: r["M"])
    if gamma_boundary_mode == "recovered":
        result.rows[-1].setdefault("diagnostics", {})
        result.rows[-1]["diagnostics"]["gamma_boundary_grid"] = {
            "thetas": [float(t) for t in gb_diag["grid_thetas"]],
            "estimates": [float(e) for e in gb_diag["grid_estimates"]],
        }
    return result
