"""Finite-element solver for the weighted, perturbed p-Laplace problem.

P1 elements on the graded meshes, one-point (centroid) quadrature for the
nonlinear energy, damped Newton with Armijo backtracking inside a
continuation loop over the regularization parameter.  The initial guess is
the weighted linear (p = 2) solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import (MeshTooCoarse, NonConvergence, PointOutsideMesh,
                     SingularSystem)
from .fields import BoundaryData, as_boundary_data
from .geometry import Mesh

DEFAULT_EPS_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8)


@dataclass(frozen=True)
class Conductivity:
    """Positive weight of the equation plus its exact gradient (ground truth
    used by oracles and validation, never by the reconstruction)."""

    name: str
    gamma: callable               # (n, 2) -> (n,)
    grad_gamma: callable          # (n, 2) -> (n, 2)
    gamma0: float                 # positive lower bound

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")

    def __call__(self, pts):
        return np.asarray(self.gamma(np.atleast_2d(np.asarray(pts, dtype=float))))

    def gradient(self, pts):
        return np.asarray(self.grad_gamma(np.atleast_2d(np.asarray(pts, dtype=float))))


@dataclass(frozen=True)
class SolverConfig:
    p: float
    eps_schedule: tuple = DEFAULT_EPS_SCHEDULE
    newton_tol: float = 1e-10          # relative to the initial residual
    max_newton: int = 200              # per continuation rung
    ls_backtrack: float = 0.5
    ls_c1: float = 1e-4
    linear_tol: float = 1e-12
    check_resolution: bool = True

    def __post_init__(self):
        if not (self.p > 1.0):
            raise ValueError("p must exceed 1")
        sched = tuple(float(e) for e in self.eps_schedule)
        if any(e <= 0 for e in sched):
            raise ValueError("eps schedule must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("eps schedule must be strictly decreasing")
        object.__setattr__(self, "eps_schedule", sched)


@dataclass
class ForwardSolution:
    """Discrete minimizer of the perturbed weighted p-Dirichlet energy."""

    mesh: Mesh
    u: np.ndarray
    p: float
    eps_final: float
    report: dict
    config: Optional[SolverConfig] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def element_gradients(self):
        if "grad" not in self._cache:
            bx, by = self.mesh.grad_ops
            gx, gy = _kernels.element_gradients(self.u, self.mesh.triangles, bx, by)
            self._cache["grad"] = np.column_stack([gx, gy])
        return self._cache["grad"]

    @property
    def flux_field(self):
        """Per-element area * gamma * (|grad u|^2 + eps)^((p-2)/2) * grad u."""
        if "flux" not in self._cache:
            g = self.element_gradients
            gamma_t = self.report["gamma_t"]
            w = self.mesh.areas * gamma_t * \
                ((g ** 2).sum(axis=1) + self.eps_final) ** (0.5 * (self.p - 2.0))
            self._cache["flux"] = w[:, None] * g
        return self._cache["flux"]

    @property
    def dn_functional(self):
        """Assembled weak DN functional W: pairing any vertex field g with the
        measurement is the dot product W . g (exact at assembly level)."""
        if "dn" not in self._cache:
            bx, by = self.mesh.grad_ops
            self._cache["dn"] = _kernels.residual(
                self.u, self.mesh.triangles, bx, by, self.mesh.areas,
                self.report["gamma_t"], self.p, self.eps_final)
        return self._cache["dn"]


# ----------------------------------------------------------------- assembly

def _gamma_on_elements(mesh, gamma):
    return np.asarray(gamma(mesh.centroids), dtype=float)


def assemble_energy(mesh: Mesh, gamma, p: float, eps: float, u) -> float:
    """Perturbed energy sum_T area * gamma(centroid) * (|grad u|_T^2 + eps)^(p/2)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    gamma_t = _gamma_on_elements(mesh, gamma)
    bx, by = mesh.grad_ops
    return _kernels.energy(np.asarray(u, dtype=float), mesh.triangles, bx, by,
                           mesh.areas, gamma_t, float(p), float(eps))


def _stiffness_entries(mesh, gamma_t):
    bx, by = mesh.grad_ops
    w = mesh.areas * gamma_t
    ent = np.empty((mesh.n_triangles, 3, 3))
    for i in range(3):
        for j in range(3):
            ent[:, i, j] = w * (bx[:, i] * bx[:, j] + by[:, i] * by[:, j])
    return ent


class _FreePattern:
    """Index plumbing for assembling the free-node block of element matrices."""

    def __init__(self, mesh):
        t = mesh.triangles
        free = ~mesh.is_boundary
        self.free = free
        self.n_free = int(free.sum())
        v2f = -np.ones(mesh.n_vertices, dtype=np.int64)
        v2f[free] = np.arange(self.n_free)
        self.v2f = v2f
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        fi = v2f[rows]
        fj = v2f[cols]
        self.valid = (fi >= 0) & (fj >= 0)
        self.fi = fi[self.valid]
        self.fj = fj[self.valid]

    def matrix(self, entries):
        data = entries.ravel()[self.valid]
        return sparse.coo_matrix((data, (self.fi, self.fj)),
                                 shape=(self.n_free, self.n_free)).tocsc()


class LinearOperator:
    """Factorized weighted linear (p = 2) operator, reusable across data."""

    def __init__(self, mesh, gamma):
        self.mesh = mesh
        self.gamma_t = _gamma_on_elements(mesh, gamma)
        self.pattern = _FreePattern(mesh)
        ent = _stiffness_entries(mesh, self.gamma_t)
        try:
            self.lu = splu(self.pattern.matrix(ent))
        except RuntimeError as exc:   # pragma: no cover - gamma >= gamma0 > 0
            raise SingularSystem(str(exc)) from exc
        # boundary coupling block for the RHS
        t = mesh.triangles
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        fi = self.pattern.v2f[rows]
        bmask = (fi >= 0) & (self.pattern.v2f[cols] < 0)
        self._rhs_rows = fi[bmask]
        self._rhs_cols = cols[bmask]
        self._rhs_vals_ix = bmask
        self._ent = ent

    def solve(self, boundary_values):
        mesh = self.mesh
        u = np.zeros(mesh.n_vertices)
        u[mesh.is_boundary] = boundary_values
        rhs = -np.bincount(self._rhs_rows,
                           weights=self._ent.ravel()[self._rhs_vals_ix] * u[self._rhs_cols],
                           minlength=self.pattern.n_free)
        u[self.pattern.free] = self.lu.solve(rhs)
        return u


def _boundary_vertex_values(mesh, v):
    vb = np.asarray(v(mesh.vertices[mesh.is_boundary]), dtype=float)
    if vb.shape != (int(mesh.is_boundary.sum()),):
        raise ValueError("boundary data returned wrong shape")
    return vb


def _check_resolution(mesh, v):
    """Reject boundary data oscillating below the edge scale (3 or more sign
    changes sampled across a single boundary edge)."""
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    ts = np.linspace(0.0, 1.0, 12)
    pts = (a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
    vals = np.asarray(v(pts)).reshape(len(a), len(ts))
    scale = np.abs(vals).max() + 1e-300
    s = np.sign(np.where(np.abs(vals) < 1e-13 * scale, 0.0, vals))
    changes = np.zeros(len(a), dtype=int)
    prev = np.zeros(len(a))
    for k in range(len(ts)):
        cur = s[:, k]
        nz = cur != 0
        flip = nz & (prev != 0) & (cur != prev)
        changes += flip
        prev = np.where(nz, cur, prev)
    worst = changes.max() if len(changes) else 0
    if worst >= 3:
        raise MeshTooCoarse(
            f"boundary data has {worst} sign changes across one boundary edge")


def linear_solve_p2(mesh: Mesh, gamma, boundary_values, op: Optional[LinearOperator] = None
                    ) -> ForwardSolution:
    """Weighted linear Laplace solve; initial guess and p = 2 cross-check."""
    v = as_boundary_data(boundary_values)
    op = op if op is not None else LinearOperator(mesh, gamma)
    vb = _boundary_vertex_values(mesh, v)
    u = op.solve(vb)
    report = {"method": "linear_p2", "gamma_t": op.gamma_t}
    return ForwardSolution(mesh=mesh, u=u, p=2.0, eps_final=0.0, report=report)


def solve_dirichlet(mesh: Mesh, gamma, p: float, boundary_values,
                    config: Optional[SolverConfig] = None, *,
                    linear_op: Optional[LinearOperator] = None,
                    keep_ladder: bool = False) -> ForwardSolution:
    """Energy minimization by continuation over the regularization parameter,
    damped Newton with backtracking inside each rung."""
    if config is None:
        config = SolverConfig(p=float(p))
    if abs(config.p - float(p)) > 0:
        raise ValueError("config.p disagrees with the p argument")
    v = as_boundary_data(boundary_values)
    if config.check_resolution:
        _check_resolution(mesh, v)

    vb = _boundary_vertex_values(mesh, v)
    gamma_t = _gamma_on_elements(mesh, gamma)
    bx, by = mesh.grad_ops
    tris = mesh.triangles
    areas = mesh.areas
    pattern = _FreePattern(mesh)
    free = pattern.free

    span = vb.max() - vb.min() if len(vb) else 0.0
    if span <= 1e-14 * (1.0 + np.abs(vb).max() if len(vb) else 1.0):
        c = float(vb.mean()) if len(vb) else 0.0
        u = np.full(mesh.n_vertices, c)
        report = {"method": "constant", "gamma_t": gamma_t, "ladder": [],
                  "converged": True}
        return ForwardSolution(mesh=mesh, u=u, p=float(p),
                               eps_final=config.eps_schedule[-1],
                               report=report, config=config)

    op = linear_op if linear_op is not None else LinearOperator(mesh, gamma)
    u = op.solve(vb)

    def resid(uu, eps):
        r = _kernels.residual(uu, tris, bx, by, areas, gamma_t, float(p), eps)
        return r[free]

    def resid_floor(uu, eps):
        """Roundoff floor of the assembled residual: norm of the vector of
        summed absolute element contributions, times machine epsilon."""
        gx, gy = _kernels.element_gradients(uu, tris, bx, by)
        w = areas * gamma_t * (gx * gx + gy * gy + eps) ** (0.5 * (float(p) - 2.0))
        cx = np.abs(w * gx)
        cy = np.abs(w * gy)
        m = np.zeros(mesh.n_vertices)
        for k in range(3):
            m += np.bincount(tris[:, k],
                             weights=cx * np.abs(bx[:, k]) + cy * np.abs(by[:, k]),
                             minlength=mesh.n_vertices)
        return 300.0 * np.finfo(float).eps * np.linalg.norm(m[free])

    def energy(uu, eps):
        return _kernels.energy(uu, tris, bx, by, areas, gamma_t, float(p), eps)

    ladder = []
    grads_ladder = []
    r0 = np.linalg.norm(resid(u, config.eps_schedule[0]))

    converged_all = True
    for eps in config.eps_schedule:
        r = resid(u, eps)
        rn = np.linalg.norm(r)
        floor = resid_floor(u, eps)
        threshold = max(config.newton_tol * r0, floor)
        energies = [energy(u, eps)]
        iters = 0
        rung_r0 = rn
        stalls = 0
        while rn > threshold and iters < config.max_newton and stalls < 2:
            ent = _kernels.hessian_entries(u, tris, bx, by, areas, gamma_t,
                                           float(p), eps)
            try:
                lu = splu(pattern.matrix(ent))
            except RuntimeError as exc:  # pragma: no cover
                raise SingularSystem(str(exc)) from exc
            d = lu.solve(-r)
            slope = float(p) * float(r @ d)
            if not slope < 0:     # safeguard: fall back to steepest descent
                d = -r
                slope = float(p) * float(r @ d)
            e_cur = energies[-1]
            # energy comparisons are meaningless below roundoff on E itself
            e_noise = 30.0 * np.finfo(float).eps * max(1.0, abs(e_cur))
            t = 1.0
            du = np.zeros(mesh.n_vertices)
            for _ in range(50):
                du[free] = t * d
                e_new = energy(u + du, eps)
                if e_new <= e_cur + config.ls_c1 * t * slope + e_noise:
                    break
                t *= config.ls_backtrack
            u = u + du
            energies.append(e_new)
            r = resid(u, eps)
            rn_new = np.linalg.norm(r)
            stalls = stalls + 1 if rn_new > 0.7 * rn else 0
            rn = rn_new
            iters += 1
        # a stall within a generous multiple of the assembly floor counts as
        # converged: the iteration is limited by roundoff, not by Newton
        rung_ok = bool(rn <= threshold or (stalls >= 2 and rn <= 2e3 * floor))
        converged_all = converged_all and rung_ok
        ladder.append({"eps": eps, "iterations": iters, "residual0": float(rung_r0),
                       "residual": float(rn), "floor": float(floor),
                       "energy": float(energies[-1]),
                       "energies": [float(e) for e in energies]})
        if keep_ladder:
            gx, gy = _kernels.element_gradients(u, tris, bx, by)
            grads_ladder.append(np.column_stack([gx, gy]))
        if not rung_ok:
            report = {"method": "newton", "gamma_t": gamma_t, "ladder": ladder,
                      "converged": False, "threshold": float(threshold)}
            sol = ForwardSolution(mesh=mesh, u=u, p=float(p), eps_final=eps,
                                  report=report, config=config)
            raise NonConvergence(
                f"Newton cap {config.max_newton} hit at eps={eps:g} "
                f"(residual {rn:.3e} > {threshold:.3e})",
                solution=sol, residual=float(rn))

    report = {"method": "newton", "gamma_t": gamma_t, "ladder": ladder,
              "converged": converged_all, "threshold": float(threshold)}
    if keep_ladder:
        report["gradients_ladder"] = grads_ladder
    return ForwardSolution(mesh=mesh, u=u, p=float(p),
                           eps_final=config.eps_schedule[-1],
                           report=report, config=config)


# ------------------------------------------------------------- postprocessing

def _barycentric(mesh, tri_ids, x):
    t = mesh.triangles[tri_ids]
    p0 = mesh.vertices[t[:, 0]]
    p1 = mesh.vertices[t[:, 1]]
    p2 = mesh.vertices[t[:, 2]]
    det = ((p1 - p0)[:, 0] * (p2 - p0)[:, 1] - (p1 - p0)[:, 1] * (p2 - p0)[:, 0])
    w0 = ((p1[:, 0] - x[0]) * (p2[:, 1] - x[1]) - (p2[:, 0] - x[0]) * (p1[:, 1] - x[1])) / det
    w1 = ((p2[:, 0] - x[0]) * (p0[:, 1] - x[1]) - (p0[:, 0] - x[0]) * (p2[:, 1] - x[1])) / det
    w2 = 1.0 - w0 - w1
    return np.column_stack([w0, w1, w2])


def locate_triangles(mesh: Mesh, x, tol: float = 1e-12):
    """All triangles containing x (barycentric slack tol); expanding vertex
    neighborhood search with a full scan as last resort."""
    x = np.asarray(x, dtype=float)
    for k in (8, 32, 128):
        k = min(k, mesh.n_vertices)
        _, vids = mesh.vertex_tree.query(x, k=k)
        cand = mesh.triangles_near_vertices(np.atleast_1d(vids))
        if len(cand):
            w = _barycentric(mesh, cand, x)
            inside = (w >= -tol).all(axis=1)
            if inside.any():
                return cand[inside]
        if k == mesh.n_vertices:
            break
    cand = np.arange(mesh.n_triangles)
    w = _barycentric(mesh, cand, x)
    inside = (w >= -tol).all(axis=1)
    if inside.any():
        return cand[inside]
    raise PointOutsideMesh(f"point {x} lies in no mesh triangle")


def gradient_at(solution: ForwardSolution, x):
    """Piecewise-constant gradient at x; area-weighted average of adjacent
    elements when x sits on an edge or vertex."""
    tri_ids = locate_triangles(solution.mesh, x)
    g = solution.element_gradients[tri_ids]
    a = solution.mesh.areas[tri_ids]
    return (g * a[:, None]).sum(axis=0) / a.sum()


def epsilon_convergence_report(mesh, gamma, p, boundary_values, schedule,
                               config: Optional[SolverConfig] = None):
    """Sup-norm element-gradient distance of each continuation rung to the
    final one; validates the continuation and the eps floor."""
    schedule = tuple(float(e) for e in schedule)
    if len(schedule) < 3:
        raise ValueError("schedule needs at least 3 entries")
    if config is None:
        config = SolverConfig(p=float(p), eps_schedule=schedule)
    else:
        config = SolverConfig(p=float(p), eps_schedule=schedule,
                              newton_tol=config.newton_tol,
                              max_newton=config.max_newton,
                              ls_backtrack=config.ls_backtrack,
                              ls_c1=config.ls_c1, linear_tol=config.linear_tol,
                              check_resolution=config.check_resolution)
    sol = solve_dirichlet(mesh, gamma, p, boundary_values, config, keep_ladder=True)
    grads = sol.report["gradients_ladder"]
    last = grads[-1]
    rows = []
    for eps, g in zip(schedule, grads):
        diff = float(np.linalg.norm(g - last, axis=1).max())
        rows.append({"eps": eps, "sup_grad_diff": diff})
    return rows


# ----------------------------------------------------------------------- i/o

def write_solution_csv(solution: ForwardSolution, path):
    with open(path, "w", newline="") as f:
        f.write("vertex,x,y,u\n")
        for i, ((x, y), ui) in enumerate(zip(solution.mesh.vertices, solution.u)):
            f.write(f"{i},{float(x)!r},{float(y)!r},{float(ui)!r}\n")


def write_convergence_json(solution: ForwardSolution, path):
    rep = solution.report
    out = {
        "method": rep.get("method"),
        "converged": rep.get("converged"),
        "eps_final": solution.eps_final,
        "p": solution.p,
        "ladder": [{k: v for k, v in rung.items()} for rung in rep.get("ladder", [])],
    }
    with open(path, "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
