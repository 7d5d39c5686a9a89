"""Level-set domains, boundary frames, and graded triangular meshes.

Domains are described by a defining function rho (positive inside, zero on
the boundary, nonvanishing gradient there).  Meshes are produced by a
force-equilibrium smoother (distmesh style) over a graded size field, with
boundary vertices placed exactly on the zero level set.  The generator
assumes a convex smooth domain; the only domain shipped is the unit disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateNormal, MeshBudgetExceeded, NotOnBoundary

BOUNDARY_TOL = 1e-10


def _as_points(x):
    """Coerce input to an (n, 2) float array; report if it was a single point."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


@dataclass(frozen=True)
class Domain:
    """Smooth bounded domain given by a boundary defining function."""

    dim: int
    rho: Callable[[np.ndarray], np.ndarray]
    grad_rho: Callable[[np.ndarray], np.ndarray]
    bbox: np.ndarray            # (2, dim): [min; max]
    name: str = "domain"

    def rho_at(self, x):
        pts, single = _as_points(x)
        v = np.asarray(self.rho(pts), dtype=float)
        return float(v[0]) if single else v

    def grad_rho_at(self, x):
        pts, single = _as_points(x)
        g = np.asarray(self.grad_rho(pts), dtype=float)
        return g[0] if single else g

    def project_to_boundary(self, x, iterations=4):
        """Newton projection of points onto the zero level set."""
        pts, single = _as_points(x)
        q = pts.copy()
        for _ in range(iterations):
            g = self.grad_rho_at(q)
            r = self.rho_at(q)
            q = q - (r / (g ** 2).sum(axis=1))[:, None] * g
        return q[0] if single else q

    def outward_normal(self, x):
        pts, single = _as_points(x)
        g = self.grad_rho_at(pts)
        n = -g / np.linalg.norm(g, axis=1)[:, None]
        return n[0] if single else n


def build_disk_domain() -> Domain:
    """Unit disk with rho(x) = (1 - |x|^2)/2, so grad rho = -x and nu = x on |x| = 1."""

    def rho(pts):
        pts = np.atleast_2d(pts)
        return 0.5 * (1.0 - (pts ** 2).sum(axis=1))

    def grad(pts):
        return -np.atleast_2d(np.asarray(pts, dtype=float))

    bbox = np.array([[-1.0, -1.0], [1.0, 1.0]])
    return Domain(dim=2, rho=rho, grad_rho=grad, bbox=bbox, name="disk")


@dataclass(frozen=True)
class BoundaryFrame:
    """Rigid motion taking a boundary point to the origin and its normal to -e2."""

    x0: np.ndarray              # base point on the boundary
    nu: np.ndarray              # outward unit normal at x0
    rot: np.ndarray             # 2x2 rotation with rot @ nu = (0, -1)

    def to_frame(self, x):
        pts, single = _as_points(x)
        y = (pts - self.x0) @ self.rot.T
        return y[0] if single else y

    def from_frame(self, y):
        pts, single = _as_points(y)
        x = pts @ self.rot + self.x0
        return x[0] if single else x

    @property
    def tangent(self):
        """Unit tangent at x0, oriented so (tangent, nu) is right-handed."""
        return np.array([-self.nu[1], self.nu[0]])


def boundary_frame(domain: Domain, x0, tol: float = BOUNDARY_TOL) -> BoundaryFrame:
    """Frame at a boundary point; the rotation is the unique one (no reflection)
    mapping the outward normal to -e2."""
    x0 = np.asarray(x0, dtype=float)
    r = domain.rho_at(x0)
    if abs(r) > tol:
        raise NotOnBoundary(f"|rho(x0)| = {abs(r):.3e} exceeds {tol:.1e}")
    g = domain.grad_rho_at(x0)
    gn = np.linalg.norm(g)
    if gn < 0.5:
        raise DegenerateNormal(f"|grad rho(x0)| = {gn:.3e} < 0.5")
    nu = -g / gn
    phi = np.arctan2(nu[1], nu[0])
    theta = -0.5 * np.pi - phi
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return BoundaryFrame(x0=x0, nu=nu, rot=rot)


def flatten_map(domain: Domain, frame: BoundaryFrame, x):
    """Boundary-flattening map: x -> (y1, rho(x)) with y = rot (x - x0).

    Sends x0 to the origin and the domain near x0 into the upper half plane.
    """
    pts, single = _as_points(x)
    y = (pts - frame.x0) @ frame.rot.T
    out = np.column_stack([y[:, 0], domain.rho_at(pts)])
    return out[0] if single else out


# --------------------------------------------------------------------- meshes

def _normalize_focus(focus):
    if focus is None:
        return ()
    if isinstance(focus, (list, tuple)) and len(focus) == 3 \
            and np.ndim(focus[0]) == 1 and np.isscalar(focus[1]):
        focus = [focus]
    out = []
    for (c, lh, rad) in focus:
        out.append((np.asarray(c, dtype=float), float(lh), float(rad)))
    return tuple(out)


def _size_field(pts, h, foci, growth):
    s = np.full(len(pts), float(h))
    for (c, lh, rad) in foci:
        d = np.linalg.norm(pts - c, axis=1)
        s = np.minimum(s, lh + growth * np.maximum(d - rad, 0.0))
    return s


@dataclass
class Mesh:
    """Conforming triangulation of a polygonal approximation of a domain.

    Triangles are CCW ordered.  Boundary edges form an ordered CCW chain
    with outward unit normals.  Instances are immutable by convention;
    derived quantities are cached lazily.
    """

    vertices: np.ndarray            # (nv, 2)
    triangles: np.ndarray           # (nt, 3) int
    boundary_edges: np.ndarray      # (nbe, 2) int, ordered chain
    boundary_normals: np.ndarray    # (nbe, 2)
    is_boundary: np.ndarray         # (nv,) bool
    h: float
    foci: tuple = ()
    growth: float = 0.35
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def _corners(self):
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    @property
    def areas(self):
        if "areas" not in self._cache:
            p0, p1, p2 = self._corners()
            e1 = p1 - p0
            e2 = p2 - p0
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def centroids(self):
        if "centroids" not in self._cache:
            p0, p1, p2 = self._corners()
            self._cache["centroids"] = (p0 + p1 + p2) / 3.0
        return self._cache["centroids"]

    @property
    def grad_ops(self):
        """Per-element P1 gradient operators: (bx, by), each (nt, 3)."""
        if "grad_ops" not in self._cache:
            p0, p1, p2 = self._corners()
            det = 2.0 * self.areas
            bx = np.stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1],
                           p0[:, 1] - p1[:, 1]], axis=1) / det[:, None]
            by = np.stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0],
                           p1[:, 0] - p0[:, 0]], axis=1) / det[:, None]
            self._cache["grad_ops"] = (bx, by)
        return self._cache["grad_ops"]

    @property
    def vertex_tree(self):
        if "vertex_tree" not in self._cache:
            self._cache["vertex_tree"] = cKDTree(self.vertices)
        return self._cache["vertex_tree"]

    @property
    def vertex_to_triangles(self):
        """CSR-style adjacency: (indptr, indices) mapping vertex -> triangles."""
        if "v2t" not in self._cache:
            t = self.triangles.ravel()
            order = np.argsort(t, kind="stable")
            tri_ids = np.repeat(np.arange(self.n_triangles), 3)[order]
            counts = np.bincount(t, minlength=self.n_vertices)
            indptr = np.concatenate([[0], np.cumsum(counts)])
            self._cache["v2t"] = (indptr, tri_ids)
        return self._cache["v2t"]

    def triangles_near_vertices(self, vertex_ids):
        indptr, tri_ids = self.vertex_to_triangles
        chunks = [tri_ids[indptr[v]:indptr[v + 1]] for v in vertex_ids]
        if not chunks:
            return np.empty(0, dtype=tri_ids.dtype)
        return np.unique(np.concatenate(chunks))

    def edge_lengths(self):
        if "edge_lengths" not in self._cache:
            t = self.triangles
            e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
            e = np.unique(e, axis=0)
            L = np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)
            self._cache["edge_lengths"] = (e, L)
        return self._cache["edge_lengths"]

    def local_size_at(self, x):
        """Nominal mesh size at a point (size field when known, else geometric)."""
        pts, single = _as_points(x)
        if self.foci is not None:
            s = _size_field(pts, self.h, self.foci, self.growth)
        else:  # imported mesh: estimate from incident edges of nearest vertex
            edges, L = self.edge_lengths()
            s = np.empty(len(pts))
            for i, p in enumerate(pts):
                _, v = self.vertex_tree.query(p)
                m = (edges[:, 0] == v) | (edges[:, 1] == v)
                s[i] = L[m].min()
        return float(s[0]) if single else s


def _boundary_nodes(domain, h, foci, growth, scale):
    """Boundary vertices spaced by the size field, marching the level set."""
    # start point: level-set crossing along +e1 from the bbox center
    c = domain.bbox.mean(axis=0)
    span = np.linalg.norm(domain.bbox[1] - domain.bbox[0])
    ts = np.linspace(0.0, span, 2049)
    ray = c[None, :] + ts[:, None] * np.array([1.0, 0.0])
    r = domain.rho_at(ray)
    k = np.argmax(r <= 0.0)
    lo, hi = ts[k - 1], ts[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if domain.rho_at(c + mid * np.array([1.0, 0.0])) > 0:
            lo = mid
        else:
            hi = mid
    start = domain.project_to_boundary(c + 0.5 * (lo + hi) * np.array([1.0, 0.0]))

    # pass 1: march CCW with fine substeps, accumulating arclength s and
    # the node-count integral Phi = int ds / t(s)
    target = lambda q: _size_field(np.atleast_2d(q), h, foci, growth)[0] / scale
    pos = start.copy()
    s_acc = [0.0]
    phi_acc = [0.0]
    path = [pos.copy()]
    guard = 0
    while True:
        step = target(pos) / 8.0
        g = domain.grad_rho_at(pos)
        nu = -g / np.linalg.norm(g)
        tang = np.array([-nu[1], nu[0]])
        nxt = domain.project_to_boundary(pos + step * tang)
        ds = np.linalg.norm(nxt - pos)
        s_acc.append(s_acc[-1] + ds)
        phi_acc.append(phi_acc[-1] + ds / target(0.5 * (pos + nxt)))
        path.append(nxt.copy())
        pos = nxt
        guard += 1
        if s_acc[-1] > 3 * step and np.linalg.norm(pos - start) < 1.5 * step:
            break
        if guard > 4_000_000:
            raise MeshBudgetExceeded("boundary marching did not close")
    # close the loop exactly
    ds = np.linalg.norm(start - pos)
    s_acc[-1] += ds
    phi_acc[-1] += ds / target(0.5 * (pos + start))
    path[-1] = start.copy()

    s_acc = np.asarray(s_acc)
    phi_acc = np.asarray(phi_acc)
    path = np.asarray(path)
    n = max(8, int(np.ceil(phi_acc[-1])))
    targets = np.arange(n) * phi_acc[-1] / n
    sx = np.interp(targets, phi_acc, path[:, 0])
    sy = np.interp(targets, phi_acc, path[:, 1])
    nodes = domain.project_to_boundary(np.column_stack([sx, sy]))
    return nodes


def generate_mesh(domain: Domain, h: float, focus=None, *,
                  max_vertices: int = 400_000, seed: int = 0,
                  growth: float = 0.35, max_iter: int = 80) -> Mesh:
    """Graded conforming triangulation with boundary vertices on the level set.

    Parameters
    ----------
    domain : Domain
    h : float
        Global edge-length bound.
    focus : (point, local_h, radius) or sequence of such triples, optional
        Edge lengths are held at local_h or below within each radius; the
        size field grows linearly outside (grading ratio of adjacent
        triangles stays below 2).
    max_vertices : int
        Budget cap; MeshBudgetExceeded is raised beyond it.
    seed : int
        Seed for the interior rejection sampling (meshes are deterministic
        given identical arguments).
    """
    foci = _normalize_focus(focus)
    for (_, lh, _) in foci:
        if not (0 < lh <= h):
            raise ValueError("focus local_h must satisfy 0 < local_h <= h")
    scale = 1.32      # internal size deflation so realized edges stay <= requested
    fscale = 1.18
    rng = np.random.default_rng(seed)

    fixed = _boundary_nodes(domain, h, foci, growth, scale)
    nfix = len(fixed)
    if nfix > max_vertices:
        raise MeshBudgetExceeded(f"boundary alone needs {nfix} vertices > cap {max_vertices}")

    tmin = _size_field(np.vstack([fixed, domain.bbox.mean(axis=0)[None, :]]),
                       h, foci, growth).min() / scale
    lo, hi = domain.bbox[0], domain.bbox[1]
    dx = tmin
    dy = tmin * np.sqrt(3) / 2
    xs = np.arange(lo[0] - dx, hi[0] + 2 * dx, dx)
    ys = np.arange(lo[1] - dy, hi[1] + 2 * dy, dy)
    X, Y = np.meshgrid(xs, ys)
    X[1::2] += dx / 2
    cand = np.column_stack([X.ravel(), Y.ravel()])
    t = _size_field(cand, h, foci, growth) / scale
    keep = rng.random(len(cand)) < (tmin / t) ** 2
    cand = cand[keep]
    t = t[keep]
    dist = domain.rho_at(cand) / np.maximum(
        np.linalg.norm(domain.grad_rho_at(cand), axis=1), 0.5)
    cand = cand[dist > 0.45 * t]
    pts = np.vstack([fixed, cand])
    if len(pts) > max_vertices:
        raise MeshBudgetExceeded(f"{len(pts)} vertices > cap {max_vertices}")

    tloc = _size_field(pts, h, foci, growth) / scale
    ref = None
    e0 = e1 = None
    for _ in range(max_iter):
        if ref is None or (np.linalg.norm(pts - ref, axis=1) / tloc).max() > 0.12:
            tri = Delaunay(pts)
            ref = pts.copy()
            simp = tri.simplices
            edges = np.unique(np.sort(np.concatenate(
                [simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]]), axis=1), axis=0)
            e0 = edges[:, 0].astype(np.intp)
            e1 = edges[:, 1].astype(np.intp)
        vec = pts[e1] - pts[e0]
        L = np.linalg.norm(vec, axis=1)
        mid = 0.5 * (pts[e0] + pts[e1])
        hbar = _size_field(mid, h, foci, growth) / scale
        L0 = hbar * fscale * np.sqrt((L ** 2).sum() / (hbar ** 2).sum())
        F = np.maximum(L0 - L, 0.0) / np.maximum(L, 1e-30)
        fv = F[:, None] * vec
        n = len(pts)
        mx = np.bincount(e0, weights=-fv[:, 0], minlength=n) \
            + np.bincount(e1, weights=fv[:, 0], minlength=n)
        my = np.bincount(e0, weights=-fv[:, 1], minlength=n) \
            + np.bincount(e1, weights=fv[:, 1], minlength=n)
        delta = 0.2 * np.column_stack([mx, my])
        delta[:nfix] = 0.0
        pts = pts + delta
        out = np.where(domain.rho_at(pts[nfix:]) < 0)[0] + nfix
        if len(out):
            q = domain.project_to_boundary(pts[out])
            nu = domain.outward_normal(q)
            q = q - nu * (0.25 * _size_field(q, h, foci, growth) / scale)[:, None]
            pts[out] = q
        tloc = _size_field(pts, h, foci, growth) / scale
        if len(pts) > nfix and \
                (np.linalg.norm(delta[nfix:], axis=1) / tloc[nfix:]).max() < 0.025:
            break

    # enforce the requested edge bound by midpoint insertion
    for _ in range(6):
        tri = Delaunay(pts)
        simp = tri.simplices
        edges = np.unique(np.sort(np.concatenate(
            [simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]]), axis=1), axis=0)
        L = np.linalg.norm(pts[edges[:, 1]] - pts[edges[:, 0]], axis=1)
        mid = 0.5 * (pts[edges[:, 0]] + pts[edges[:, 1]])
        allow = _size_field(mid, h, foci, growth)
        bad = L > allow
        if not bad.any():
            break
        newpts = mid[bad]
        on_b = (edges[bad] < nfix).all(axis=1)
        nb = newpts[on_b]
        if len(nb):
            nb = domain.project_to_boundary(nb)
        pts = np.vstack([fixed, nb, pts[nfix:], newpts[~on_b]])
        fixed = np.vstack([fixed, nb])
        nfix = len(fixed)
        if len(pts) > max_vertices:
            raise MeshBudgetExceeded(f"{len(pts)} vertices > cap {max_vertices}")
        tri = None

    if tri is None:
        tri = Delaunay(pts)
    return _finalize_mesh(domain, pts, tri, h, foci, growth)


def _finalize_mesh(domain, pts, tri, h, foci, growth):
    simp = np.asarray(tri.simplices).copy()
    p0, p1, p2 = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    det = (p1 - p0)[:, 0] * (p2 - p0)[:, 1] - (p1 - p0)[:, 1] * (p2 - p0)[:, 0]
    flip = det < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]

    hull = np.asarray(tri.convex_hull)
    chain = _order_boundary_chain(pts, hull)
    normals = _edge_outward_normals(domain, pts, chain)
    isb = np.zeros(len(pts), dtype=bool)
    isb[chain.ravel()] = True
    return Mesh(vertices=pts, triangles=simp.astype(np.int64),
                boundary_edges=chain.astype(np.int64),
                boundary_normals=normals, is_boundary=isb,
                h=h, foci=foci, growth=growth)


def _order_boundary_chain(pts, hull):
    """Order hull edges into a single CCW chain."""
    nxt = {int(a): int(b) for a, b in hull}
    # hull edges from scipy are not consistently oriented; rebuild orientation
    adj = {}
    for a, b in hull:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    start = int(hull[0, 0])
    chain_v = [start]
    prev = None
    cur = start
    for _ in range(len(hull)):
        nbrs = adj[cur]
        nx = nbrs[0] if nbrs[0] != prev else nbrs[1]
        chain_v.append(nx)
        prev, cur = cur, nx
        if cur == start:
            break
    chain_v = chain_v[:-1]
    edges = np.array([[chain_v[i], chain_v[(i + 1) % len(chain_v)]]
                      for i in range(len(chain_v))], dtype=np.int64)
    # orient CCW: signed area of the polygon must be positive
    poly = pts[edges[:, 0]]
    area2 = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area2 < 0:
        edges = edges[::-1, ::-1].copy()
    return edges


def _edge_outward_normals(domain, pts, chain):
    e = pts[chain[:, 1]] - pts[chain[:, 0]]
    n = np.column_stack([e[:, 1], -e[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    mid = 0.5 * (pts[chain[:, 0]] + pts[chain[:, 1]])
    if domain is not None:
        ref = -domain.grad_rho_at(mid)
    else:
        ref = mid - pts.mean(axis=0)
    sgn = np.sign((n * ref).sum(axis=1))
    sgn[sgn == 0] = 1.0
    return n * sgn[:, None]


# ----------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class BoundaryQuadrature:
    """Gauss rule on the boundary polygon: aligned points/weights/normals."""

    points: np.ndarray       # (nq, 2)
    weights: np.ndarray      # (nq,)
    normals: np.ndarray      # (nq, 2)
    edge_index: np.ndarray   # (nq,) int, owning boundary edge
    order: int


def boundary_quadrature(mesh: Mesh, order: int) -> BoundaryQuadrature:
    """Per-edge Gauss rule; the weights sum to the polygonal perimeter."""
    if not (1 <= int(order) <= 5):
        raise ValueError("order must be in 1..5")
    gq, gw = np.polynomial.legendre.leggauss(int(order))
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    elen = np.linalg.norm(b - a, axis=1)
    points = (mid[:, None, :] + gq[None, :, None] * half[:, None, :]).reshape(-1, 2)
    weights = (0.5 * gw[None, :] * elen[:, None]).ravel()
    normals = np.repeat(mesh.boundary_normals, len(gq), axis=0)
    edge_index = np.repeat(np.arange(len(elen)), len(gq))
    return BoundaryQuadrature(points=points, weights=weights, normals=normals,
                              edge_index=edge_index, order=int(order))


# ------------------------------------------------------------------ mesh i/o

def write_mesh(mesh: Mesh, path):
    """Plain-text dump: header 'd nv nt nbe', vertices, triangles, boundary edges."""
    with open(path, "w") as f:
        f.write(f"2 {mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
        for a, b in mesh.boundary_edges:
            f.write(f"{a} {b}\n")


def read_mesh(path, domain: Optional[Domain] = None) -> Mesh:
    """Read the plain-text format back; normals are recomputed from geometry."""
    with open(path) as f:
        d, nv, nt, nbe = (int(tok) for tok in f.readline().split())
        if d != 2:
            raise ValueError(f"only 2-D meshes supported, got d={d}")
        verts = np.array([[float(t) for t in f.readline().split()] for _ in range(nv)])
        tris = np.array([[int(t) for t in f.readline().split()] for _ in range(nt)],
                        dtype=np.int64)
        bedges = np.array([[int(t) for t in f.readline().split()] for _ in range(nbe)],
                          dtype=np.int64)
    normals = _edge_outward_normals(domain, verts, bedges)
    isb = np.zeros(nv, dtype=bool)
    isb[bedges.ravel()] = True
    # estimate nominal h from the longest edge
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    e = np.unique(e, axis=0)
    hmax = float(np.linalg.norm(verts[e[:, 1]] - verts[e[:, 0]], axis=1).max())
    return Mesh(vertices=verts, triangles=tris, boundary_edges=bedges,
                boundary_normals=normals, is_boundary=isb, h=hmax, foci=None)
