import numpy as np
import pytest

from pcalderon import (boundary_frame, boundary_quadrature, build_disk_domain,
                       flatten_map, generate_mesh, read_mesh, write_mesh)
from pcalderon.errors import DegenerateNormal, MeshBudgetExceeded, NotOnBoundary
from pcalderon.geometry import BoundaryFrame


def test_disk_defining_function(disk):
    assert disk.rho_at((0.0, 0.0)) == pytest.approx(0.5)
    assert disk.rho_at((1.0, 0.0)) == pytest.approx(0.0, abs=1e-15)
    assert np.linalg.norm(disk.grad_rho_at((0.0, 1.0))) == pytest.approx(1.0)
    fr = boundary_frame(disk, (1.0, 0.0))
    assert fr.nu == pytest.approx([1.0, 0.0])


def test_domain_invariants(disk, rng):
    pts = rng.uniform(-1, 1, size=(200, 2))
    inside = pts[np.linalg.norm(pts, axis=1) < 0.999]
    assert (disk.rho_at(inside) > 0).all()
    th = rng.uniform(0, 2 * np.pi, 64)
    bd = np.column_stack([np.cos(th), np.sin(th)])
    bd = disk.project_to_boundary(bd)
    assert np.abs(disk.rho_at(bd)).max() <= 1e-12
    assert (np.linalg.norm(disk.grad_rho_at(bd), axis=1) >= 0.5).all()


def test_boundary_frame_examples(disk):
    fr = boundary_frame(disk, (0.0, -1.0))
    assert fr.nu == pytest.approx([0.0, -1.0])
    assert fr.rot == pytest.approx(np.eye(2), abs=1e-12)

    fr = boundary_frame(disk, (1.0, 0.0))
    assert fr.nu == pytest.approx([1.0, 0.0])
    assert fr.rot @ fr.nu == pytest.approx([0.0, -1.0], abs=1e-12)

    fr = boundary_frame(disk, (0.0, 1.0))
    assert fr.rot @ fr.nu == pytest.approx([0.0, -1.0], abs=1e-12)


def test_boundary_frame_properties(disk, rng):
    for th in rng.uniform(0, 2 * np.pi, 16):
        x0 = np.array([np.cos(th), np.sin(th)])
        fr = boundary_frame(disk, disk.project_to_boundary(x0))
        assert np.linalg.norm(fr.nu) == pytest.approx(1.0, abs=1e-12)
        assert fr.rot.T @ fr.rot == pytest.approx(np.eye(2), abs=1e-12)
        x = rng.uniform(-1, 1, 2)
        assert fr.from_frame(fr.to_frame(x)) == pytest.approx(x, abs=1e-12)


def test_boundary_frame_errors(disk):
    from pcalderon.geometry import Domain

    with pytest.raises(NotOnBoundary):
        boundary_frame(disk, (0.5, 0.0))
    degenerate = Domain(dim=2, rho=disk.rho,
                        grad_rho=lambda pts: -0.01 * np.atleast_2d(pts),
                        bbox=disk.bbox, name="degenerate")
    with pytest.raises(DegenerateNormal):
        boundary_frame(degenerate, (1.0, 0.0))


def test_flatten_map_examples(disk):
    fr = boundary_frame(disk, (0.0, -1.0))
    assert flatten_map(disk, fr, (0.0, -1.0)) == pytest.approx([0.0, 0.0], abs=1e-14)
    f = flatten_map(disk, fr, (0.0, -0.9))
    assert f == pytest.approx([0.0, 0.095])
    near = disk.project_to_boundary((0.1, -0.99))
    assert abs(flatten_map(disk, fr, near)[1]) <= 1e-10


def test_flatten_map_jacobian_identity(disk):
    # finite-difference Jacobian in frame coordinates is the identity at x0
    fr = boundary_frame(disk, (1.0, 0.0))
    step = 1e-4
    jac = np.empty((2, 2))
    for j, e in enumerate(np.eye(2)):
        fp = flatten_map(disk, fr, fr.from_frame(step * e))
        fm = flatten_map(disk, fr, fr.from_frame(-step * e))
        jac[:, j] = (fp - fm) / (2 * step)
    assert jac == pytest.approx(np.eye(2), abs=5e-6)


def _mesh_edges(mesh):
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    return e


def test_mesh_basic_invariants(disk):
    mesh = generate_mesh(disk, 0.2)
    assert (mesh.areas > 0).all()
    # conforming: every edge belongs to 1 (hull) or 2 (interior) triangles
    e = _mesh_edges(mesh)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    hull_edges = set(map(tuple, np.sort(mesh.boundary_edges, axis=1).tolist()))
    once = set(map(tuple, uniq[counts == 1].tolist()))
    assert once == hull_edges
    # boundary vertices on the circle
    bv = mesh.vertices[mesh.is_boundary]
    assert np.abs(np.linalg.norm(bv, axis=1) - 1.0).max() <= 1e-10
    assert np.abs(disk.rho_at(bv)).max() <= 1e-10


def test_mesh_edge_bounds_and_focus(disk):
    mesh = generate_mesh(disk, 0.2, ((1.0, 0.0), 0.02, 0.3))
    e = _mesh_edges(mesh)
    e = np.unique(e, axis=0)
    L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    assert L.max() <= 0.2 + 1e-12
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    near = np.linalg.norm(mid - np.array([1.0, 0.0]), axis=1) < 0.3 - 0.02
    assert L[near].max() <= 0.02 + 1e-12


def test_mesh_grading_ratio(disk):
    # longest-edge ratio of edge-sharing triangles stays below 2
    mesh = generate_mesh(disk, 0.2, ((1.0, 0.0), 0.02, 0.2))
    t = mesh.triangles
    corners = mesh.vertices[t]
    lmax = np.stack([np.linalg.norm(corners[:, i] - corners[:, (i + 1) % 3], axis=1)
                     for i in range(3)]).max(axis=0)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e = np.sort(e, axis=1)
    _, inv = np.unique(e, axis=0, return_inverse=True)
    tri_ids = np.concatenate([np.arange(len(t))] * 3)
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    tri_sorted = tri_ids[order]
    worst = 1.0
    k = 0
    while k < len(inv_sorted) - 1:
        if inv_sorted[k] == inv_sorted[k + 1]:
            a, b = tri_sorted[k], tri_sorted[k + 1]
            r = lmax[a] / lmax[b]
            worst = max(worst, r, 1.0 / r)
            k += 2
        else:
            k += 1
    assert worst <= 2.0


def test_mesh_area_converges(disk):
    mesh = generate_mesh(disk, 0.1)
    # the triangulation covers the boundary polygon exactly
    chain = mesh.boundary_edges
    poly = mesh.vertices[chain[:, 0]]
    poly_area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1)
                             - np.roll(poly[:, 0], -1) * poly[:, 1])
    assert mesh.areas.sum() == pytest.approx(poly_area, rel=1e-12)
    assert abs(mesh.areas.sum() - np.pi) <= 0.02 * np.pi

    # refinement: area and perimeter errors drop at second order
    errs_a, errs_p = [], []
    for h in (0.2, 0.1):
        m = generate_mesh(disk, h)
        errs_a.append(np.pi - m.areas.sum())
        q = boundary_quadrature(m, 1)
        errs_p.append(2 * np.pi - q.weights.sum())
    assert 3.0 <= errs_a[0] / errs_a[1] <= 5.0
    assert 3.0 <= errs_p[0] / errs_p[1] <= 5.0


def test_mesh_budget(disk):
    with pytest.raises(MeshBudgetExceeded):
        generate_mesh(disk, 0.1, max_vertices=50)


def test_boundary_quadrature(disk):
    mesh = generate_mesh(disk, 0.2)
    q3 = boundary_quadrature(mesh, 3)
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    perim = np.linalg.norm(b - a, axis=1).sum()
    assert q3.weights.sum() == pytest.approx(perim, abs=1e-12)
    assert abs(q3.weights.sum() - 2 * np.pi) <= 0.5 * 0.2 ** 2 * 2 * np.pi
    # divergence theorem on a constant field
    assert (q3.weights[:, None] * q3.normals).sum(axis=0) == pytest.approx(
        [0.0, 0.0], abs=1e-12)
    with pytest.raises(ValueError):
        boundary_quadrature(mesh, 0)


def test_boundary_normals_match_level_set(disk):
    h = 0.2
    mesh = generate_mesh(disk, h)
    mid = 0.5 * (mesh.vertices[mesh.boundary_edges[:, 0]]
                 + mesh.vertices[mesh.boundary_edges[:, 1]])
    exact = disk.outward_normal(mid)
    dots = np.clip((exact * mesh.boundary_normals).sum(axis=1), -1, 1)
    assert np.arccos(dots).max() <= 2 * h


def test_mesh_roundtrip(tmp_path, disk):
    mesh = generate_mesh(disk, 0.2, ((1.0, 0.0), 0.05, 0.3))
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    back = read_mesh(path, disk)
    assert back.n_vertices == mesh.n_vertices
    assert np.array_equal(back.triangles, mesh.triangles)
    assert back.vertices == pytest.approx(mesh.vertices, abs=0)
    assert np.array_equal(back.boundary_edges, mesh.boundary_edges)
    assert back.boundary_normals == pytest.approx(mesh.boundary_normals, abs=1e-12)
    assert np.array_equal(back.is_boundary, mesh.is_boundary)
