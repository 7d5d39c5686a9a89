import numpy as np
import pytest
from scipy.integrate import trapezoid

from pcalderon import (boundary_frame, eval_oscillating_datum, half_space_solution,
                       make_datum, oscillating_boundary_data, oscillator_potential,
                       p_laplace_residual, scaling_constant, smoothstep_cutoff,
                       solve_profile)
from pcalderon.errors import DegeneratePhasePoint
from pcalderon.wolff import (_solve_profile_from, indicator_cutoff,
                             write_profile_csv)


def test_potential_examples():
    assert oscillator_potential(0.7, -0.3, 2.0) == pytest.approx(1.0)
    assert oscillator_potential(1.0, 0.0, 3.0) == pytest.approx(2.0)
    assert oscillator_potential(0.0, 1.0, 3.0) == pytest.approx(1.5)
    with pytest.raises(DegeneratePhasePoint):
        oscillator_potential(0.0, 0.0, 3.0)


def test_profile_p2_closed_form(profile2):
    assert profile2.period == pytest.approx(2 * np.pi, abs=1e-6)
    assert profile2.energy_mean == pytest.approx(1.0, abs=1e-6)
    err = np.abs(profile2.a(profile2.ts) - np.cos(profile2.ts)).max()
    assert err <= 1e-6


def test_profile_self_consistency():
    # integrating at tol/10 reproduces period and energy mean
    a = solve_profile(4.0, 1e-8)
    b = solve_profile(4.0, 1e-9)
    assert a.period == pytest.approx(b.period, abs=1e-6)
    assert a.energy_mean == pytest.approx(b.energy_mean, abs=1e-6)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_profile_invariants(p):
    prof = solve_profile(p)
    assert prof.closure_defect <= 1e-8
    mean = trapezoid(prof.a_samples, prof.ts)
    assert abs(mean) <= 1e-8 * prof.period


def test_profile_scaling_homogeneity():
    base = solve_profile(3.0)
    scaled = _solve_profile_from(3.0, 1e-10, (2.0, 0.0))
    assert abs(scaled.period - base.period) <= 1e-8
    err = np.abs(scaled.a(base.ts) - 2.0 * base.a(base.ts)).max()
    assert err <= 1e-7


def test_profile_validation():
    with pytest.raises(ValueError):
        solve_profile(1.0)
    with pytest.raises(ValueError):
        solve_profile(2.0, tol=1e-3)


def test_cutoff_shape(cutoff):
    r = np.linspace(0, 1.5, 301)
    z = cutoff.value(r)
    assert ((0.0 <= z) & (z <= 1.0)).all()
    assert (z[r <= 0.5] == 1.0).all()
    assert (z[r >= 1.0] == 0.0).all()
    assert (np.diff(z) <= 1e-14).all()


def test_cutoff_c3_junctions(cutoff):
    # C^3 matching: the descent polynomial and its first three derivatives
    # vanish against the plateau values at both junctions (exact check),
    # plus a finite-difference sanity bound at the junctions themselves
    import sympy as sp

    s = sp.Symbol("s")
    fall = 1 - s ** 4 * (35 - 84 * s + 70 * s ** 2 - 20 * s ** 3)
    for k in range(4):
        dk = sp.diff(fall, s, k)
        if k == 0:
            assert dk.subs(s, 0) == 1 and dk.subs(s, 1) == 0
        else:
            assert dk.subs(s, 0) == 0 and dk.subs(s, 1) == 0
    step = 1e-4
    for r0 in (0.5, 1.0):
        fd1 = (cutoff.value(r0 + step) - cutoff.value(r0 - step)) / (2 * step)
        assert abs(fd1) <= 1e-6


def test_cutoff_derivative_consistency(cutoff, rng):
    r = rng.uniform(0.05, 1.2, 200)
    step = 1e-6
    fd = (cutoff.value(r + step) - cutoff.value(r - step)) / (2 * step)
    assert cutoff.derivative(r) == pytest.approx(fd, abs=1e-6)


def test_scaling_constant_examples(profile2, profile3, cutoff):
    # idealized indicator cutoff: (K/p) * 2 = 1 at p = 2
    assert scaling_constant(profile2, indicator_cutoff()) == pytest.approx(1.0, abs=1e-6)
    # smoothstep: bounded by the plateau and support widths
    c2 = scaling_constant(profile2, cutoff)
    assert 0.5 < c2 < 1.0
    # Monte-Carlo oracle at p = 3
    rng = np.random.default_rng(7)
    s = rng.uniform(-1, 1, 400_000)
    vals = cutoff.value(np.abs(s)) ** 3
    mc = 2.0 * vals.mean()
    se = 2.0 * vals.std() / np.sqrt(len(s))
    c3 = scaling_constant(profile3, cutoff)
    expected = profile3.energy_mean / 3.0 * mc
    assert abs(c3 - expected) <= 3 * profile3.energy_mean / 3.0 * se


def test_half_space_solution_examples(profile2):
    assert half_space_solution(profile2, (0.0, 0.0)) == pytest.approx(1.0)
    assert half_space_solution(profile2, (profile2.period, 0.0)) == pytest.approx(1.0, abs=1e-8)
    assert half_space_solution(profile2, (0.0, 1.0)) == pytest.approx(np.exp(-1), abs=1e-8)


def test_datum_evaluation(disk, profile2, cutoff):
    frame = boundary_frame(disk, (0.0, -1.0))
    datum = make_datum(frame, 4.0, profile2, cutoff)
    assert datum.N == 16.0
    x0 = np.array([0.0, -1.0])
    assert eval_oscillating_datum(datum, disk, x0) == pytest.approx(1.0)
    # vanishes at the cutoff support edge |x - x0| = 1/M
    edge = x0 + np.array([0.0, 1.0]) / 4.0
    assert eval_oscillating_datum(datum, disk, edge) == pytest.approx(0.0, abs=1e-12)
    # on the boundary the value is the profile times the cutoff
    th = -np.pi / 2 + 0.05
    x = np.array([np.cos(th), np.sin(th)])
    y1 = (frame.rot @ (x - x0))[0]
    expected = profile2.a(datum.N * y1) * cutoff.value(datum.M * np.linalg.norm(x - x0))
    assert eval_oscillating_datum(datum, disk, x) == pytest.approx(expected, abs=1e-12)
    assert abs(eval_oscillating_datum(datum, disk, x)) <= np.abs(profile2.a_samples).max() + 1e-12


def test_datum_validation(disk, profile2, cutoff):
    frame = boundary_frame(disk, (0.0, -1.0))
    with pytest.raises(ValueError):
        make_datum(frame, 4.0, profile2, cutoff, N=8.0)   # N < M^2
    with pytest.raises(ValueError):
        make_datum(frame, 0.5, profile2, cutoff)


def test_datum_tangential_derivative(disk, profile2, cutoff):
    frame = boundary_frame(disk, (0.0, -1.0))
    datum = make_datum(frame, 3.0, profile2, cutoff)
    v = oscillating_boundary_data(datum, disk)
    th = -np.pi / 2 + np.linspace(-0.3, 0.3, 7)
    pts = np.column_stack([np.cos(th), np.sin(th)])
    tans = np.column_stack([-np.sin(th), np.cos(th)])
    exact = v.tangential_derivative(pts, tans)
    step = 1e-6
    plus = disk.project_to_boundary(pts + step * tans)
    minus = disk.project_to_boundary(pts - step * tans)
    fd = (v(plus) - v(minus)) / np.linalg.norm(plus - minus, axis=1)
    assert exact == pytest.approx(fd, abs=1e-5 * np.abs(exact).max())


@pytest.mark.parametrize("p,tol", [(2.0, 1e-5), (1.5, 1e-3)])
def test_p_laplace_residual_small(p, tol):
    prof = solve_profile(p)
    res = p_laplace_residual(prof, (0.3, 0.5), 1e-3)
    assert abs(res) <= tol


@pytest.mark.parametrize("p", [3.0, 1.5])
def test_p_laplace_residual_order(p):
    prof = solve_profile(p)
    r1 = p_laplace_residual(prof, (0.3, 0.5), 2e-3)
    r2 = p_laplace_residual(prof, (0.3, 0.5), 1e-3)
    assert abs(r1 / r2) == pytest.approx(4.0, rel=0.45)


def test_profile_csv(tmp_path, profile2, cutoff):
    path = tmp_path / "profile.csv"
    write_profile_csv(profile2, path, cutoff)
    text = path.read_text().splitlines()
    assert text[0].startswith("# p=2.0")
    assert any(line.startswith("# c_p=") for line in text[:4])
    header_idx = next(i for i, l in enumerate(text) if l == "t,a,ap")
    first = text[header_idx + 1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[1]) == pytest.approx(1.0)
