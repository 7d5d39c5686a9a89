"""Named conductivities and boundary data used by the harness and tests."""

import numpy as np

from .fields import BoundaryData, constant_boundary_data
from .forward import Conductivity


def constant_conductivity(value: float = 1.0) -> Conductivity:
    v = float(value)
    return Conductivity(
        name="constant",
        gamma=lambda pts: np.full(len(np.atleast_2d(pts)), v),
        grad_gamma=lambda pts: np.zeros_like(np.atleast_2d(pts)),
        gamma0=v)


def affine_conductivity(cx: float = 0.3, cy: float = 0.2, c0: float = 1.0,
                        name: str = "affine") -> Conductivity:
    # keep gamma >= gamma0 > 0 on the closed unit disk
    gamma0 = c0 - np.hypot(cx, cy)
    if gamma0 <= 0:
        raise ValueError("affine preset not positive on the unit disk")

    def gam(pts):
        pts = np.atleast_2d(pts)
        return c0 + cx * pts[:, 0] + cy * pts[:, 1]

    def grad(pts):
        pts = np.atleast_2d(pts)
        return np.tile(np.array([cx, cy]), (len(pts), 1))

    return Conductivity(name=name, gamma=gam, grad_gamma=grad, gamma0=gamma0)


def manufactured_conductivity(p: float) -> Conductivity:
    """Weight exp((p-1) x1); paired with u = exp(-x1) the flux is constant,
    so the pair solves the equation exactly for every p."""
    a = float(p) - 1.0

    def gam(pts):
        pts = np.atleast_2d(pts)
        return np.exp(a * pts[:, 0])

    def grad(pts):
        pts = np.atleast_2d(pts)
        g = np.zeros_like(pts)
        g[:, 0] = a * np.exp(a * pts[:, 0])
        return g

    return Conductivity(name="manufactured", gamma=gam, grad_gamma=grad,
                        gamma0=float(np.exp(-abs(a))))


CONDUCTIVITY_PRESETS = {
    "constant": lambda p: constant_conductivity(),
    "affine": lambda p: affine_conductivity(),
    "affine_plus": lambda p: affine_conductivity(0.3, 0.0, name="affine_plus"),
    "affine_minus": lambda p: affine_conductivity(-0.3, 0.0, name="affine_minus"),
    "manufactured": manufactured_conductivity,
}


def conductivity_preset(name: str, p: float) -> Conductivity:
    try:
        factory = CONDUCTIVITY_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown conductivity preset {name!r}") from None
    return factory(p)


# ------------------------------------------------------------- boundary data

def manufactured_data() -> BoundaryData:
    """Trace of exp(-x1), the exact solution paired with the manufactured
    conductivity."""

    def fn(pts):
        return np.exp(-np.atleast_2d(pts)[:, 0])

    def dtan(pts, tangents):
        pts = np.atleast_2d(pts)
        tangents = np.atleast_2d(tangents)
        return -np.exp(-pts[:, 0]) * tangents[:, 0]

    return BoundaryData(fn=fn, key="manufactured:exp(-x1)",
                        tangential_derivative=dtan)


def linear_data() -> BoundaryData:
    return BoundaryData(fn=lambda pts: np.atleast_2d(pts)[:, 0], key="linear:x1",
                        tangential_derivative=lambda pts, tans: np.atleast_2d(tans)[:, 0])


def harmonic_quad_data() -> BoundaryData:
    def fn(pts):
        pts = np.atleast_2d(pts)
        return pts[:, 0] ** 2 - pts[:, 1] ** 2

    def dtan(pts, tangents):
        pts = np.atleast_2d(pts)
        tangents = np.atleast_2d(tangents)
        return 2.0 * (pts[:, 0] * tangents[:, 0] - pts[:, 1] * tangents[:, 1])

    return BoundaryData(fn=fn, key="harmonic:x1^2-x2^2", tangential_derivative=dtan)


BOUNDARY_PRESETS = {
    "manufactured": lambda cfg=None: manufactured_data(),
    "linear": lambda cfg=None: linear_data(),
    "harmonic_quad": lambda cfg=None: harmonic_quad_data(),
    "constant": lambda cfg=None: constant_boundary_data(
        1.0 if cfg is None else float(cfg)),
}


def boundary_preset(name: str, arg=None) -> BoundaryData:
    try:
        factory = BOUNDARY_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown boundary data preset {name!r}") from None
    return factory(arg)
