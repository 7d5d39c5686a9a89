"""Boundary data wrappers.

A BoundaryData bundles a point-evaluable scalar field with a stable identity
key (used for solution caching) and optional extras: a closed-form
tangential derivative along the boundary and metadata describing
oscillation/support scales for probe scheduling.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class BoundaryData:
    fn: Callable[[np.ndarray], np.ndarray]
    key: str
    tangential_derivative: Optional[Callable] = None   # (points, tangents) -> values
    meta: dict = field(default_factory=dict)

    def __call__(self, points):
        return np.asarray(self.fn(np.atleast_2d(np.asarray(points, dtype=float))))


def as_boundary_data(v, key=None) -> BoundaryData:
    """Coerce a callable into BoundaryData; identity of the object is the
    default cache key."""
    if isinstance(v, BoundaryData):
        return v
    if not callable(v):
        raise TypeError("boundary data must be callable or BoundaryData")
    return BoundaryData(fn=v, key=key if key is not None else f"callable-{id(v):x}")


def constant_boundary_data(c: float) -> BoundaryData:
    return BoundaryData(fn=lambda pts: np.full(len(np.atleast_2d(pts)), float(c)),
                        key=f"const:{float(c)!r}",
                        tangential_derivative=lambda pts, tans: np.zeros(len(np.atleast_2d(pts))))
