"""Exception hierarchy for the package.

Every numerical-failure mode has its own class so callers can react per
stage; all inherit from PCalderonError.
"""


class PCalderonError(Exception):
    """Base class for all package errors."""


# geometry
class NotOnBoundary(PCalderonError):
    """Point is not on the zero level set of the defining function."""


class DegenerateNormal(PCalderonError):
    """|grad rho| too small at a boundary point."""


class MeshBudgetExceeded(PCalderonError):
    """Requested mesh would exceed the configured vertex cap."""


# wolff
class DegeneratePhasePoint(PCalderonError):
    """(a, a') too close to the origin of the phase plane."""


class PeriodNotFound(PCalderonError):
    """No return event detected within the integration horizon."""


class ToleranceNotMet(PCalderonError):
    """Periodic closure defect exceeds the accepted bound."""


class DegenerateGradient(PCalderonError):
    """Gradient magnitude below cutoff where a formula is singular."""


# forward
class NonConvergence(PCalderonError):
    """Newton iteration cap hit; carries the best iterate found."""

    def __init__(self, message, solution=None, residual=None):
        super().__init__(message)
        self.solution = solution
        self.residual = residual


class MeshTooCoarse(PCalderonError):
    """Boundary data oscillation unresolved by the mesh."""


class SingularSystem(PCalderonError):
    """Linear system factorization failed."""


class PointOutsideMesh(PCalderonError):
    """Query point not contained in any mesh triangle."""


# dnmap
class ProbeUnresolved(PCalderonError):
    """Probe radius below the resolvable scale of the mesh."""


class NonConvergentProbe(PCalderonError):
    """Successive probe values disagree too much to extrapolate."""


# rellich
class SamplingMismatch(PCalderonError):
    """Sampled fields do not align with the quadrature points."""
