"""Exception taxonomy shared by all adsmax modules.

Two broad families matter for the CLI exit-code contract:

* :class:`ConfigError` — bad user input (CLI exit code 2),
* :class:`NumericalError` — a computation could not be completed or a
  precondition failed at run time (CLI exit code 3).

Negative *findings* (e.g. an energy minimization running off to the
boundary of the coordinate chart) are not exceptions; they are returned
as verdict values.
"""


class AdsmaxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AdsmaxError):
    """Invalid configuration or user input."""


class NumericalError(AdsmaxError):
    """A numerical operation failed or a runtime precondition was violated."""


# --- hyperbolic-plane core -------------------------------------------------

class NotHyperbolic(NumericalError):
    """Axis requested for an element that is not hyperbolic."""


class DegenerateInput(NumericalError):
    """Degenerate geometric input (e.g. geodesic through a single point)."""


# --- surface groups and representations ------------------------------------

class BadTopology(ConfigError):
    """Surface data with non-negative Euler characteristic."""


class UnknownGenerator(ConfigError):
    """A word uses a symbol that is not a declared generator."""


class BadFNData(ConfigError):
    """Invalid Fenchel-Nielsen data (non-positive length, unsupported chart)."""


class DepthTooSmall(NumericalError):
    """Dirichlet polygon did not stabilize at the requested word-ball depth."""


class ReductionFailed(NumericalError):
    """Fundamental-domain reduction hit its iteration cap."""


class SurfaceMismatch(ConfigError):
    """Two representations of different surfaces were combined."""


class EllipticBoundaryUnsupported(NumericalError):
    """Euler-number report refused: elliptic boundary holonomy present."""


class UnsupportedTopology(ConfigError):
    """Operation implemented only for a restricted family of surfaces."""


# --- meshing and harmonic maps ----------------------------------------------

class MeshQualityFailure(NumericalError):
    """Triangulation quality bound (minimum angle) violated."""


class NotHyperbolicMonodromy(NumericalError):
    """Axis-projection boundary data requested at a non-hyperbolic end."""


class NonConvergence(NumericalError):
    """Iterative solver exhausted its iteration budget."""


class DivergedToBoundary(NumericalError):
    """Harmonic-map iterates escaped toward the ideal boundary."""


class DegenerateFace(NumericalError):
    """A mesh face degenerated during field extraction."""


class OutsideTruncation(NumericalError):
    """Point reduces into a cusp region above the truncation height."""


# --- energy functional -------------------------------------------------------

class LengthMismatch(NumericalError):
    """Peripheral lengths of the two representations do not agree."""


class BasisConstructionFailure(NumericalError):
    """Failed to build the tangent basis for the energy gradient."""


class ScalarSolveFailure(NumericalError):
    """The scalar curvature equation solve did not converge."""


class InadmissibleResidue(NumericalError):
    """Quadratic-differential residue outside the admissible classification."""


# --- domination --------------------------------------------------------------

class NotDiffeomorphic(NumericalError):
    """Composition requested through a map with non-positive Jacobian."""


class InsufficientSamples(NumericalError):
    """Too few sample pairs inside the requested ball."""


# --- AdS geometry -------------------------------------------------------------

class NotContracting(NumericalError):
    """Fixed-point iteration shows persistent expansion."""


class MaxIterations(NumericalError):
    """Fixed-point iteration exhausted its budget with no verdict."""


class NotTimelike(NumericalError):
    """Plane is not timelike; no hyperbolic-plane pair corresponds to it."""


class NotSpacelike(NumericalError):
    """Volume requested for a pair without positive spacelike margin."""
