"""Exception types raised across the package."""


class PoromixError(Exception):
    """Base class for all solver errors."""


class NonPSD(PoromixError):
    """A matrix required to be (semi)definite is not."""


class UnsupportedEssentialData(PoromixError):
    """Non-zero traction or normal-flux data; the required lifting is not implemented."""


class InvalidExtent(PoromixError):
    """Degenerate rectangle passed to the mesh generator."""


class EmptyEssentialBoundary(PoromixError):
    """A boundary classification left Gamma_d or Gamma_p with zero measure."""


class UnsupportedDegree(PoromixError):
    """Quadrature degree or polynomial degree outside the supported range."""


class OutOfElement(PoromixError):
    """Evaluation point outside the requested cell."""


class DegenerateCell(PoromixError):
    """Affine cell map with vanishing Jacobian determinant."""


class SingularLocalMass(PoromixError):
    """Projection mass matrix is singular (corrupt mesh or element tables)."""


class AssemblyOverflow(PoromixError):
    """A local-to-global index fell outside the unknown vector."""


class NonFiniteEntry(PoromixError):
    """A matrix or load entry evaluated to NaN or infinity."""


class SingularSystem(PoromixError):
    """The system matrix M/tau + A is singular."""


class SolveFailure(PoromixError):
    """A linear solve failed its residual check."""


class UnknownScenario(PoromixError):
    """Scenario name not in the catalog."""


class DegenerateRatio(PoromixError):
    """EOC slope requested between rows with equal mesh size."""


class IoError(PoromixError):
    """An output file could not be written."""


class ParseError(PoromixError):
    """Config file is not valid TOML or has a malformed value."""


class UnknownKey(PoromixError):
    """Config file or override contains a key the solver does not define."""


class InvalidValue(PoromixError):
    """Config value outside the supported range."""
