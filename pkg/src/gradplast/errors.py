"""Exception hierarchy shared by all gradplast modules."""


class GradPlastError(Exception):
    """Base class for every error raised by the package."""


class InvalidSpec(GradPlastError, ValueError):
    """A GridSpec violates its preconditions."""


class GridMismatch(GradPlastError, ValueError):
    """Fields combined in one operation live on different grids or ranks."""


class TopologyUnsupported(GradPlastError, ValueError):
    """The requested operation is not available for this grid topology."""


class InvalidExponent(GradPlastError, ValueError):
    """The gradient exponent r is outside the admissible range r > 6/5."""


class NonSymmetricInput(GradPlastError, ValueError):
    """A density defined on symmetric matrices received a non-symmetric one."""


class GrowthViolation(GradPlastError, ValueError):
    """A density does not satisfy its declared quadratic growth bounds."""


class NoConvergence(GradPlastError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class TauTooLarge(GradPlastError, ValueError):
    """The time step violates the coercivity bound tau < c_R."""


class InvalidN(GradPlastError, ValueError):
    """The number of time steps is too small."""


class ConfigMismatch(GradPlastError, ValueError):
    """A certificate was requested outside the regime where it holds."""


class IncompleteTrajectory(GradPlastError, ValueError):
    """An audit received a trajectory that stopped before the horizon."""


class LengthMismatch(GradPlastError, ValueError):
    """Sequences that must be aligned have different lengths."""


class SnapshotFormatError(GradPlastError, ValueError):
    """A field snapshot file is truncated or has a bad header."""


class ConfigError(GradPlastError, ValueError):
    """A scenario file is malformed or inconsistent."""
