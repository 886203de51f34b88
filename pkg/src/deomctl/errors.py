"""Exception hierarchy shared by the solver modules."""


class DeomError(Exception):
    """Base class for all toolkit errors."""


class QuadratureError(DeomError):
    """Adaptive quadrature did not reach the requested tolerance."""


class NonpositiveMomentError(DeomError):
    """A spectral moment that must be positive came out nonpositive."""


class ExpansionAccuracyError(DeomError):
    """The exponential expansion could not reach the residual target.

    ``residual`` holds the best relative residual that was achieved.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class CapacityError(DeomError):
    """Hierarchy index count exceeds the configured budget."""


class DimensionError(DeomError):
    """Operands have incompatible system or hierarchy dimensions."""


class PropagationError(DeomError):
    """Non-finite values appeared during time stepping."""


class StationarityError(DeomError):
    """The initial DDO set is not a field-free steady state."""


class ConvergenceError(DeomError):
    """An iterative linear-algebra routine hit its iteration cap."""


class DegenerateConstraintError(DeomError):
    """Endpoint constraints do not single out a unique field direction."""


class DegenerateTargetError(DeomError):
    """The response matrix vanishes, so no field can reach the target."""


class ConfigError(DeomError):
    """Invalid or inconsistent experiment configuration."""
