"""Exception types shared across the package."""


class OptoNoiseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(OptoNoiseError):
    """Invalid input: malformed network, profile, config, or argument.

    ``layer`` carries the offending layer index when one is known.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class NonlinearActivationError(OptoNoiseError):
    """A linear-only operation was applied to a nonlinear layer."""

    def __init__(self, layer):
        super().__init__(
            f"layer {layer} has a nonlinear activation; this operation "
            "requires identity or diagonal-linear activations throughout"
        )
        self.layer = layer


class ConvergenceError(OptoNoiseError):
    """An iterative solver failed to converge within its budget.

    ``last`` is the final iterate, ``residual`` the last step or residual
    norm, so callers can inspect how close the solver got.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class FeasibilityError(OptoNoiseError):
    """The requested deviation/confidence targets are not jointly feasible."""


class ContractionError(OptoNoiseError):
    """A series or fixed-point routine was called outside its convergence
    hypothesis and the spectral override was not enabled."""


class IdxFormatError(OptoNoiseError):
    """Malformed IDX file; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
