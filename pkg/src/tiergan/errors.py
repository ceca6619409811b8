"""Exception hierarchy shared by all modules."""


class TierGANError(Exception):
    pass


class InvalidParameterError(TierGANError, ValueError):
    pass


class InvalidScheduleError(InvalidParameterError):
    """Bisection could not bracket the schedule root."""


class DegenerateScheduleError(InvalidParameterError):
    pass


class FormatError(TierGANError, ValueError):
    """Array shape, channel count or value domain does not match."""


class CapabilityError(TierGANError, RuntimeError):
    """A backend lacks a required feature (gradients, pretrained weights)."""


class OptimizationError(TierGANError, RuntimeError):
    """Training or inversion produced a non-finite loss."""

    def __init__(self, message, iteration=None, last_finite=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_finite = last_finite or {}
