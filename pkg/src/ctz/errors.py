"""Exception types raised by the ctz modules."""


class CTZError(ValueError):
    """Base class for all ctz errors."""


class DepthExceededError(CTZError):
    pass


class InsufficientBlocksError(CTZError):
    pass


class UnseenContextError(CTZError):
    pass


class SequenceTooShortError(CTZError):
    pass


class ParameterError(CTZError):
    """Parameters outside a module's preconditions (infeasible configuration)."""


class InsufficientTrainingError(CTZError):
    pass


class RadiusTooLargeError(CTZError):
    pass


class KraftViolationError(CTZError):
    pass


class FormatError(CTZError):
    """Bad magic, unknown version or malformed header."""


class DecodeError(CTZError):
    """Corrupt or truncated payload.

    ``position`` is the byte offset (or symbol index, for payload errors)
    at which the inconsistency was detected.
    """

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)
        self.position = position
