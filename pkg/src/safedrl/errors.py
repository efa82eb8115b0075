class ConfigurationError(ValueError):
    """Invalid configuration, sampling range, or network layout."""


class DynamicsError(RuntimeError):
    """The traffic simulation reached a physically inconsistent state."""


class MalformedObservationError(ValueError):
    """An observation is missing entries the safety layer depends on."""


class InvariantViolation(RuntimeError):
    """A hard invariant (e.g. no collision while shielded) was violated."""
