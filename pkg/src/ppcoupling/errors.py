"""Exception types shared across the package."""


class DomainError(ValueError):
    """Invalid inputs: mismatched spaces, bad weights, zero-measure regions."""


class UnsupportedModelError(DomainError):
    """The requested closed form is not available for this model family."""


class InadmissiblePathError(DomainError):
    """A path visits a state of zero kernel density; extraction cannot proceed."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"kernel density vanishes at path index {index}")


class SearchFailureError(RuntimeError):
    """A doubling search exhausted its budget; carries the search trace."""

    def __init__(self, message: str, trace=None):
        self.trace = trace or []
        super().__init__(message)


class InsufficientReplicasError(RuntimeError):
    """No conditioning-event successes within the replica budget."""


class EngineError(RuntimeError):
    """Internal inconsistency in the point-process engine (indicates a bug)."""
