"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition (shape, range, finiteness)."""


class InsufficientDataError(ValidationError):
    """Too few samples to fit the requested model."""


class CapacityError(ValueError):
    """Assembled sequence exceeds the model's maximum length."""


class SamplingError(RuntimeError):
    """No token can be sampled (every logit masked)."""


class UndefinedResultError(ValueError):
    """Metric is undefined for the given inputs (e.g. constant series)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


class ScoringError(RuntimeError):
    """Every candidate failed to score."""


class ProviderError(RuntimeError):
    """An external provider (transcriber, embedder, ...) failed."""
