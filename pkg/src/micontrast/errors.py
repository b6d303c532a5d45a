"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with each other or with the model."""


class StateError(RuntimeError):
    """A cached forward pass is missing or no longer matches the model."""


class SamplerError(RuntimeError):
    """A sampler broke its contract (e.g. produced a non-positive value)."""
