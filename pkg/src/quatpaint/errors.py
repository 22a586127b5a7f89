"""Shared exception types."""


class QuatpaintError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(QuatpaintError, ValueError):
    """Two operands have incompatible shapes."""

    def __init__(self, what: str, a, b):
        super().__init__(f"{what}: shape {tuple(a)} vs {tuple(b)}")


class GeometryError(QuatpaintError, ValueError):
    """Layer or image geometry is invalid (e.g. non-positive output extent)."""


class DivergenceError(QuatpaintError, RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
