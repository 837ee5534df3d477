"""Exception types shared across the engine."""


class QasirError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(QasirError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(QasirError, ValueError):
    """Input is structurally valid but numerically degenerate (e.g. zero vector)."""


class FormatError(QasirError, ValueError):
    """A serialized artifact is malformed. Carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(QasirError, ValueError):
    """An unknown backbone, dataset, or inconsistent configuration."""
