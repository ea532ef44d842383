"""Exception types shared across the back-end."""


class DataError(ValueError):
    """Malformed file, failed validation or unresolved identifier."""

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class NumericalError(ArithmeticError):
    """A numerical routine failed (loss of definiteness, singular scatter)."""
