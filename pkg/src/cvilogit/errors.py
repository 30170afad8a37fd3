"""Exception types raised across the package."""


class StructuralError(ValueError):
    """Inputs are inconsistent with each other (shapes, layouts, schemas)."""


class DomainError(ValueError):
    """A parameter lies outside its admissible domain."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value or a factorization failed."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class DatasetError(ValueError):
    """A choice dataset violates its invariants.

    ``rows`` holds the offending data-row numbers (1-based, header excluded)
    when the problem was detected while reading a file.
    """

    def __init__(self, message, rows=()):
        rows = tuple(int(r) for r in rows)
        if rows:
            message = f"{message} (rows {', '.join(map(str, rows))})"
        super().__init__(message)
        self.rows = rows
