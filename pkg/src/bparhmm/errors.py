"""Exception hierarchy shared by every stage of the pipeline."""


class BPARHMMError(Exception):
    """Base class for all package errors."""


class ValidationError(BPARHMMError, ValueError):
    """Input violates a documented precondition."""


class SchemaMismatchError(ValidationError):
    def __init__(self, path, missing=(), extra=()):
        self.path = str(path)
        self.missing = list(missing)
        self.extra = list(extra)
        parts = []
        if self.missing:
            parts.append("missing channels " + ", ".join(map(repr, self.missing)))
        if self.extra:
            parts.append("unexpected channels " + ", ".join(map(repr, self.extra)))
        super().__init__(f"{self.path}: schema mismatch ({'; '.join(parts)})")


class ParseError(ValidationError):
    def __init__(self, path, row, column, cell):
        self.path = str(path)
        self.row = row
        self.column = column
        super().__init__(
            f"{self.path}: non-numeric value {cell!r} at row {row}, column {column!r}"
        )


class ConflictError(ValidationError):
    """Two inputs claim the same identifier."""


class UnknownReferenceError(ValidationError):
    """A table row points at an identifier that does not exist."""


class InsufficientDataError(ValidationError):
    """Series too short for the requested autoregressive lag."""


class NumericDomainError(BPARHMMError, ArithmeticError):
    """Matrix argument outside its numeric domain (e.g. covariance not SPD)."""


class DegenerateInputError(ValidationError):
    pass


class UntestableError(ValidationError):
    """Target variable carries no information (constant)."""


class FormatError(ValidationError):
    """Serialized artifact has an unknown or missing format version."""
