class DataError(ValueError):
    """Bad or missing input data. CLI exit code 2."""


class EmptyTitle(DataError):
    pass


class EmptyQuery(DataError):
    pass


class InvariantError(RuntimeError):
    """An internal invariant was violated. CLI exit code 3."""
