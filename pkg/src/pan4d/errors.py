"""Exception hierarchy shared by all pan4d modules.

The CLI maps these onto exit codes: ValidationError -> 1, FormatError and
OSError -> 2, InvariantError (and anything unexpected) -> 3.
"""


class Pan4DError(Exception):
    """Base class for all pan4d errors."""


class ValidationError(Pan4DError):
    """Bad configuration or arguments that violate a documented precondition."""


class FormatError(Pan4DError):
    """A file on disk does not conform to its declared binary/text format."""


class InvariantError(Pan4DError):
    """An internal invariant was violated; indicates a bug, not bad input."""
