"""Exception types shared across the engine.

The CLI maps these onto exit codes: DataError -> 2 (bad inputs),
InvariantError -> 3 (internal state violated a contract). Usage errors
are handled by the argument parser and exit with 1.
"""


class ToolGraphError(Exception):
    """Base class for all engine errors."""


class DataError(ToolGraphError):
    """Invalid or malformed input data (files, ids, shapes)."""


class InvariantError(ToolGraphError):
    """An internal invariant was violated; indicates a bug, not bad input."""
