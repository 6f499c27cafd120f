"""Exception types with stable error codes used across the package and the CLI."""

from __future__ import annotations

__all__ = [
    "CtjmdpError",
    "ModelError",
    "PolicyError",
    "SolverError",
    "CostError",
    "GridMismatchError",
]


class CtjmdpError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ModelError(CtjmdpError):
    """Model validation failure (ROW_SUM, NEG_RATE, EMPTY_ACTIONS, UNKNOWN_ID, BAD_DIST)."""


class PolicyError(CtjmdpError):
    """Policy contract violation (BAD_SUPPORT, UNSUPPORTED_ACTION, ZERO_EXIT)."""


class SolverError(CtjmdpError):
    """Forward-solver contract violation (STEP_TOO_COARSE, GRID_MISMATCH)."""


class CostError(CtjmdpError):
    """Cost-criterion failure (UNDEFINED_VALUE, ASSUMPTION_VIOLATION)."""


class GridMismatchError(SolverError):
    def __init__(self, message: str):
        super().__init__("GRID_MISMATCH", message)
