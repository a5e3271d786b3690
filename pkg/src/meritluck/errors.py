"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MeritLuckError(Exception):
    """Base class for all package errors."""


class DomainError(MeritLuckError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ParameterError(MeritLuckError, ValueError):
    """A model or distribution was constructed with invalid parameters."""


class InvalidPopulationError(MeritLuckError, ValueError):
    pass


class UnsupportedOperationError(MeritLuckError):
    """The operation is undefined for this kind of input (e.g. density of a discrete law)."""


class InversionError(MeritLuckError):
    pass


class DesignError(MeritLuckError):
    pass


class ContractError(MeritLuckError):
    pass


class SingularDesignError(MeritLuckError):
    pass


class DegreesOfFreedomError(MeritLuckError):
    pass


class BinningError(MeritLuckError):
    pass


class DatasetParseError(MeritLuckError):
    """Malformed CSV input. ``row`` is 1-based counting the header as row 1."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        parts = [message]
        if column is not None:
            parts.append(f"column={column!r}")
        if row is not None:
            parts.append(f"row={row}")
        super().__init__("; ".join(parts))
