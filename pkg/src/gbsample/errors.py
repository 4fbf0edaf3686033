"""Exception types shared across the package.

Every error raised by gbsample derives from :class:`GbsampleError`, so
callers (notably the CLI) can distinguish user-facing problems from bugs.
"""

from __future__ import annotations


class GbsampleError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# dataset


class MissingColumn(GbsampleError):
    def __init__(self, column: str):
        super().__init__(f"column {column!r} not found in file header")
        self.column = column


class TypeParseError(GbsampleError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(
            f"row {row}: cannot parse {value!r} as a number for column {column!r}"
        )
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(GbsampleError):
    pass


class UnknownAttribute(GbsampleError):
    def __init__(self, attr: str):
        super().__init__(f"{attr!r} is not a categorical column of the relation")
        self.attr = attr


class UnknownColumn(GbsampleError):
    def __init__(self, column: str):
        super().__init__(f"{column!r} is not a numeric column of the relation")
        self.column = column


class NotASubset(GbsampleError):
    pass


# ---------------------------------------------------------------------------
# allocation


class EmptyProblem(GbsampleError):
    pass


class NonPositiveCost(GbsampleError):
    pass


class ZeroMeanError(GbsampleError):
    """A stratum or group mean is zero, so its CV is undefined."""

    def __init__(self, key, column: str | None = None):
        where = f"{key}" if column is None else f"{key} column {column!r}"
        super().__init__(f"zero mean for {where}; CV undefined")
        self.key = key
        self.column = column


class ZeroMeanStratum(ZeroMeanError):
    pass


class ZeroMeanCoarseGroup(ZeroMeanError):
    pass


class ZeroMeanGroup(ZeroMeanError):
    pass


class AllStrataConstant(GbsampleError):
    pass


class RateOutOfRange(GbsampleError):
    pass


class InvalidSampleSize(GbsampleError):
    pass


# ---------------------------------------------------------------------------
# sampling and querying


class PlanMismatch(GbsampleError):
    pass


class CorruptSampleFile(GbsampleError):
    pass


class SchemaMismatch(GbsampleError):
    pass


class IncompatibleGrouping(GbsampleError):
    pass
