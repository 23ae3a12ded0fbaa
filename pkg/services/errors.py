"""
Errors - One exception hierarchy for the whole workbench

Every class carries the exit code the CLI returns for its category:
0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class WorkbenchError(Exception):
    """Base class for every error the workbench raises on purpose."""

    exit_code = EXIT_USAGE


# ── Usage / configuration ─────────────────────────────────────

class UsageError(WorkbenchError):
    """Bad command-line usage (unknown flag, missing argument)."""

    exit_code = EXIT_USAGE


class ConfigError(WorkbenchError, ValueError):
    """A configuration value is invalid or a configuration file is missing."""

    exit_code = EXIT_USAGE


# ── Data ──────────────────────────────────────────────────────

class DataError(WorkbenchError):
    """Input data is missing, malformed or inconsistent."""

    exit_code = EXIT_DATA


class ParseError(DataError):
    """A line of a text resource could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else ''}line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class HierarchyError(DataError):
    """An OLID record breaks the NOT/OFF -> TIN/UNT -> IND/GRP/OTH hierarchy."""

    def __init__(self, message: str, record_id: str):
        self.record_id = record_id
        super().__init__(f"record {record_id!r}: {message}")


class CheckpointError(DataError):
    """A checkpoint directory is incomplete or does not match its manifest."""


# ── Numeric ───────────────────────────────────────────────────

class NumericError(WorkbenchError):
    """A loss, activation or recurrent state became non-finite."""

    exit_code = EXIT_NUMERIC


class ShapeError(WorkbenchError, ValueError):
    """Tensor shapes are incompatible with an operation."""

    exit_code = EXIT_NUMERIC
