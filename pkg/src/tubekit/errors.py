"""Exception hierarchy shared by every stage."""

from __future__ import annotations


class TubekitError(Exception):
    """Base class for all data and validation failures raised by tubekit."""


class InvalidInputError(TubekitError, ValueError):
    pass


class LoadError(TubekitError):
    """A corpus or artifact file could not be loaded.

    ``path`` and ``line`` locate the offending record; ``line`` is 1-based, or
    a byte offset for binary files (see ``offset``), or None when the problem
    concerns the file as a whole.
    """

    def __init__(self, path, reason: str, line: int | None = None, offset: int | None = None):
        self.path = str(path)
        self.reason = reason
        self.line = line
        self.offset = offset
        where = self.path
        if line is not None:
            where += f":{line}"
        elif offset is not None:
            where += f"@{offset}"
        super().__init__(f"{where}: {reason}")


class ParseError(LoadError):
    pass


class TrainingError(TubekitError):
    pass


class NoFeasiblePathError(TubekitError):
    pass


class UndefinedMetricError(TubekitError):
    pass


class StageError(TubekitError):
    """A pipeline stage cannot run because an upstream artifact is missing."""

    def __init__(self, stage: str, reason: str, file=None, requires: str | None = None):
        self.stage = stage
        self.reason = reason
        self.file = None if file is None else str(file)
        self.requires = requires
        super().__init__(reason)
