"""Exception hierarchy shared by every probcam module.

The CLI maps these onto process exit codes (see ``probcam.cli``):
validation problems exit 2, numerical failures exit 3, I/O format
problems exit 4.  Library code raises; only the CLI calls ``sys.exit``.
"""

from __future__ import annotations


class ProbcamError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ProbcamError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class DegenerateGeometryError(ProbcamError):
    """Geometry too degenerate to proceed (point at camera plane, collinear
    point sets, SDF gradient queried at a sphere center, ...)."""


class NumericalFailureError(ProbcamError):
    """A computation produced a non-finite value.

    ``what`` names the offending quantity (loss component, parameter block)
    so run logs can point at the culprit.
    """

    def __init__(self, what: str, message: str = ""):
        self.what = what
        super().__init__(message or f"non-finite value in {what!r}")


class EmptyRayError(ProbcamError):
    """A ray produced no positive compositing weight where one was required."""


class SamplingFailureError(ProbcamError):
    """Rejection sampling failed to reach the requested acceptance rate."""


class ConfigError(InvalidArgumentError):
    """An experiment config is malformed.  ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


class FileFormatError(ProbcamError, IOError):
    """An on-disk artifact could not be parsed.

    ``offset`` is the byte offset of the first problem when known (e.g. the
    position reported by the JSON parser), else ``None``.
    """

    def __init__(self, path: str, message: str, offset: int | None = None):
        self.path = path
        self.offset = offset
        at = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path}{at}: {message}")
