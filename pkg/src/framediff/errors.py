"""Exception types shared across the package.

Each class carries the CLI exit code it maps to, so the command-line layer
can translate failures without a lookup table.
"""


class FrameDiffError(Exception):
    exit_code = 1


class InputError(FrameDiffError, ValueError):
    """Malformed or inconsistent input data (files, shapes, indices)."""

    exit_code = 2


class RateMismatchError(InputError):
    pass


class AlignmentError(InputError):
    pass


class PlanError(InputError):
    """A frame plan cannot be built, e.g. a phoneme longer than the max frame."""


class NonFiniteError(FrameDiffError, FloatingPointError):
    """NaN/inf encountered during training or sampling."""

    exit_code = 3

    def __init__(self, message, step=None, detail=None):
        super().__init__(message)
        self.step = step
        self.detail = detail


class ResourceError(FrameDiffError):
    exit_code = 4
