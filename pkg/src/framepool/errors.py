"""Exception hierarchy. The CLI maps these onto exit codes:
usage/parameter errors -> 1, data/format errors -> 2, numeric errors -> 3.
"""


class FramepoolError(Exception):
    """Base class for all engine errors."""


class ParameterError(FramepoolError):
    """A caller-supplied parameter is out of range or unusable."""


class ShapeError(FramepoolError):
    """Operand dimensions do not line up."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in shapes)})"
        super().__init__(message)


class StateError(FramepoolError):
    """An operation was called in the wrong order (e.g. tape reuse)."""


class NumericError(FramepoolError):
    """A computation produced or encountered non-finite values."""


class DataError(FramepoolError):
    """Corpus or manifest contents are invalid."""


class FormatError(DataError):
    """A binary file does not conform to its declared format."""


class CorruptionError(FormatError):
    """A binary file is truncated or inconsistent; carries the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
