"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain (bad shape, count, range)."""


class DegenerateInputError(ValueError):
    """Input is numerically rank-deficient or otherwise degenerate.

    Carries ``column`` (offending column index) and optionally ``task``
    (task id) when known.
    """

    def __init__(self, message, column=None, task=None):
        super().__init__(message)
        self.column = column
        self.task = task


class DivergenceError(RuntimeError):
    """An iterative solver produced non-finite values. Carries ``iteration``."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class IdxParseError(ValueError):
    """An IDX file failed to parse. Carries the byte ``offset`` of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """An experiment config file is malformed or fails validation."""
