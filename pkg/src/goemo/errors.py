"""Exception hierarchy.

Each family maps onto one CLI exit code: input problems exit 2, numerical
failures exit 3, shape/contract mismatches exit 4.
"""


class GoEmoError(Exception):
    exit_code = 1


class InputError(GoEmoError, ValueError):
    """Bad or missing input data."""

    exit_code = 2


class ParseError(InputError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(ParseError):
    pass


class NumericalError(GoEmoError, ArithmeticError):
    """Non-finite loss or gradient."""

    exit_code = 3


class DivergenceError(NumericalError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class ShapeError(GoEmoError, ValueError):
    exit_code = 4
