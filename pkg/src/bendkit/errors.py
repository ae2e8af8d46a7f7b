"""Exception hierarchy. Each class carries the category the CLI reports."""


class BendkitError(Exception):
    category = "error"


class ConfigError(BendkitError, ValueError):
    category = "config"


class DataError(BendkitError, ValueError):
    category = "data"


class DimensionError(BendkitError, ValueError):
    category = "data"


class ParseError(BendkitError, ValueError):
    category = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(ParseError):
    pass


class StateError(BendkitError, RuntimeError):
    category = "config"


class NumericError(BendkitError, ArithmeticError):
    category = "numeric"


class LayoutError(BendkitError, ValueError):
    category = "config"
