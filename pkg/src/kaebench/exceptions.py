"""Exception hierarchy shared by every kaebench module."""


class KaeError(Exception):
    """Base class for all errors raised by kaebench."""


class InvalidBandwidth(KaeError, ValueError):
    pass


class UndefinedScale(KaeError, ValueError):
    pass


class HistoryCorruption(KaeError, ValueError):
    pass


class DegenerateGroup(KaeError, ValueError):
    pass


class DegenerateBatch(KaeError, ValueError):
    pass


class NoData(KaeError, ValueError):
    pass


class UnsupportedNormalization(KaeError, ValueError):
    pass


class MalformedInput(KaeError, ValueError):
    pass


class EnumerationInfeasible(KaeError, ValueError):
    pass


class InsufficientSnapshots(KaeError, LookupError):
    pass


class NumericalFailure(KaeError, ArithmeticError):
    """Raised when a gradient or parameter update becomes non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class MismatchedRuns(KaeError, ValueError):
    pass


class ConfigError(KaeError, ValueError):
    """Configuration parse or validation failure, optionally tied to a line."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")
