"""Exception hierarchy shared by every module."""


class OrchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OrchError, ValueError):
    pass


class ParseError(OrchError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyTrace(OrchError, ValueError):
    pass


class TooFewUes(OrchError, ValueError):
    pass


class BadGeneratorParams(OrchError, ValueError):
    pass


class InsufficientHistory(OrchError, ValueError):
    pass


class NumericOverflow(OrchError, ArithmeticError):
    pass


class EmptySampleSet(OrchError, ValueError):
    pass


class NoStableBound(OrchError):
    """Arrival rate exceeds service rate at every probed theta."""


class InsufficientSamples(OrchError, ValueError):
    def __init__(self, n: int, message: str = ""):
        super().__init__(message or f"no complete group of samples for n={n}")
        self.n = n


class ShapeMismatch(OrchError, ValueError):
    pass


class EmptyDataset(OrchError, ValueError):
    pass


class DivergedLoss(OrchError, ArithmeticError):
    pass


class Infeasible(OrchError):
    pass


class SearchSpaceTooLarge(OrchError):
    pass


class EmptyRecords(OrchError, ValueError):
    pass


class ReportError(OrchError, OSError):
    pass
