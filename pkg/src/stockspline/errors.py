"""Exception hierarchy shared across the package."""


class StockSplineError(Exception):
    """Base class for all package errors."""


class MissingFile(StockSplineError):
    pass


class ParseError(StockSplineError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class InvariantViolation(StockSplineError):
    def __init__(self, description, location=""):
        self.description = description
        self.location = location
        msg = f"{description} ({location})" if location else description
        super().__init__(msg)


class YearOutOfRange(StockSplineError):
    pass


class DegenerateKnots(StockSplineError):
    pass


class NotPSD(StockSplineError):
    pass


class AllZeroMatrix(StockSplineError):
    pass


class NonContiguousGroups(StockSplineError):
    pass


class LengthMismatch(StockSplineError):
    pass


class LayoutMismatch(StockSplineError):
    pass


class ConfigInvalid(StockSplineError):
    pass


class DataTooSmall(StockSplineError):
    pass


class NonFiniteDensity(StockSplineError):
    pass


class InnerDivergence(StockSplineError):
    pass


class IndefiniteHessian(StockSplineError):
    pass


class ZeroTotalMortality(StockSplineError):
    pass


class TooFewYears(StockSplineError):
    pass


class NotConverged(StockSplineError):
    pass


class EmptySet(StockSplineError):
    pass


class BaselineMissing(StockSplineError):
    pass


class NoRoot(StockSplineError):
    def __init__(self, message, attainable_max=None):
        self.attainable_max = attainable_max
        super().__init__(message)


class StockMismatch(StockSplineError):
    pass
