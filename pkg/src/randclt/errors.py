"""Exception hierarchy shared by every module of the toolkit."""


class RandcltError(Exception):
    """Base class for all toolkit errors."""


class InvalidModel(RandcltError):
    pass


class WindowTooSmall(RandcltError):
    pass


class OutOfWindow(RandcltError):
    pass


class UnknownTruth(RandcltError):
    pass


class RejectionBudgetExceeded(RandcltError):
    pass


class ContinuumMode(RandcltError):
    pass


class EmptyRegion(RandcltError):
    pass


class TooFewPoints(RandcltError):
    pass


class DegenerateVariance(RandcltError):
    """Set variance is zero, so a studentized statistic is of type 0/0."""


class MissingTruth(RandcltError):
    pass


class DimensionUnsupported(RandcltError):
    pass


class DimensionMismatch(RandcltError):
    pass


class NonScalarSample(RandcltError):
    pass


class InvalidDelta(RandcltError):
    pass


class InsufficientSignal(RandcltError):
    pass


class ReplicationAborted(RandcltError):
    """Too many replications failed; ``summary`` maps error name to count."""

    def __init__(self, message, summary=None, n_failed=0, n_rep=0):
        super().__init__(message)
        self.summary = dict(summary or {})
        self.n_failed = n_failed
        self.n_rep = n_rep


class ConfigError(RandcltError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    def __init__(self, message, constraint=None):
        super().__init__(f"[{constraint}] {message}" if constraint else message)
        self.constraint = constraint
