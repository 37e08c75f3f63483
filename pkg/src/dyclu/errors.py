"""Exception hierarchy shared by every module of the package."""


class DycluError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(DycluError, ValueError):
    pass


class InvalidDegreesOfFreedom(DycluError, ValueError):
    pass


class InvalidNoncentrality(DycluError, ValueError):
    pass


class InvalidProbability(DycluError, ValueError):
    pass


class InvalidWindow(DycluError, ValueError):
    pass


class InvalidGap(DycluError, ValueError):
    pass


class EmptyDataset(DycluError, ValueError):
    pass


class DegenerateObservation(DycluError, ValueError):
    pass


class NoCandidates(DycluError, ValueError):
    pass


class EmptyNeighborhood(DycluError, ValueError):
    pass


class UnknownUser(DycluError, KeyError):
    pass


class UnknownParameter(DycluError, KeyError):
    pass


class InfeasibleSeparation(DycluError, RuntimeError):
    pass


class OutOfHorizon(DycluError, IndexError):
    pass


class ParseError(DycluError, ValueError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DycluError, ValueError):
    """Invalid experiment configuration. ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class Unsupported(ConfigError):
    pass
