"""Exception hierarchy shared by all mltet modules."""


class MltetError(Exception):
    """Base class for all library errors."""


class DegenerateOrbit(MltetError):
    pass


class UnknownElement(MltetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigMismatch(MltetError, ValueError):
    pass


class NotUnisolvent(MltetError):
    pass


class SystemInconsistent(MltetError):
    pass


class NoPositiveSolution(MltetError):
    pass


class MissingElementData(MltetError):
    pass


class InvalidElementData(MltetError):
    """An element data file failed one of the admissibility checks."""


class InvertedElement(MltetError, ValueError):
    pass


class NonpositiveDensity(MltetError, ValueError):
    pass


class NonConformingMesh(MltetError):
    pass


class ParseError(MltetError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotHermitian(MltetError, ValueError):
    pass


class DegenerateFit(MltetError, ValueError):
    pass


class NoConvergence(MltetError, RuntimeError):
    pass
