"""Exception types raised across the package."""


class THBTError(Exception):
    """Base class for all package errors."""


class FresnelBoundViolation(THBTError, ValueError):
    pass


class EmptyPathList(THBTError, ValueError):
    pass


class InvalidScenario(THBTError, ValueError):
    pass


class InvalidConfig(THBTError, ValueError):
    pass


class DegenerateQuadratic(THBTError, ZeroDivisionError):
    """The quadratic phase coefficient vanishes (far-field limit)."""


class NoBracket(THBTError, ValueError):
    pass


class CoverageViolation(THBTError):
    pass


class EmptyGrid(THBTError, ValueError):
    pass


class SingularSystem(THBTError, ArithmeticError):
    pass


class ZeroCurvature(THBTError, ArithmeticError):
    pass


class FitDiverged(THBTError, RuntimeError):
    pass


class MissingMeasurements(THBTError, KeyError):
    pass


class SingularNormalMatrix(THBTError, ArithmeticError):
    pass
