"""
Error Hierarchy
Every failure raised by the library derives from DroCiError
"""

from typing import Optional


class DroCiError(Exception):
    """Base class for all library errors"""


class InputError(DroCiError, ValueError):
    """The caller supplied something the library cannot work with"""


class ComputationError(DroCiError, ArithmeticError):
    """A numerical procedure failed on otherwise valid input"""


# ==================== INPUT ERRORS ====================

class UnknownDivergence(InputError):
    pass


class DegenerateCressieReadParameter(InputError):
    pass


class DomainError(InputError):
    """Argument outside the domain of a function"""

    def __init__(self, message: str, side: int = 0):
        super().__init__(message)
        # +1: above the upper end of the domain, -1: below the lower end
        self.side = side


class UnknownModel(InputError):
    pass


class UnknownLaw(InputError):
    pass


class InvalidSample(InputError):
    pass


class DerivativeUnavailable(InputError):
    pass


class MissingThirdOrderMoment(InputError):
    pass


class ConfigError(InputError):
    pass


class ParseError(InputError):
    """CSV cell that could not be read as a number"""

    def __init__(self, row: int, column: int, detail: Optional[str] = None):
        self.row = row
        self.column = column
        message = f"cannot parse row {row}, column {column}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class EmptyData(InputError):
    pass


# ==================== COMPUTATION ERRORS ====================

class MinimizerNotFound(ComputationError):
    pass


class SingularHessian(ComputationError):
    pass


class DegenerateVariance(ComputationError):
    pass


class NoConvergence(ComputationError):
    pass


class InfeasibleBall(ComputationError):
    pass


class TargetUnreachable(ComputationError):
    pass


class SingularWhitening(ComputationError):
    pass
