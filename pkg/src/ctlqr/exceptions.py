"""Exception hierarchy shared by all ctlqr modules."""


class CtlqrError(Exception):
    """Base class for every error raised by ctlqr."""


class InvalidArgumentError(CtlqrError, ValueError):
    """Input has the wrong shape, is non-finite, or violates a precondition."""


class DomainError(CtlqrError, ValueError):
    """Input lies outside the region where a series or map is valid."""


class RecoveryDomainError(DomainError):
    """Discrete estimate too far from the identity to recover continuous dynamics."""


class DegenerateDataError(CtlqrError, ValueError):
    """Regression data carries no information in some direction."""


class StabilityError(CtlqrError, ValueError):
    """A matrix required to be Hurwitz stable is not."""


class NumericError(CtlqrError, ArithmeticError):
    """A numerical kernel failed (eigensolver, factorization, ...)."""


class NonConvergenceError(NumericError):
    """An iterative method hit its cap without meeting tolerance."""


class ConfigError(CtlqrError, ValueError):
    """Experiment configuration failed validation.

    ``path`` is the JSON path of the offending field, e.g. ``"system.Q"``.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
