"""Exception hierarchy shared by every module."""


class QSDError(Exception):
    """Base class for all errors raised by qsdlab."""


class ParameterError(QSDError, ValueError):
    """A model parameter is missing, non-finite or out of range."""


class SizeError(QSDError, ValueError):
    """A truncation level or array length is too small."""


class StructureError(QSDError, ValueError):
    """A generator does not have the structure an operation needs."""


class DomainError(QSDError, ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedModelError(QSDError, TypeError):
    """The operation is not defined for this kind of model."""


class InfeasibleError(QSDError, RuntimeError):
    """A guard rejected the request as numerically or statistically infeasible."""
