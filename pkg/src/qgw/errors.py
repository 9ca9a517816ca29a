"""Exception hierarchy shared by the library and the CLI."""


class QgwError(Exception):
    """Base class for all errors raised by :mod:`qgw`."""


class ValidationError(QgwError, ValueError):
    """Input data or configuration violates a documented precondition."""


class DisconnectedGraphError(ValidationError):
    """A geodesic query hit a node unreachable from the source."""


class UnbalancedError(ValidationError):
    """Source and target masses differ beyond the balance tolerance."""


class SizeCapError(ValidationError):
    """An oracle-scale routine was asked to handle a too-large instance."""


class NumericalError(QgwError, ArithmeticError):
    """A solver produced non-finite values or failed to converge in strict mode."""
