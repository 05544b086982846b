"""Exception hierarchy shared by all pfsense modules."""

from numpy.linalg import LinAlgError


class PfsenseError(Exception):
    """Base class for every error raised by this package."""


# -- case parsing ---------------------------------------------------------

class MalformedCase(PfsenseError, ValueError):
    pass


class MissingMatrix(MalformedCase):
    pass


class MultipleSlack(MalformedCase):
    pass


class DanglingBranch(MalformedCase):
    pass


class ZeroImpedanceBranch(PfsenseError, ValueError):
    pass


# -- linear algebra -------------------------------------------------------

class DimensionMismatch(PfsenseError, ValueError):
    pass


class SingularMatrix(PfsenseError, LinAlgError):
    pass


class SingularJacobian(SingularMatrix):
    pass


class SingularBlock(SingularMatrix):
    pass


class SingularK(SingularMatrix):
    pass


class SingularM(SingularMatrix):
    pass


class SingularSDagger(SingularMatrix):
    pass


class SingularNormalEquations(SingularMatrix):
    pass


class RankDeficient(SingularMatrix):
    pass


class NoConvergence(PfsenseError, RuntimeError):
    """An iterative method hit its iteration cap.

    ``result`` carries the last iterate when the caller can use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# -- domain ---------------------------------------------------------------

class DomainError(PfsenseError, ValueError):
    pass


class ZeroVoltage(PfsenseError, ValueError):
    pass


class AllZeroInjections(PfsenseError, ValueError):
    pass


class TooShort(PfsenseError, ValueError):
    pass


class EmptyGroup(PfsenseError, ValueError):
    pass
