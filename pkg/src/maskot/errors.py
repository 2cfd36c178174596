"""Exception hierarchy shared by every solver in the package."""


class MaskedOTError(Exception):
    """Base class for all package errors."""


class InvalidInput(MaskedOTError, ValueError):
    """Raised when arguments violate a precondition."""


class ShapeMismatch(InvalidInput):
    pass


class ZeroRow(InvalidInput):
    """An embedding row has (numerically) zero norm, so cosine is undefined."""


class NegativeCost(InvalidInput):
    pass


class EmptyMask(InvalidInput):
    pass


class ZeroRowOrColumn(InvalidInput):
    """A mask row or column is entirely zero."""


class InvalidDelta(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class InfeasiblePlan(InvalidInput):
    """A plan handed to the Gromov pseudo-cost does not match its marginals."""


class TooLarge(InvalidInput):
    """Instance exceeds the size guard of an exact (exponential or slow) routine."""


class Infeasible(MaskedOTError):
    """The masked transport polytope is empty (or numerically unreachable)."""


class NumericalUnderflow(MaskedOTError, ArithmeticError):
    """The scaling-domain iterations divided by an underflowed kernel sum."""


class NotConverged(MaskedOTError):
    pass
