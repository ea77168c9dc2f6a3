"""Exception hierarchy shared across the package."""


class SgoolError(Exception):
    pass


class ContractError(SgoolError, ValueError):
    """A precondition of a public operation was violated."""


class DimensionError(SgoolError, ValueError):
    pass


class DomainError(SgoolError, ValueError):
    pass


class UnsupportedError(SgoolError, RuntimeError):
    pass


class NumericError(SgoolError, ArithmeticError):
    pass


class TrainingError(NumericError):
    pass


class IntegrityError(NumericError):
    """Reconstructed sampler states drifted away from the forward trajectory."""


class FormatError(SgoolError, ValueError):
    pass


class NoSalientRegion(SgoolError):
    """The saliency map carries no usable structure."""
