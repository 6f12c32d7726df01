class NumericalError(RuntimeError):
    """A numerical routine could not deliver a trustworthy answer."""


class ErgodicityError(NumericalError):
    """The kernel at the requested point is not irreducible and aperiodic."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
