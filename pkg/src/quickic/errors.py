"""Exception types raised across the package."""


class QuickICError(Exception):
    """Base class for all package errors."""


class InvalidArgument(QuickICError, ValueError):
    pass


class NumericFailure(QuickICError, ArithmeticError):
    """Singular or non-positive-definite matrix, or a similar breakdown."""


class BudgetExceeded(QuickICError):
    """Exhaustive enumeration would exceed the configured subset cap."""


class HeywoodCase(NumericFailure):
    """A factor-analysis noise variance collapsed below its floor."""

    def __init__(self, index, value):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"Heywood case: psi[{self.index}] = {self.value:.3e}")


class StepDegenerate(NumericFailure):
    """The mixing-weight update has a non-positive denominator."""
