"""Exception types shared across the package."""


class LfridError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(LfridError, ValueError):
    """Operand shapes are inconsistent with the declared dimensions."""


class SingularMatrix(LfridError, ArithmeticError):
    """A pivot fell below the singularity tolerance during factorization."""


class NoConvergence(LfridError, RuntimeWarning):
    """An iterative estimate did not reach its tolerance within the budget."""


class SingularStep(LfridError):
    """The per-step latent solve hit a singular matrix during simulation."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"singular latent solve at step {step}")


class SingularPoint(LfridError, ArithmeticError):
    """I - D_zw*Delta(p) is singular at the requested scheduling point."""


class SingularCenter(SingularPoint):
    """The scheduling-box center makes the constant loop closure singular."""


class EmptyBand(LfridError, ValueError):
    """No DFT grid frequency falls inside the requested excitation band."""


class DegenerateReference(LfridError, ZeroDivisionError):
    """The reference signal has zero deviation from its mean."""


class ParseError(LfridError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(LfridError, ValueError):
    """A data file does not match the expected channel schema."""


class LineSearchFailure(LfridError, RuntimeError):
    """The strong-Wolfe line search could not find an acceptable step."""


class AllRestartsFailed(LfridError, RuntimeError):
    """Every training restart ended with a non-finite loss."""
