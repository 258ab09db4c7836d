"""Exception types shared across the package."""


class FbmsdeError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(FbmsdeError, ValueError):
    """A model, grid, or scheme parameter violates its admissible range."""


class UsageError(FbmsdeError, ValueError):
    """An operation was called with structurally invalid inputs."""


class NumericalError(FbmsdeError, ArithmeticError):
    """A numerical procedure failed (non-finite values, lost definiteness, ...)."""


class FactorizationError(NumericalError):
    """Cholesky factorization lost positive definiteness.

    ``pivot`` is the 1-based index of the failing leading minor when the
    backend reports it.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class EmbeddingError(NumericalError):
    """Circulant embedding produced an eigenvalue below the clamp tolerance."""

    def __init__(self, message: str, most_negative: float, tolerance: float):
        super().__init__(message)
        self.most_negative = most_negative
        self.tolerance = tolerance


class RootBracketError(NumericalError):
    """No sign change found for the implicit-step equation.

    At runtime this is how a violated unique-positive-root hypothesis
    manifests; ``interval`` is the range that was searched.
    """

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(message)
        self.interval = interval


class IntegrationError(FbmsdeError, RuntimeError):
    """An implicit step failed during trajectory integration.

    ``step`` is the 0-based index of the step that failed.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ConfigError(FbmsdeError, ValueError):
    """Configuration text failed validation; ``errors`` lists every problem."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
