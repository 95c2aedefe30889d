class NonPositiveDelta(ValueError):
    """A mollifier was requested with a non-positive radius"""

    def __init__(self, delta: float) -> None:
        super().__init__()
        self.delta = delta

    def __str__(self) -> str:
        return f"Mollifier radius must be positive, got delta={self.delta!r}"


class GridMismatch(ValueError):
    """Two objects that must share a grid were built on different grids"""

    def __init__(self, expected: object, found: object) -> None:
        super().__init__()
        self.expected = expected
        self.found = found

    def __str__(self) -> str:
        return f"Grid mismatch: expected {self.expected}, found {self.found}"


class DimensionMismatch(ValueError):
    """A state vector does not have one entry per species"""

    def __init__(self, expected: int, found: int) -> None:
        super().__init__()
        self.expected = expected
        self.found = found

    def __str__(self) -> str:
        return f"Expected {self.expected} species components, got {self.found}"


class NonPositiveStep(ValueError):
    """An integrator was asked to take a step of size <= 0"""

    def __init__(self, dt: float) -> None:
        super().__init__()
        self.dt = dt

    def __str__(self) -> str:
        return f"Time step must be positive, got dt={self.dt!r}"


class NumericalFailure(Exception):
    """Base class for failures of the time integration itself"""

    pass


class LinearSolveFailure(NumericalFailure):
    """An implicit solve did not reach the requested relative residual"""

    def __init__(self, field: str, residual: float, tolerance: float) -> None:
        super().__init__()
        self.field = field
        self.residual = residual
        self.tolerance = tolerance

    def __str__(self) -> str:
        return (
            f"Implicit solve for {self.field} stopped at relative residual "
            f"{self.residual:.3e} (tolerance {self.tolerance:.1e})"
        )


class BlowUp(NumericalFailure):
    """A field became non-finite or exceeded the blow-up threshold"""

    def __init__(self, field: str, t: float, value: float) -> None:
        super().__init__()
        self.field = field
        self.t = t
        self.value = value

    def __str__(self) -> str:
        return f"{self.field} blew up at t={self.t:.6g} (sup norm {self.value!r})"


class PicardDivergence(NumericalFailure):
    """The fixed-point iteration within a step failed to contract"""

    def __init__(self, t: float, iterations: int, residuals: list[float]) -> None:
        super().__init__()
        self.t = t
        self.iterations = iterations
        self.residuals = residuals

    def __str__(self) -> str:
        last = self.residuals[-1] if self.residuals else float("nan")
        return (
            f"Picard iteration diverged at t={self.t:.6g} after "
            f"{self.iterations} iterations (last residual {last:.3e})"
        )


class EnvelopeHorizonExceeded(ValueError):
    """The comparison envelope was evaluated past the end of its horizon"""

    def __init__(self, t: float, horizon: float) -> None:
        super().__init__()
        self.t = t
        self.horizon = horizon

    def __str__(self) -> str:
        return f"Envelope computed up to t={self.horizon:.6g}, requested t={self.t:.6g}"


class InvariantViolation(Exception):
    """A hard observer found a monitored bound violated"""

    def __init__(self, kind: str, t: float, margin: float, detail: str = "") -> None:
        super().__init__()
        self.kind = kind
        self.t = t
        self.margin = margin
        self.detail = detail

    def __str__(self) -> str:
        message = f"{self.kind} violated at t={self.t:.6g} (margin {self.margin:.3e})"
        if self.detail:
            message += f": {self.detail}"
        return message


class IncompleteRunDirectory(ValueError):
    """A run directory lacks files needed to replay it"""

    def __init__(self, directory: object, missing: list[str]) -> None:
        super().__init__()
        self.directory = directory
        self.missing = missing

    def __str__(self) -> str:
        shown = ", ".join(self.missing[:5])
        if len(self.missing) > 5:
            shown += f" (+{len(self.missing) - 5} more)"
        return f"{self.directory} is missing {shown}"
