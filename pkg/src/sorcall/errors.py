"""Exception types."""


class ConfigurationError(ValueError):
    """Inconsistent model, design, or distribution configuration."""


class DataError(ValueError):
    """Malformed survey or census input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PositivityError(ArithmeticError):
    """A response propensity fell outside ``(eps, 1 - eps)``."""

    def __init__(self, unit: int, value: float, label: str = "pi"):
        self.unit = unit
        self.value = value
        super().__init__(f"{label} = {value:.3g} outside (1e-10, 1 - 1e-10) at unit {unit}")


class IdentificationError(ArithmeticError):
    """The parameter-counting equation has no root in the admissible bracket."""


class SingularCovarianceError(ArithmeticError):
    """The bread matrix of the sandwich is not invertible."""

    def __init__(self, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"Jacobian not invertible (condition number {condition_number:.3g})")


class StudyFailure(RuntimeError):
    """Too many replicates failed to converge in a named scenario.

    ``report`` holds the study report assembled before the failure.
    """

    report = None
