"""
Error hierarchy for fbcool.

Every error carries the exit code the CLI maps it to:
2 configuration / argument problems, 3 numerical failures,
4 comparison failures.
"""


class CoolingError(Exception):
    """Base class for all fbcool errors."""

    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def diagnostic(self):
        """Structured stderr text: headline plus key=value context lines."""
        lines = [f"{type(self).__name__}: {self.message}"]
        for key, value in self.context.items():
            lines.append(f"  {key}={value}")
        return "\n".join(lines)


class ArgumentError(CoolingError, ValueError):
    """Invalid argument passed to a library operation."""

    exit_code = 2


class ConfigError(CoolingError):
    """Configuration schema or physics-validity violation."""

    exit_code = 2


class CapabilityError(CoolingError):
    """Request outside the supported regime (e.g. dense matrices too large)."""

    exit_code = 2


class NumericalError(CoolingError):
    exit_code = 3


class DivergenceError(NumericalError):
    """Non-finite amplitudes; context carries trajectory index and time."""


class NumericalDegeneracyError(NumericalError):
    pass


class ConditioningUnderflowError(NumericalError):
    pass


class SamplerDegeneracyError(NumericalError):
    pass


class FilterCollapseError(NumericalError):
    pass


class ComparisonError(CoolingError):
    """Two runs cannot be compared (mismatched observables or record grids)."""

    exit_code = 4
