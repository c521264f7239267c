"""
Exception hierarchy for the soliton lab and the CLI exit codes they map to.

Every class also derives from the builtin it refines, so callers that catch
``ValueError`` or ``RuntimeError`` keep working.
"""

EXIT_OK = 0
EXIT_CHECK_FAILED = 2
EXIT_CONFIG_ERROR = 3
EXIT_NO_CONVERGENCE = 4


class SolitonLabError(Exception):
    """Root of every error raised by the lab."""

    exit_code = EXIT_CHECK_FAILED
    category = "error"


class ConfigurationError(SolitonLabError, ValueError):
    """Invalid configuration, descriptor, field rank or grid pairing."""

    exit_code = EXIT_CONFIG_ERROR
    category = "configuration"


class GridError(ConfigurationError):
    """Unsupported manifold descriptor or resolution."""

    category = "grid"


class NotASolitonError(SolitonLabError, ValueError):
    """Soliton equation or normalization violated beyond tolerance."""

    exit_code = EXIT_CONFIG_ERROR
    category = "soliton"


class NumericalCheckError(SolitonLabError, ArithmeticError):
    """Non-finite values, indefinite metrics or a failed consistency check."""

    exit_code = EXIT_CHECK_FAILED
    category = "numerical"


class ConvergenceError(SolitonLabError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    exit_code = EXIT_NO_CONVERGENCE
    category = "convergence"


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code; unknown errors count as failed checks."""
    if isinstance(error, SolitonLabError):
        return error.exit_code
    return EXIT_CHECK_FAILED
