"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration/usage problems
exit 1, numerical failures exit 2, I/O problems exit 3.
"""


class InstinctRlError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(InstinctRlError):
    """Invalid configuration: bad sizes, missing/incompatible checkpoints."""


class ShapeError(InstinctRlError):
    """Array shapes do not line up (wrong input dim, mismatched cache)."""


class NumericalError(InstinctRlError):
    """Non-finite values appeared in network outputs or gradients."""


class LayoutError(ConfigurationError):
    """Layout generation could not satisfy placement constraints."""


class UsageError(ConfigurationError):
    """Bad command-line arguments or config-file contents."""
