"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
configuration problems exit 2, missing or unusable inputs exit 3, and
numerical failures exit 4.
"""


class UbpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(UbpError):
    """A setting, shape, or argument combination is invalid."""


class DegenerateInputError(UbpError):
    """Input data is structurally valid but unusable (empty, too short)."""


class UsageError(UbpError):
    """An API was called in an unsupported way (mismatched lengths, unfitted state)."""


class MissingInputError(UbpError):
    """A required file, dataset, or checkpoint does not exist."""


class IntegrityError(MissingInputError):
    """An input file exists but fails its integrity check."""


class NumericalError(UbpError):
    """Training or evaluation produced non-finite values."""
