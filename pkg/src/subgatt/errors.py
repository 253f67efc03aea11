"""Exception types shared across the package.

The CLI maps these onto its exit codes: ``DataError`` subclasses exit 3,
``NumericalError`` exits 4, everything else raised from argument handling
exits 2.
"""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class DimensionError(ContractError):
    """Operand shapes are incompatible for the requested operation."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during computation."""


class ConfigError(ContractError):
    """Configuration values are inconsistent or infeasible."""


class ResourceError(RuntimeError):
    """A configured resource bound was exceeded."""


class DataError(Exception):
    """Base class for dataset ingestion problems."""


class IngestionError(DataError):
    """A mandatory dataset file is missing or unreadable."""


class FormatError(DataError):
    """Dataset content is structurally inconsistent."""


class ParseError(DataError):
    """A token in a dataset file could not be parsed."""


class SplitError(DataError):
    """A requested cross-validation split cannot be built."""
