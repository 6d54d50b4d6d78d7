"""Exception types shared across the package."""


class ConceptGcnError(Exception):
    """Base class for all package errors."""


class DimensionError(ConceptGcnError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ConceptGcnError):
    """A caller violated an operation's contract (bad argument state)."""


class ConfigError(ConceptGcnError):
    """A configuration value is out of its allowed range."""


class ParseError(ConceptGcnError):
    """A dataset file could not be parsed."""


class SchemaError(ConceptGcnError):
    """A JSON graph document does not match the expected schema."""


class SplitError(ConceptGcnError):
    """Train/val/test split cannot be constructed as requested."""


class NumericError(ConceptGcnError):
    """A numeric computation produced non-finite values."""
