"""Exception types shared across the package."""


class SentaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SentaError):
    """Invalid or incomplete configuration."""


# --- causal graph ---

class CycleError(SentaError):
    """Edge set contains a directed cycle."""


class UnknownNodeError(SentaError):
    """An edge endpoint or query variable is not a declared node."""


# --- corpus ingestion ---

class MalformedInputError(SentaError):
    """Input file cannot be parsed at all (bad XML / bad JSON)."""


class SchemaError(SentaError):
    """Input parsed but a required attribute or element is missing."""


class FieldMapError(SentaError):
    """A configured record field is absent from the input records."""


# --- encoding / models ---

class AspectTooLongError(SentaError):
    """Aspect tokens plus separators do not fit in the length budget."""


class DimensionError(SentaError):
    """Vector or batch dimensions disagree."""


class VocabularyMismatchError(SentaError):
    """Tokenizer supplied for inference differs from the bundle's own."""


class DegenerateDataError(SentaError):
    """Training data covers fewer than two polarity classes."""


class EmptyClassError(SentaError):
    """A polarity class has no instances when building the feature bank."""


class BankMismatchError(SentaError):
    """Feature bank dimension does not match the confounder hidden size."""


# --- evaluation ---

class MissingPredictionError(SentaError):
    """Some instances have no prediction for a model."""


class DuplicatePredictionError(SentaError):
    """An instance has more than one prediction for the same model."""


class EmptySubsetError(SentaError):
    """The evaluation subset selected no instances."""
