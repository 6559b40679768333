"""Exception hierarchy shared by every coapt module.

Each error kind carries a stable ``kind`` string so the HTTP service and the
CLI can map failures to status codes / exit codes without string matching.
"""


class CoaptError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"


class DimensionError(CoaptError):
    """Tensor or feature shapes are incompatible."""

    kind = "dimension"


class ParameterError(CoaptError):
    """A numeric parameter is outside its valid range (e.g. temperature <= 0)."""

    kind = "parameter"


class ContractError(CoaptError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""

    kind = "contract"


class DeterminismError(CoaptError):
    """A function expected to be deterministic produced differing outputs."""

    kind = "determinism"


class BudgetOverflowError(CoaptError):
    """A prompt layout does not fit the context length."""

    kind = "overflow"


class ConfigurationError(CoaptError):
    """A configuration value or combination is invalid."""

    kind = "configuration"


class IntegrityError(CoaptError):
    """Internal data is inconsistent (e.g. unassigned token id)."""

    kind = "integrity"


class FormatError(CoaptError):
    """A serialized file does not match its binary/JSON contract."""

    kind = "format"


class StructuralError(CoaptError):
    """A loaded document violates a structural invariant (e.g. set counts)."""

    kind = "structural"


class VocabLookupError(CoaptError):
    """A class or word is missing from a vocabulary."""

    kind = "lookup"


class DegenerateInputError(CoaptError):
    """An input is degenerate for the requested operation (e.g. zero norm)."""

    kind = "degenerate"


class DivergenceError(CoaptError):
    """Training produced a non-finite loss; the run halts."""

    kind = "divergence"


class MetricDomainError(CoaptError):
    """A metric was evaluated outside its domain (e.g. non-positive accuracy)."""

    kind = "domain"


#: Error kinds that indicate bad user input rather than a runtime failure.
VALIDATION_KINDS = frozenset(
    {
        "dimension",
        "parameter",
        "contract",
        "overflow",
        "configuration",
        "format",
        "structural",
        "lookup",
        "degenerate",
        "domain",
    }
)
