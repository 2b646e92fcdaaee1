"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents do not match an operation's contract."""


class ConfigError(ValueError):
    """A model or quantizer configuration is invalid."""


class NumericError(ArithmeticError):
    """Non-finite or otherwise unusable values showed up mid-computation."""


class ConversionError(RuntimeError):
    """The model cannot be mapped onto a spiking network as requested."""


class ContractError(RuntimeError):
    """A spike-domain precondition (binary trains, matched windows) was violated."""


class ContainerError(RuntimeError):
    """Base class for model container problems."""


class ManifestError(ContainerError):
    """The container manifest is malformed or inconsistent."""


class BlobError(ContainerError):
    """The tensor blob does not match the manifest (truncated, overlapping)."""


class IncompleteModelError(ContainerError):
    """The model is missing tensors or quantizer entries required to save/load it."""
