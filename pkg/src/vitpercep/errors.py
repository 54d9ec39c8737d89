"""Typed error hierarchy. Every failure mode of the library raises one of
these; nothing in the package raises bare Exception or crashes on bad files."""


class VitPercepError(Exception):
    """Base class for all library errors."""


class DimensionError(VitPercepError):
    """Shapes of the operands do not line up."""


class ContractError(VitPercepError):
    """A precondition on arguments was violated (ranges, kinds, modes)."""


class NonFiniteError(VitPercepError):
    """A NaN or Inf appeared where only finite values are allowed."""


class FormatError(VitPercepError):
    """A file does not follow the expected container structure."""


class SchemaError(VitPercepError):
    """Tensor names or shapes in a weight file disagree with its config."""


class CorruptionError(VitPercepError):
    """A weight file is structurally valid but its bytes fail validation."""


class ImageDecodeError(VitPercepError):
    """An image file could not be decoded."""
