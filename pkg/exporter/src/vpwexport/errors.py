"""Error types raised by the exporter.

Every deliberate failure is one of these; anything else escaping the
package is a bug.
"""


class ExportError(Exception):
    """Base class for all exporter failures."""


class FormatError(ExportError):
    """A file could not be read or parsed at the byte level."""


class MappingError(ExportError):
    """Checkpoint tensor names do not line up with the flavor table."""

    def __init__(self, message, unmatched=()):
        super().__init__(message)
        self.unmatched = tuple(unmatched)


class SchemaError(ExportError):
    """Tensor shapes are inconsistent with the inferred model geometry."""
