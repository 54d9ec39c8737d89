"""vpwexport: pretrained ViT checkpoints -> VPW1 weight containers.

Supported checkpoint families ("flavors") are described by data tables, one
JSON file per flavor; adding a source means adding a table, not code. Every
export writes a manifest with per-tensor CRC32s so a container can be
re-verified long after the source checkpoint is gone.
"""

from .errors import ExportError, FormatError, MappingError, SchemaError
from .export import VerifyResult, export, manifest_path_for, verify
from .mapping import available_flavors, load_flavor

__all__ = [
    "ExportError", "FormatError", "MappingError", "SchemaError",
    "VerifyResult", "export", "manifest_path_for", "verify",
    "available_flavors", "load_flavor",
]
