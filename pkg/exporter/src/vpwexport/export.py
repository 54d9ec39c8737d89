"""Export a pretrained checkpoint to VPW1 plus a verification manifest.

export() writes two files: the container itself and, beside it, a JSON
manifest recording where the weights came from (path, sha256 of the source
bytes), the inferred model geometry, the pixel normalization the flavor
assumes, and a CRC32 per tensor. verify() re-derives the per-tensor CRCs
from a container and compares them against a manifest, reporting the first
tensor that differs. Exports are deterministic, so re-exporting the same
checkpoint reproduces every CRC.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

from . import container, mapping
from .errors import FormatError

TOOL = "vpwexport"
VERSION = "0.1.0"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path_for(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def export(checkpoint_ref, flavor: str, out_path):
    """Convert checkpoint_ref to VPW1 at out_path; returns the manifest dict.

    The manifest lands at manifest_path_for(out_path). Raises MappingError
    when checkpoint names do not line up with the flavor table, SchemaError
    when shapes are inconsistent, FormatError when a file cannot be read.
    """
    table = mapping.load_flavor(flavor)
    state = mapping.read_checkpoint(checkpoint_ref, table)
    config, tensors = mapping.map_checkpoint(state, table)
    container.write(config, tensors, out_path)

    # checksum what actually hit the disk, not the in-memory arrays
    header, payload = container.read(out_path)
    manifest = {
        "tool": TOOL,
        "version": VERSION,
        "source": str(checkpoint_ref),
        "source_family": table["source_family"],
        "checkpoint_sha256": _sha256(checkpoint_ref),
        "flavor": table["flavor"],
        "config": config,
        "normalization": table["normalization"],
        "tensors": [
            {"name": name, "shape": list(shape), "crc32": crc}
            for name, shape, crc in container.tensor_crcs(header, payload)
        ],
    }
    with open(manifest_path_for(out_path), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


@dataclasses.dataclass(frozen=True)
class VerifyResult:
    ok: bool
    tensor: str = ""
    detail: str = ""


def _load_manifest(path) -> dict:
    try:
        with open(path, "rb") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"cannot read manifest: {e}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: manifest is not valid JSON: {e}") from e
    for key in ("config", "tensors", "flavor"):
        if not isinstance(manifest, dict) or key not in manifest:
            raise FormatError(f"{path}: manifest has no {key!r} field")
    return manifest


def verify(vpw_path, manifest_path) -> VerifyResult:
    """Compare a VPW1 file against a manifest; never raises for mismatches.

    Unreadable manifests raise FormatError (there is nothing to compare);
    every discrepancy in the container, down to a single flipped byte,
    comes back as a failed result naming the first differing tensor.
    """
    manifest = _load_manifest(manifest_path)
    try:
        header, payload = container.read(vpw_path)
        actual = container.tensor_crcs(header, payload)
    except FormatError as e:
        return VerifyResult(False, detail=str(e))

    file_config = header.get("config")
    for key, want in manifest["config"].items():
        if not isinstance(file_config, dict) or file_config.get(key) != want:
            got = file_config.get(key) if isinstance(file_config, dict) else None
            return VerifyResult(
                False, detail=f"config mismatch on {key!r}: file has {got!r}, "
                              f"manifest has {want!r}"
            )

    want = [(t["name"], tuple(t["shape"]), t["crc32"]) for t in manifest["tensors"]]
    for i, (name, shape, crc) in enumerate(want):
        if i >= len(actual):
            return VerifyResult(False, name, f"{name}: missing from file")
        aname, ashape, acrc = actual[i]
        if aname != name:
            return VerifyResult(
                False, name, f"tensor order diverges: file has {aname!r}, "
                             f"manifest has {name!r}"
            )
        if ashape != shape:
            return VerifyResult(
                False, name, f"{name}: shape {ashape} in file, {shape} in manifest"
            )
        if acrc != crc:
            return VerifyResult(
                False, name, f"{name}: CRC32 {acrc} in file, {crc} in manifest"
            )
    if len(actual) > len(want):
        extra = actual[len(want)][0]
        return VerifyResult(False, extra, f"{extra}: in file but not in manifest")
    return VerifyResult(True)
