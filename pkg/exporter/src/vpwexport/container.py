"""Writer and minimal reader for the VPW1 weight container.

Implements the published byte layout directly rather than calling into the
consumer library: magic "VPW1", uint32 little-endian header length, compact
sorted-key JSON header, zero padding to a 64-byte boundary, then
little-endian float32 tensors, each 64-byte aligned within the payload.
Keeping the implementations separate means a bug in either side shows up as
a round-trip failure instead of being invisible.
"""

import json
import zlib

import numpy as np

from .errors import FormatError, SchemaError

MAGIC = b"VPW1"
ALIGN = 64

_CONFIG_KEYS = (
    "image_size", "patch_size", "embed_dim", "num_layers", "num_heads",
    "mlp_ratio", "channels", "flavor", "norm_mean", "norm_std", "final_norm",
)

_LAYER_SUFFIXES = (
    "ln1.gamma", "ln1.beta",
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo",
    "ln2.gamma", "ln2.beta",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


def schema(config: dict):
    """(name, shape) pairs the container must hold, in payload order."""
    d = config["embed_dim"]
    m = int(round(d * config["mlp_ratio"]))
    grid = config["image_size"] // config["patch_size"]
    n = grid * grid
    pdim = config["patch_size"] ** 2 * config["channels"]
    per_layer = {
        "ln1.gamma": (d,), "ln1.beta": (d,),
        "attn.wq": (d, d), "attn.bq": (d,),
        "attn.wk": (d, d), "attn.bk": (d,),
        "attn.wv": (d, d), "attn.bv": (d,),
        "attn.wo": (d, d), "attn.bo": (d,),
        "ln2.gamma": (d,), "ln2.beta": (d,),
        "mlp.w1": (d, m), "mlp.b1": (m,),
        "mlp.w2": (m, d), "mlp.b2": (d,),
    }
    out = [
        ("patch_kernel", (pdim, d)),
        ("patch_bias", (d,)),
        ("cls_embed", (d,)),
        ("pos_embed", (n + 1, d)),
    ]
    for i in range(config["num_layers"]):
        for suffix in _LAYER_SUFFIXES:
            out.append((f"layers.{i}.{suffix}", per_layer[suffix]))
    if config["final_norm"]:
        out.append(("final_norm.gamma", (d,)))
        out.append(("final_norm.beta", (d,)))
    return out


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def write(config: dict, tensors: dict, path) -> list:
    """Serialize tensors to `path`; returns the directory that was written.

    `config` must carry exactly the keys the header schema defines, and
    `tensors` must match schema(config) name for name and shape for shape.
    """
    if set(config) != set(_CONFIG_KEYS):
        raise SchemaError(
            f"config keys {sorted(set(config) ^ set(_CONFIG_KEYS))} out of place"
        )
    want = schema(config)
    missing = [n for n, _ in want if n not in tensors]
    extra = sorted(set(tensors) - {n for n, _ in want})
    if missing or extra:
        raise SchemaError(f"tensor set mismatch: missing {missing}, extra {extra}")
    directory = []
    chunks = []
    offset = 0
    for name, shape in want:
        arr = np.asarray(tensors[name])
        if tuple(arr.shape) != shape:
            raise SchemaError(f"{name}: shape {tuple(arr.shape)}, schema wants {shape}")
        aligned = _align(offset)
        if aligned != offset:
            chunks.append(b"\x00" * (aligned - offset))
            offset = aligned
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "config": dict(config),
        "directory": directory,
        "payload_crc32": zlib.crc32(payload),
        "payload_length": len(payload),
        "version": 1,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = len(MAGIC) + 4 + len(hbytes)
    pad = _align(prefix) - prefix
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(hbytes).to_bytes(4, "little"))
        f.write(hbytes)
        f.write(b"\x00" * pad)
        f.write(payload)
    return directory


def read(path):
    """Parse a VPW1 file far enough to checksum its tensors.

    Returns (header dict, payload bytes). Structural validation beyond what
    checksumming needs is the consumer library's job.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a VPW1 file")
    hlen = int.from_bytes(blob[4:8], "little")
    if 8 + hlen > len(blob):
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON: {e}") from e
    if not isinstance(header, dict) or "directory" not in header:
        raise FormatError(f"{path}: header has no tensor directory")
    payload = blob[_align(8 + hlen) :]
    return header, payload


def tensor_crcs(header: dict, payload: bytes):
    """[(name, shape, crc32)] for every directory entry, in file order."""
    out = []
    for entry in header["directory"]:
        name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        end = offset + nbytes
        if end > len(payload):
            raise FormatError(f"{name}: tensor extends past end of payload")
        out.append((name, tuple(shape), zlib.crc32(payload[offset:end])))
    return out
