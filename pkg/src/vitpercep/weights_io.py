"""VPW1: a portable, bit-exact container for encoder weights.

Layout: magic "VPW1", uint32 little-endian header length, UTF-8 JSON header
(config, tensor directory of {name, shape, offset}, payload CRC32 and
length), zero padding so the payload starts on a 64-byte boundary, then the
payload: concatenated little-endian float32 tensors, row-major, each offset
64-byte aligned relative to payload start. The header JSON uses sorted keys
and no whitespace, so serialization is deterministic byte for byte.

Nothing here depends on a deep-learning stack; the file is readable with a
JSON parser and a float32 view in any language.
"""

import dataclasses
import json
import zlib

import numpy as np

from . import rng
from .encoder import LayerWeights, ViTConfig, WeightBundle
from .errors import ContractError, CorruptionError, FormatError, SchemaError

MAGIC = b"VPW1"
ALIGN = 64
TOY_SCALE = 0.02

_LAYER_FIELDS = (
    ("ln1.gamma", "ln1_gamma"), ("ln1.beta", "ln1_beta"),
    ("attn.wq", "wq"), ("attn.bq", "bq"),
    ("attn.wk", "wk"), ("attn.bk", "bk"),
    ("attn.wv", "wv"), ("attn.bv", "bv"),
    ("attn.wo", "wo"), ("attn.bo", "bo"),
    ("ln2.gamma", "ln2_gamma"), ("ln2.beta", "ln2_beta"),
    ("mlp.w1", "mlp_w1"), ("mlp.b1", "mlp_b1"),
    ("mlp.w2", "mlp_w2"), ("mlp.b2", "mlp_b2"),
)


def schema(config: ViTConfig):
    """Canonical (name, shape) list the file must contain, in payload order."""
    d, m = config.embed_dim, config.mlp_dim
    out = [
        ("patch_kernel", (config.patch_dim, d)),
        ("patch_bias", (d,)),
        ("cls_embed", (d,)),
        ("pos_embed", (config.num_patches + 1, d)),
    ]
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
    for i in range(config.num_layers):
        for name, shape in per_layer.items():
            out.append((f"layers.{i}.{name}", shape))
    if config.final_norm:
        out.append(("final_norm.gamma", (d,)))
        out.append(("final_norm.beta", (d,)))
    return out


def bundle_to_dict(bundle: WeightBundle) -> dict:
    tensors = {
        "patch_kernel": bundle.patch_kernel,
        "patch_bias": bundle.patch_bias,
        "cls_embed": bundle.cls_embed,
        "pos_embed": bundle.pos_embed,
    }
    for i, lw in enumerate(bundle.layers):
        for suffix, field in _LAYER_FIELDS:
            tensors[f"layers.{i}.{suffix}"] = getattr(lw, field)
    if bundle.config.final_norm:
        tensors["final_norm.gamma"] = bundle.final_gamma
        tensors["final_norm.beta"] = bundle.final_beta
    return tensors


def bundle_from_dict(config: ViTConfig, tensors: dict) -> WeightBundle:
    layers = []
    for i in range(config.num_layers):
        fields = {
            field: tensors[f"layers.{i}.{suffix}"] for suffix, field in _LAYER_FIELDS
        }
        layers.append(LayerWeights(**fields))
    return WeightBundle(
        config=config,
        patch_kernel=tensors["patch_kernel"],
        patch_bias=tensors["patch_bias"],
        cls_embed=tensors["cls_embed"],
        pos_embed=tensors["pos_embed"],
        layers=tuple(layers),
        final_gamma=tensors.get("final_norm.gamma"),
        final_beta=tensors.get("final_norm.beta"),
    )


def _config_to_header(config: ViTConfig) -> dict:
    d = dataclasses.asdict(config)
    d["norm_mean"] = list(d["norm_mean"])
    d["norm_std"] = list(d["norm_std"])
    return d


def _config_from_header(h) -> ViTConfig:
    if not isinstance(h, dict):
        raise SchemaError("header config is not an object")
    fields = {f.name for f in dataclasses.fields(ViTConfig)}
    unknown = set(h) - fields
    missing = fields - set(h)
    if unknown or missing:
        raise SchemaError(
            f"config keys: missing {sorted(missing)}, unknown {sorted(unknown)}"
        )
    h = dict(h)
    h["norm_mean"] = tuple(h["norm_mean"])
    h["norm_std"] = tuple(h["norm_std"])
    try:
        return ViTConfig(**h)
    except (TypeError, ValueError, ContractError) as e:
        raise SchemaError(f"bad config in header: {e}") from e


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def save(config: ViTConfig, bundle: WeightBundle, path) -> None:
    """Write bundle as a VPW1 file; deterministic, validates before writing."""
    if config != bundle.config:
        raise SchemaError("config does not match the bundle's config")
    tensors = bundle_to_dict(bundle)
    directory = []
    chunks = []
    offset = 0
    for name, shape in schema(config):
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise SchemaError(f"{name}: shape {tuple(arr.shape)} does not match {shape}")
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
        "config": _config_to_header(config),
        "directory": directory,
        "payload_crc32": zlib.crc32(payload),
        "payload_length": len(payload),
        "version": 1,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix_len = len(MAGIC) + 4 + len(hbytes)
    pad = _align(prefix_len) - prefix_len
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(hbytes).to_bytes(4, "little"))
        f.write(hbytes)
        f.write(b"\x00" * pad)
        f.write(payload)


def load(path, dtype=np.float64):
    """Read a VPW1 file; returns (ViTConfig, WeightBundle in `dtype`).

    Every malformation maps to a typed error: FormatError for structural
    problems, SchemaError for name/shape mismatches against the config,
    CorruptionError for truncation or checksum failure.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not a VPW1 file (bad magic)")
    hlen = int.from_bytes(blob[4:8], "little")
    if 8 + hlen > len(blob):
        raise FormatError(f"header length {hlen} exceeds file size {len(blob)}")
    try:
        header = json.loads(blob[8: 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid JSON: {e}") from e
    for key in ("config", "directory", "payload_crc32", "payload_length"):
        if key not in header:
            raise FormatError(f"header missing key {key!r}")
    config = _config_from_header(header["config"])

    want = dict(schema(config))
    directory = header["directory"]
    if not isinstance(directory, list):
        raise FormatError("directory is not a list")
    seen = {}
    for entry in directory:
        if not isinstance(entry, dict) or not {"name", "shape", "offset"} <= set(entry):
            raise FormatError(f"malformed directory entry: {entry!r}")
        name = entry["name"]
        if name in seen:
            raise FormatError(f"duplicate directory entry {name!r}")
        seen[name] = entry
    missing = sorted(set(want) - set(seen))
    extra = sorted(set(seen) - set(want))
    if missing or extra:
        raise SchemaError(f"tensor names: missing {missing}, unexpected {extra}")
    for name, shape in want.items():
        got = tuple(seen[name]["shape"])
        if got != shape:
            raise SchemaError(f"{name}: shape {got} does not match expected {shape}")

    payload_len = header["payload_length"]
    payload_start = _align(8 + hlen)
    payload = blob[payload_start: payload_start + payload_len]
    if len(payload) < payload_len:
        raise CorruptionError(
            f"payload truncated: {len(payload)} of {payload_len} bytes present"
        )
    spans = []
    for name, shape in want.items():
        offset = seen[name]["offset"]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if not isinstance(offset, int) or offset % ALIGN != 0:
            raise FormatError(f"{name}: offset {offset!r} not {ALIGN}-byte aligned")
        if offset + nbytes > payload_len:
            raise CorruptionError(f"{name}: tensor extends past end of payload")
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise FormatError(f"tensors {n0!r} and {n1!r} overlap in payload")
    crc = zlib.crc32(payload)
    if crc != header["payload_crc32"]:
        raise CorruptionError(
            f"payload CRC32 {crc:#010x} does not match header {header['payload_crc32']:#010x}"
        )

    tensors = {}
    for name, shape in want.items():
        offset = seen[name]["offset"]
        count = int(np.prod(shape, dtype=np.int64))
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arr = np.ascontiguousarray(flat.reshape(shape), dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise CorruptionError(f"{name}: non-finite values in payload")
        arr.flags.writeable = False
        tensors[name] = arr
    return config, bundle_from_dict(config, tensors)


def generate_toy(config: ViTConfig, seed: int, dtype=np.float64) -> WeightBundle:
    """Deterministic small random weights for tests and demos.

    Each tensor gets its own counter-based stream keyed by its schema name,
    so values do not shift when the schema around them changes. Values are
    narrowed through float32 so the bundle survives a VPW1 round trip
    bit-for-bit even when generated in float64.
    """
    tensors = {}
    for name, shape in schema(config):
        size = int(np.prod(shape, dtype=np.int64))
        noise = TOY_SCALE * rng.symmetric_uniforms(seed, name, size)
        if name.endswith("gamma"):
            vals = 1.0 + noise
        else:
            vals = noise
        arr = vals.astype(np.float32).astype(dtype).reshape(shape)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        tensors[name] = arr
    return bundle_from_dict(config, tensors)
