"""Checkpoint tensor naming -> VPW1 schema naming.

The correspondence for each supported flavor lives in a JSON table under
flavors/, not in code: which key holds the patch kernel, how block keys are
spelled, what to ignore (MAE ships its decoder, classifiers ship heads), and
which pixel normalization the weights assume. Mapping itself is pure
rearrangement; values are only ever widened or narrowed to float32.

Two layout conventions have to be bridged. Linear weights arrive as
(out, in) and the container wants (in, out), so every weight matrix is
transposed. The patch kernel arrives as a conv filter (d, C, p, p) and the
container wants one row per patch pixel in row-major, channel-last order:
transpose to (p, p, C, d), then flatten.
"""

import json
import math
import re
from importlib import resources

import numpy as np

from .errors import FormatError, MappingError, SchemaError

_BLOCK_SUFFIXES = ("ln1", "qkv", "attn_out", "ln2", "fc1", "fc2")


def available_flavors():
    root = resources.files("vpwexport") / "flavors"
    return sorted(p.name[: -len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def load_flavor(name: str) -> dict:
    root = resources.files("vpwexport") / "flavors"
    entry = root / f"{name}.json"
    if not entry.is_file():
        raise MappingError(
            f"unknown flavor {name!r}; available: {', '.join(available_flavors())}"
        )
    return json.loads(entry.read_text("utf-8"))


def read_checkpoint(path, table: dict) -> dict:
    """Load a .pth state dict and return {key: float32 ndarray}.

    Unwraps container keys like "model" or "teacher", strips module/backbone
    prefixes, and drops keys the flavor declares irrelevant (decoders,
    classification heads). Everything left must be a tensor.
    """
    import torch

    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        raise FormatError(f"cannot read checkpoint: {e}") from e
    except Exception as e:  # torch wraps zip/pickle failures inconsistently
        raise FormatError(f"{path}: not a loadable checkpoint: {e}") from e
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: checkpoint is not a state dict")
    for key in table["wrapper_keys"]:
        if key in raw and isinstance(raw[key], dict):
            raw = raw[key]
            break
    state = {}
    bad = []
    for key, value in raw.items():
        for prefix in table["strip_prefixes"]:
            if key.startswith(prefix):
                key = key[len(prefix):]
        if any(key.startswith(p) for p in table["ignore_prefixes"]):
            continue
        if isinstance(value, torch.Tensor):
            state[key] = value.detach().cpu().numpy().astype(np.float32)
        else:
            bad.append(key)
    if bad:
        raise MappingError(
            f"non-tensor entries in checkpoint: {sorted(bad)}", unmatched=bad
        )
    return state


def _classify(state: dict, table: dict):
    """Split keys into fixed roles and per-block roles; reject leftovers."""
    keys = table["keys"]
    fixed = {
        keys["patch_weight"]: "patch_weight",
        keys["patch_bias"]: "patch_bias",
        keys["cls"]: "cls",
        keys["pos"]: "pos",
        keys["final_norm"] + ".weight": "final_gamma",
        keys["final_norm"] + ".bias": "final_beta",
    }
    block_format = keys["block_format"]
    block_re = re.compile(
        "^" + re.escape(block_format).replace(re.escape("{i}"), r"(\d+)") + "(.+)$"
    )
    suffix_role = {}
    for role in _BLOCK_SUFFIXES:
        suffix_role[keys[role] + ".weight"] = (role, "weight")
        suffix_role[keys[role] + ".bias"] = (role, "bias")

    roles = {}
    blocks = {}
    unmatched = []
    for key in state:
        if key in fixed:
            roles[fixed[key]] = state[key]
            continue
        m = block_re.match(key)
        if m and m.group(2) in suffix_role:
            idx = int(m.group(1))
            blocks.setdefault(idx, {})[suffix_role[m.group(2)]] = state[key]
        else:
            unmatched.append(key)
    if unmatched:
        raise MappingError(
            "checkpoint keys with no place in the schema: "
            + ", ".join(sorted(unmatched)),
            unmatched=unmatched,
        )

    missing = [k for k, role in fixed.items()
               if role not in roles and not role.startswith("final_")]
    if ("final_gamma" in roles) != ("final_beta" in roles):
        missing.append(keys["final_norm"] + ".weight/.bias (only one present)")
    if not blocks:
        missing.append(block_format.format(i=0) + "* (no transformer blocks)")
    else:
        depth = max(blocks) + 1
        want = set(suffix_role.values())
        for i in range(depth):
            have = set(blocks.get(i, ()))
            for role, part in sorted(want - have):
                missing.append(block_format.format(i=i) + keys[role] + "." + part)
    if missing:
        raise MappingError(
            "checkpoint is missing required tensors: " + ", ".join(missing),
            unmatched=missing,
        )
    return roles, blocks


def map_checkpoint(state: dict, table: dict):
    """(config dict, VPW1-named tensor dict) for a cleaned-up state dict."""
    roles, blocks = _classify(state, table)

    pw = roles["patch_weight"]
    if pw.ndim != 4 or pw.shape[2] != pw.shape[3]:
        raise SchemaError(f"patch kernel shape {pw.shape}, want (d, C, p, p)")
    d, channels, patch = pw.shape[0], pw.shape[1], pw.shape[2]

    pos = roles["pos"].reshape(-1, roles["pos"].shape[-1])
    if pos.shape[1] != d:
        raise SchemaError(f"pos embed width {pos.shape[1]} != embed dim {d}")
    n = pos.shape[0] - 1
    grid = math.isqrt(n)
    if grid * grid != n:
        raise SchemaError(f"{n} patch positions do not form a square grid")
    image_size = grid * patch

    head_dim = table["head_dim"]
    if d % head_dim != 0:
        raise SchemaError(f"embed dim {d} not divisible by head dim {head_dim}")

    depth = max(blocks) + 1
    fc1 = blocks[0][("fc1", "weight")]
    if fc1.shape[1] != d:
        raise SchemaError(f"mlp.fc1 input width {fc1.shape[1]} != embed dim {d}")
    mlp_ratio = fc1.shape[0] / d

    config = {
        "image_size": image_size,
        "patch_size": patch,
        "embed_dim": d,
        "num_layers": depth,
        "num_heads": d // head_dim,
        "mlp_ratio": mlp_ratio,
        "channels": channels,
        "flavor": table["flavor"],
        "norm_mean": list(table["normalization"]["mean"]),
        "norm_std": list(table["normalization"]["std"]),
        "final_norm": "final_gamma" in roles,
    }

    tensors = {
        "patch_kernel": pw.transpose(2, 3, 1, 0).reshape(patch * patch * channels, d),
        "patch_bias": roles["patch_bias"].reshape(-1),
        "cls_embed": roles["cls"].reshape(-1),
        "pos_embed": pos,
    }
    for i in range(depth):
        b = blocks[i]
        qkv_w, qkv_b = b[("qkv", "weight")], b[("qkv", "bias")]
        if qkv_w.shape != (3 * d, d) or qkv_b.shape != (3 * d,):
            raise SchemaError(
                f"block {i}: fused qkv shapes {qkv_w.shape}/{qkv_b.shape}, "
                f"want ({3 * d}, {d})/({3 * d},)"
            )
        pre = f"layers.{i}."
        tensors[pre + "ln1.gamma"] = b[("ln1", "weight")]
        tensors[pre + "ln1.beta"] = b[("ln1", "bias")]
        for j, part in enumerate("qkv"):
            tensors[pre + f"attn.w{part}"] = qkv_w[j * d:(j + 1) * d].T
            tensors[pre + f"attn.b{part}"] = qkv_b[j * d:(j + 1) * d]
        tensors[pre + "attn.wo"] = b[("attn_out", "weight")].T
        tensors[pre + "attn.bo"] = b[("attn_out", "bias")]
        tensors[pre + "ln2.gamma"] = b[("ln2", "weight")]
        tensors[pre + "ln2.beta"] = b[("ln2", "bias")]
        tensors[pre + "mlp.w1"] = b[("fc1", "weight")].T
        tensors[pre + "mlp.b1"] = b[("fc1", "bias")]
        tensors[pre + "mlp.w2"] = b[("fc2", "weight")].T
        tensors[pre + "mlp.b2"] = b[("fc2", "bias")]
    if config["final_norm"]:
        tensors["final_norm.gamma"] = roles["final_gamma"]
        tensors["final_norm.beta"] = roles["final_beta"]
    return config, tensors
