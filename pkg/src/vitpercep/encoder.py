"""Minimal ViT encoder: patchify, embed, optional token dropping, L layers.

The encoder is inference-only and weight-agnostic: weights arrive as a
WeightBundle (see weights_io), images as (H, W, C) arrays in [0, 1]. Every
step runs on autodiff Tensors, so putting the image on a Tape makes any
scalar of the features differentiable back to the pixels.

Feature taps at layer l: the token matrix is the output of layer l after the
MLP residual; queries/keys/values are the full-width projections computed
inside layer l's attention. When l equals the depth, the final normalization
(if the bundle carries one) can be applied to the tokens on request; default
is the raw residual stream.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tensor
from .errors import ContractError, DimensionError

LN_EPS = 1e-6
ATTN_FLAVORS = ("supervised-vit", "dino", "mae", "toy")
FEATURE_KINDS = ("token", "query", "key", "value")


@dataclass(frozen=True)
class ViTConfig:
    image_size: int
    patch_size: int
    embed_dim: int
    num_layers: int
    num_heads: int
    mlp_ratio: float = 4.0
    channels: int = 3
    flavor: str = "toy"
    norm_mean: tuple = (0.0, 0.0, 0.0)
    norm_std: tuple = (1.0, 1.0, 1.0)
    final_norm: bool = True

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ContractError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise ContractError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim <= 0 or self.num_layers <= 0 or self.num_heads <= 0:
            raise ContractError("embed_dim, num_layers, num_heads must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ContractError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.mlp_ratio <= 0:
            raise ContractError("mlp_ratio must be positive")
        if self.channels <= 0:
            raise ContractError("channels must be positive")
        if self.flavor not in ATTN_FLAVORS:
            raise ContractError(f"unknown flavor {self.flavor!r}, expected one of {ATTN_FLAVORS}")
        if len(self.norm_mean) != self.channels or len(self.norm_std) != self.channels:
            raise ContractError("norm_mean/norm_std must have one entry per channel")
        if any(s <= 0 for s in self.norm_std):
            raise ContractError("norm_std entries must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def mlp_dim(self) -> int:
        m = self.mlp_ratio * self.embed_dim
        if m != int(m):
            raise ContractError(f"mlp_ratio {self.mlp_ratio} gives non-integer hidden size")
        return int(m)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


@dataclass(frozen=True)
class LayerWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass(frozen=True)
class WeightBundle:
    """All encoder parameters, shape-checked against the config once."""

    config: ViTConfig
    patch_kernel: np.ndarray
    patch_bias: np.ndarray
    cls_embed: np.ndarray
    pos_embed: np.ndarray
    layers: tuple
    final_gamma: np.ndarray = None
    final_beta: np.ndarray = None

    def __post_init__(self):
        c = self.config
        if len(self.layers) != c.num_layers:
            raise DimensionError(
                f"bundle has {len(self.layers)} layers, config says {c.num_layers}"
            )
        checks = [
            ("patch_kernel", self.patch_kernel, (c.patch_dim, c.embed_dim)),
            ("patch_bias", self.patch_bias, (c.embed_dim,)),
            ("cls_embed", self.cls_embed, (c.embed_dim,)),
            ("pos_embed", self.pos_embed, (c.num_patches + 1, c.embed_dim)),
        ]
        if c.final_norm:
            checks += [
                ("final_norm.gamma", self.final_gamma, (c.embed_dim,)),
                ("final_norm.beta", self.final_beta, (c.embed_dim,)),
            ]
        d, m = c.embed_dim, c.mlp_dim
        per_layer = {
            "ln1_gamma": (d,), "ln1_beta": (d,),
            "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
            "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
            "ln2_gamma": (d,), "ln2_beta": (d,),
            "mlp_w1": (d, m), "mlp_b1": (m,), "mlp_w2": (m, d), "mlp_b2": (d,),
        }
        for i, lw in enumerate(self.layers):
            for field, want in per_layer.items():
                checks.append((f"layers.{i}.{field}", getattr(lw, field), want))
        for name, arr, want in checks:
            if arr is None or tuple(arr.shape) != want:
                got = None if arr is None else tuple(arr.shape)
                raise DimensionError(f"{name}: expected shape {want}, got {got}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} holds non-finite values")

    @property
    def dtype(self):
        return self.patch_kernel.dtype

    def astype(self, dtype) -> "WeightBundle":
        if self.patch_kernel.dtype == np.dtype(dtype):
            return self

        def conv(a):
            return None if a is None else np.ascontiguousarray(a, dtype=dtype)

        layers = tuple(
            LayerWeights(**{f: conv(getattr(lw, f)) for f in lw.__dataclass_fields__})
            for lw in self.layers
        )
        return WeightBundle(
            config=self.config,
            patch_kernel=conv(self.patch_kernel),
            patch_bias=conv(self.patch_bias),
            cls_embed=conv(self.cls_embed),
            pos_embed=conv(self.pos_embed),
            layers=layers,
            final_gamma=conv(self.final_gamma),
            final_beta=conv(self.final_beta),
        )


@dataclass(frozen=True)
class TokenMask:
    """Which original token rows survive dropping; row 0 (CLS) always does."""

    kept_indices: tuple
    ratio: float
    seed: int

    def __post_init__(self):
        idx = self.kept_indices
        if len(idx) == 0 or idx[0] != 0:
            raise ContractError("kept_indices must start with the CLS index 0")
        if list(idx) != sorted(set(idx)):
            raise ContractError("kept_indices must be strictly ascending and unique")


@dataclass(frozen=True)
class FeatureBundle:
    tokens: Tensor
    queries: Tensor
    keys: Tensor
    values: Tensor
    layer: int
    mask: TokenMask


@lru_cache(maxsize=16)
def _patch_index_map(image_size, patch_size, channels):
    # flat pixel indices so that row i of the result is patch i's pixels in
    # row-major, channel-last order
    g = image_size // patch_size
    rows = []
    for pr in range(g):
        for pc in range(g):
            r = (pr * patch_size + np.arange(patch_size))[:, None, None]
            c = (pc * patch_size + np.arange(patch_size))[None, :, None]
            ch = np.arange(channels)[None, None, :]
            rows.append(((r * image_size + c) * channels + ch).reshape(-1))
    out = np.stack(rows)
    out.flags.writeable = False
    return out


def patchify(image, config: ViTConfig) -> Tensor:
    """(H, W, C) image -> (n, patch_dim) normalized patch rows."""
    image = ad.as_tensor(image)
    want = (config.image_size, config.image_size, config.channels)
    if tuple(image.shape) != want:
        raise DimensionError(f"image shape {tuple(image.shape)}, config wants {want}")
    mean = np.asarray(config.norm_mean, dtype=image.dtype)
    std = np.asarray(config.norm_std, dtype=image.dtype)
    normed = ad.div(ad.sub(image, mean), std)
    idx = _patch_index_map(config.image_size, config.patch_size, config.channels)
    return ad.take_flat(normed, idx, (config.num_patches, config.patch_dim))


def embed(patches, weights: WeightBundle) -> Tensor:
    """Patch rows -> (n+1, d) token matrix with CLS at row 0, positions added."""
    c = weights.config
    patches = ad.as_tensor(patches)
    if tuple(patches.shape) != (c.num_patches, c.patch_dim):
        raise DimensionError(
            f"patches shape {tuple(patches.shape)}, expected {(c.num_patches, c.patch_dim)}"
        )
    proj = ad.affine(patches, weights.patch_kernel, weights.patch_bias)
    body = ad.add(proj, weights.pos_embed[1:])
    head = Tensor((weights.cls_embed + weights.pos_embed[0]).reshape(1, -1))
    return ad.concat_rows([head, body])


def mask_for(config: ViTConfig, ratio: float, seed: int) -> TokenMask:
    """The TokenMask any image gets under (config, ratio, seed)."""
    if not 0.0 <= ratio < 1.0:
        raise ContractError(f"mask ratio must be in [0, 1), got {ratio}")
    n = config.num_patches
    keep = int(np.floor((1.0 - ratio) * n + 0.5))  # round half up
    if ratio == 0.0:
        kept = tuple(range(n + 1))
    else:
        patch_idx = rng.sample_without_replacement(seed, "token-mask", n, keep)
        kept = (0,) + tuple(int(i) + 1 for i in patch_idx)
    return TokenMask(kept_indices=kept, ratio=float(ratio), seed=int(seed))


def apply_mask(tokens, config: ViTConfig, ratio: float, seed: int):
    """Drop masked patch rows; returns (kept token matrix, TokenMask)."""
    tokens = ad.as_tensor(tokens)
    if tuple(tokens.shape) != (config.num_patches + 1, config.embed_dim):
        raise DimensionError(
            f"token matrix shape {tuple(tokens.shape)}, expected "
            f"{(config.num_patches + 1, config.embed_dim)}"
        )
    mask = mask_for(config, ratio, seed)
    if ratio == 0.0:
        return tokens, mask
    return ad.gather_rows(tokens, np.asarray(mask.kept_indices, dtype=np.intp)), mask


def forward_to_layer(tokens, weights: WeightBundle, l: int, mask: TokenMask = None,
                     apply_final_norm: bool = False) -> FeatureBundle:
    """Run layers 1..l and tap {tokens, queries, keys, values} at layer l."""
    c = weights.config
    if not 1 <= l <= c.num_layers:
        raise ContractError(f"layer {l} outside [1, {c.num_layers}]")
    t = ad.as_tensor(tokens)
    if t.data.ndim != 2 or t.shape[1] != c.embed_dim:
        raise DimensionError(f"token matrix shape {tuple(t.shape)}, want (*, {c.embed_dim})")
    if mask is None:
        mask = mask_for(c, 0.0, 0)
    if len(mask.kept_indices) != t.shape[0]:
        raise ContractError(
            f"mask keeps {len(mask.kept_indices)} rows but tokens have {t.shape[0]}"
        )
    dh = c.head_dim
    inv_sqrt_dh = 1.0 / np.sqrt(dh)
    q_tap = k_tap = v_tap = None
    for i in range(l):
        lw = weights.layers[i]
        h = ad.layer_norm(t, lw.ln1_gamma, lw.ln1_beta, LN_EPS)
        q = ad.affine(h, lw.wq, lw.bq)
        k = ad.affine(h, lw.wk, lw.bk)
        v = ad.affine(h, lw.wv, lw.bv)
        heads = []
        for hh in range(c.num_heads):
            j0, j1 = hh * dh, (hh + 1) * dh
            qh = ad.slice_cols(q, j0, j1)
            kh = ad.slice_cols(k, j0, j1)
            vh = ad.slice_cols(v, j0, j1)
            attn = ad.softmax_rows(ad.attn_scores(qh, kh, inv_sqrt_dh))
            heads.append(ad.matmul(attn, vh))
        ctx = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
        t = ad.add(t, ad.affine(ctx, lw.wo, lw.bo))
        h2 = ad.layer_norm(t, lw.ln2_gamma, lw.ln2_beta, LN_EPS)
        m = ad.affine(ad.gelu(ad.affine(h2, lw.mlp_w1, lw.mlp_b1)), lw.mlp_w2, lw.mlp_b2)
        t = ad.add(t, m)
        if i == l - 1:
            q_tap, k_tap, v_tap = q, k, v
    if apply_final_norm and l == c.num_layers and c.final_norm:
        t = ad.layer_norm(t, weights.final_gamma, weights.final_beta, LN_EPS)
    return FeatureBundle(tokens=t, queries=q_tap, keys=k_tap, values=v_tap,
                         layer=l, mask=mask)


def extract(image, weights: WeightBundle, l: int, feature_kind: str = "token",
            mask_ratio: float = 0.0, seed: int = 0,
            apply_final_norm: bool = False):
    """patchify -> embed -> mask -> forward; returns (feature matrix, mask)."""
    if feature_kind not in FEATURE_KINDS:
        raise ContractError(f"feature kind {feature_kind!r}, expected one of {FEATURE_KINDS}")
    c = weights.config
    patches = patchify(image, c)
    tokens = embed(patches, weights)
    kept, mask = apply_mask(tokens, c, mask_ratio, seed)
    bundle = forward_to_layer(kept, weights, l, mask=mask,
                              apply_final_norm=apply_final_norm)
    selected = {
        "token": bundle.tokens,
        "query": bundle.queries,
        "key": bundle.keys,
        "value": bundle.values,
    }[feature_kind]
    return selected, mask
