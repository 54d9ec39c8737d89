"""Builders for synthetic checkpoints in the public naming convention."""

import numpy as np
import torch


def make_state(dim=64, depth=2, patch=4, image=16, channels=3, mlp_ratio=4,
               seed=0, scale=0.05):
    torch.manual_seed(seed)
    n = (image // patch) ** 2
    m = int(dim * mlp_ratio)

    def t(*shape):
        return torch.randn(*shape) * scale

    sd = {
        "cls_token": t(1, 1, dim),
        "pos_embed": t(1, n + 1, dim),
        "patch_embed.proj.weight": t(dim, channels, patch, patch),
        "patch_embed.proj.bias": t(dim),
        "norm.weight": 1.0 + t(dim),
        "norm.bias": t(dim),
    }
    for i in range(depth):
        p = f"blocks.{i}."
        sd[p + "norm1.weight"] = 1.0 + t(dim)
        sd[p + "norm1.bias"] = t(dim)
        sd[p + "attn.qkv.weight"] = t(3 * dim, dim)
        sd[p + "attn.qkv.bias"] = t(3 * dim)
        sd[p + "attn.proj.weight"] = t(dim, dim)
        sd[p + "attn.proj.bias"] = t(dim)
        sd[p + "norm2.weight"] = 1.0 + t(dim)
        sd[p + "norm2.bias"] = t(dim)
        sd[p + "mlp.fc1.weight"] = t(m, dim)
        sd[p + "mlp.fc1.bias"] = t(m)
        sd[p + "mlp.fc2.weight"] = t(dim, m)
        sd[p + "mlp.fc2.bias"] = t(dim)
    return sd


def add_decoder_noise(sd, dim=64):
    """Keys an autoencoder checkpoint carries that the export must drop."""
    sd = dict(sd)
    sd["mask_token"] = torch.zeros(1, 1, dim)
    sd["decoder_embed.weight"] = torch.zeros(dim, dim)
    sd["decoder_embed.bias"] = torch.zeros(dim)
    sd["decoder_norm.weight"] = torch.ones(dim)
    sd["decoder_pred.weight"] = torch.zeros(48, dim)
    return sd


def as_numpy_state(sd):
    return {k: v.numpy().astype(np.float32) for k, v in sd.items()}
