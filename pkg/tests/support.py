"""Shared fixtures' building blocks, importable from any test module."""

import contextlib
import io

import numpy as np

from vitpercep import ViTConfig
from vitpercep import rng
from vitpercep.cli import main as cli_main

FIXTURE_SIZE = 16


def toy_config(**overrides):
    base = dict(image_size=16, patch_size=4, embed_dim=8, num_layers=3,
                num_heads=2, flavor="toy")
    base.update(overrides)
    return ViTConfig(**base)


def make_sharp_image(size=FIXTURE_SIZE, seed=7):
    """Structured synthetic test image: smooth waves plus fine texture."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    base = np.stack([
        0.5 + 0.4 * np.sin(2 * np.pi * (xx * 1.7 + yy * 0.6)),
        0.5 + 0.4 * np.cos(2 * np.pi * (xx * 0.9 - yy * 1.3)),
        0.5 + 0.4 * np.sin(2 * np.pi * (xx + yy)),
    ], axis=-1)
    tex = 0.12 * (rng.uniforms(seed, "fixture-texture", size * size * 3)
                  .reshape(size, size, 3) - 0.5)
    return np.clip(base + tex, 0.02, 0.98)


def gaussian_blur(img, sigma=1.2, radius=3):
    """Separable blur with reflect padding; the fixture degradation."""
    size = img.shape[0]
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    k /= k.sum()
    out = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    out = sum(k[i] * out[i:i + size] for i in range(2 * radius + 1))
    out = np.pad(out, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = sum(k[i] * out[:, i:i + size] for i in range(2 * radius + 1))
    return out


def noised_copy(img, tag, amplitude=0.002, seed=11):
    n = amplitude * 2.0 * (rng.uniforms(seed, tag, img.size)
                           .reshape(img.shape) - 0.5)
    return np.clip(img + n, 0.0, 1.0)


def run_cli(argv):
    """Invoke the CLI in-process; returns (exit_code, stdout_text)."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli_main([str(a) for a in argv])
    return code, buf.getvalue()
