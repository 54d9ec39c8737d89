"""Wall-clock cost of tapping deeper layers, on full ViT-B geometry.

The stack is run once per tap depth; the reported fit should come out very
close to a straight line (every layer costs the same).
"""

import time

import numpy as np

from vitpercep import ViTConfig, embed, forward_to_layer, generate_toy, patchify
from vitpercep.autodiff import Tensor

config = ViTConfig(image_size=224, patch_size=16, embed_dim=768,
                   num_layers=12, num_heads=12, flavor="toy")
print("generating ViT-B sized toy weights (float32)...")
weights = generate_toy(config, seed=0, dtype=np.float32)

rs = np.random.RandomState(0)
image = Tensor(rs.rand(224, 224, 3).astype(np.float32))
tokens = embed(patchify(image, config), weights)

depths = list(range(1, 13))
times = []
for l in depths:
    best = float("inf")
    for _ in range(2):
        t0 = time.perf_counter()
        forward_to_layer(tokens, weights, l)
        best = min(best, time.perf_counter() - t0)
    times.append(best)
    print(f"  depth {l:2d}: {best * 1e3:8.1f} ms")

slope, intercept = np.polyfit(depths, times, 1)
fit = np.polyval([slope, intercept], depths)
ss_res = np.sum((np.array(times) - fit) ** 2)
ss_tot = np.sum((np.array(times) - np.mean(times)) ** 2)
print(f"linear fit: {slope * 1e3:.1f} ms/layer, R^2 = {1 - ss_res / ss_tot:.4f}")
