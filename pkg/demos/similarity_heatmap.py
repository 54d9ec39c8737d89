"""Print self-similarity maps of one query patch, sharp vs blurred.

Blur flattens the map: cells that used to be dissimilar drift toward the
query. The mean absolute map difference is the number the diagnostics
report.
"""

import numpy as np

from vitpercep import ViTConfig, generate_toy
from vitpercep.similarity import heatmap_delta, similarity_map

config = ViTConfig(image_size=16, patch_size=4, embed_dim=8,
                   num_layers=3, num_heads=2, flavor="toy")
weights = generate_toy(config, seed=0)

y, x = np.mgrid[0:16, 0:16] / 16.0
sharp = 0.5 + 0.3 * np.sin(10.0 * x) * np.sin(6.0 * y + 1.0)
sharp = np.repeat(sharp[:, :, None], 3, axis=2)

blurred = sharp.copy()
for _ in range(3):
    padded = np.pad(blurred, ((1, 1), (1, 1), (0, 0)), mode="edge")
    blurred = sum(
        padded[1 + dy: 17 + dy, 1 + dx: 17 + dx]
        for dy in (-1, 0, 1) for dx in (-1, 0, 1)
    ) / 9.0


def show(m):
    for row in m.values:
        print("   " + " ".join(f"{v:+.2f}" for v in row))


query = 6  # row 1, col 1 of the 4x4 grid, 1-based
m_sharp = similarity_map(sharp, weights, 3, query)
m_blur = similarity_map(blurred, weights, 3, query)

print(f"query patch {query}, layer 3, cosine over token features")
print("sharp:")
show(m_sharp)
print("blurred:")
show(m_blur)

delta, mean = heatmap_delta(m_sharp, m_blur)
print(f"mean |delta| = {mean:.4f}")
