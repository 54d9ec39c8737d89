"""Self-similarity diagnostics: how much one token's feature resembles all
patch tokens of the same image, laid out on the patch grid.

Blur tends to flatten an image's global self-similarity structure; comparing
the map of a degraded image against its clean counterpart quantifies that.
The similarity metric is cosine, so maps are invariant to positive rescaling
of the feature matrix. The CLS row has no spatial cell and is excluded.
"""

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .errors import ContractError

_ZERO_NORM_NOTE = "rows with zero norm compare as 1 to each other, 0 to the rest"


@dataclass(frozen=True)
class SimilarityMap:
    values: np.ndarray  # (grid, grid), cosine in [-1, 1]
    query_index: int    # 1-based patch token index
    layer: int
    feature_kind: str

    def value_at(self, index: int) -> float:
        return float(self.values.reshape(-1)[index - 1])


def _cosine_to_query(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    # zero-norm rule keeps the self-similarity invariant meaningful: see note
    norms = np.sqrt((rows * rows).sum(axis=1))
    qnorm = float(np.sqrt((query * query).sum()))
    dots = rows @ query
    out = np.zeros(rows.shape[0], dtype=np.float64)
    if qnorm == 0.0:
        out[norms == 0.0] = 1.0
        return out
    nz = norms > 0.0
    out[nz] = dots[nz] / (norms[nz] * qnorm)
    return out


def similarity_map(image, weights, l: int, query_index: int,
                   feature_kind: str = "token") -> SimilarityMap:
    """Cosine of patch token `query_index` (1-based) against all patch tokens.

    Token dropping is forced off: the map covers the full grid.
    """
    c = weights.config
    n = c.num_patches
    if not 1 <= query_index <= n:
        raise ContractError(f"query_index {query_index} outside [1, {n}]")
    feats, _ = enc.extract(image, weights, l, feature_kind=feature_kind,
                           mask_ratio=0.0, seed=0)
    rows = np.asarray(feats.data[1:], dtype=np.float64)  # drop CLS
    values = _cosine_to_query(rows, rows[query_index - 1])
    grid = values.reshape(c.grid, c.grid)
    grid.flags.writeable = False
    return SimilarityMap(values=grid, query_index=query_index,
                         layer=l, feature_kind=feature_kind)


def heatmap_delta(map_a: SimilarityMap, map_b: SimilarityMap):
    """Element-wise |a - b| grid and its mean; maps must be comparable."""
    same = (
        map_a.values.shape == map_b.values.shape
        and map_a.query_index == map_b.query_index
        and map_a.layer == map_b.layer
        and map_a.feature_kind == map_b.feature_kind
    )
    if not same:
        raise ContractError(
            "maps differ in grid/query/layer/feature and cannot be compared"
        )
    delta = np.abs(map_a.values - map_b.values)
    delta.flags.writeable = False
    return delta, float(delta.mean())
