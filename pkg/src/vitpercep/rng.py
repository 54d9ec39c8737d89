"""Deterministic random streams built on splitmix64.

splitmix64 in counter mode gives the same bits on every platform and every
numpy version: the whole pipeline is unsigned 64-bit integer arithmetic plus
an exact dyadic mapping to [0, 1), so there is no libm in the loop. Streams
are keyed by (seed, name) so that every consumer (toy-weight tensors, token
masks, test fixtures) draws from its own independent, reproducible sequence.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    # wraparound is the point here
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def stream_key(seed: int, name: str) -> int:
    """Fold a seed and a label into one 64-bit stream key."""
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for byte in name.encode("utf-8"):
            key = _mix((key + _GOLDEN) ^ np.uint64(byte))
    return int(key)


def raw_uint64(seed: int, name: str, count: int) -> np.ndarray:
    """`count` splitmix64 outputs for counter positions 0..count-1."""
    key = np.uint64(stream_key(seed, name))
    counters = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(key + counters * _GOLDEN)


def uniforms(seed: int, name: str, count: int) -> np.ndarray:
    """Uniform float64 in [0, 1): top 53 bits scaled by 2**-53, exactly."""
    bits = raw_uint64(seed, name, count) >> np.uint64(11)
    return bits.astype(np.float64) * (2.0 ** -53)


def symmetric_uniforms(seed: int, name: str, count: int) -> np.ndarray:
    """Uniform float64 in [-1, 1); 2u-1 is exact for dyadic u."""
    return 2.0 * uniforms(seed, name, count) - 1.0


def sample_without_replacement(seed: int, name: str, n: int, k: int) -> np.ndarray:
    """k distinct values from range(n), via a partial Fisher-Yates shuffle.

    Returns the sample sorted ascending. Deterministic in (seed, name).
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot sample {k} from {n}")
    pool = np.arange(n)
    u = uniforms(seed, name, k)
    for i in range(k):
        j = i + int(u[i] * (n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:k])
