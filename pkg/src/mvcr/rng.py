"""Counter-based random streams for reproducible stochastic gating.

Every draw is a pure function of (seed, step, layer, token, purpose): there is
no mutable generator state, so gate decisions can be recomputed in any order,
in parallel, or after the fact, and adding draws for one purpose never
perturbs the stream of another. Streams cannot be exhausted.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Separate tags per decision kind keep the streams independent:
# e.g. changing the pool size only consumes POOL_CHOICE draws and leaves the
# LAYER_GATE stream untouched.
LAYER_GATE = 1
POOL_CHOICE = 2
SUB_GATE = 3
SUB_CHOICE = 4
VAE_NOISE = 5
BASELINE_NOISE = 6
DATA_ORDER = 7

# Token-index sentinel for layer-level draws (one draw shared by all tokens).
LAYER_WIDE = 0xFFFFFFFF

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def member_purpose(tag: int, member: int) -> int:
    """Purpose tag namespaced per pool member (for per-member recon streams)."""
    return tag + ((member + 1) << 8)


def _mix(z):
    # splitmix64 finalizer; works on uint64 scalars and arrays alike
    with np.errstate(over="ignore"):  # wraparound is the point
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key(seed: int, step: int, layer: int, token, purpose: int):
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    tok = np.asarray(token, dtype=np.uint64)
    h = _mix(np.uint64(seed) ^ _GAMMA)
    h = _mix(h ^ np.uint64(step))
    h = _mix(h ^ np.uint64(layer))
    h = _mix(h ^ tok)
    h = _mix(h ^ np.uint64(purpose))
    return h


def uniform(seed: int, step: int, layer: int, token, purpose: int):
    """Uniform draw(s) in [0, 1). `token` may be an int or an int array."""
    k = _key(seed, step, layer, token, purpose)
    u = (k >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    if np.isscalar(token) or np.ndim(token) == 0:
        return float(u)
    return u


def choice(seed: int, step: int, layer: int, token, purpose: int, n: int):
    """Uniform choice(s) in {0, .., n-1}."""
    if n < 1:
        raise ValueError(f"choice requires n >= 1, got {n}")
    u = uniform(seed, step, layer, token, purpose)
    if np.isscalar(u):
        return min(int(u * n), n - 1)
    return np.minimum((u * n).astype(np.int64), n - 1)


def derive_seed(seed: int, step: int, layer: int, token, purpose: int) -> int:
    """64-bit child seed for feeding a bulk generator (init, noise, data)."""
    return int(_key(seed, step, layer, token, purpose))
