"""Counter-keyed per-path random number streams for numba kernels.

Every simulated path owns an independent xoshiro256++ stream whose state
is derived from ``(master seed, path index)`` through SplitMix64, so
ensembles are reproducible regardless of how paths are scheduled across
threads.  Standard normal deviates come from the Marsaglia polar method.
"""

import numba as nb
import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# 2**53, so (u64 >> 11) * _INV53 is uniform on [0, 1)
_INV53 = 1.0 / 9007199254740992.0


def derive_seed(master_seed, *indices):
    """Fold ``indices`` into ``master_seed`` with SplitMix64 steps.

    Used at the Python level to hand independent 64-bit seeds to
    replicates / likelihood terms without risking stream overlap.
    """
    z = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    for idx in indices:
        z = (z + (int(idx) + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        z = z ^ (z >> 31)
    return z


def as_seed(seed):
    """Clamp a Python integer to the uint64 type the kernels expect."""
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


@nb.njit(inline="always", cache=True)
def _splitmix64(z):
    z = (z + _GOLDEN) & _MASK
    w = z
    w = ((w ^ (w >> np.uint64(30))) * _MIX1) & _MASK
    w = ((w ^ (w >> np.uint64(27))) * _MIX2) & _MASK
    return z, w ^ (w >> np.uint64(31))


@nb.njit(inline="always", cache=True)
def seed_state(seed, idx):
    """xoshiro256++ state for path ``idx`` under ``seed`` (4 x uint64)."""
    s = np.empty(4, dtype=np.uint64)
    z = (np.uint64(seed) + np.uint64(idx) * _GOLDEN) & _MASK
    for i in range(4):
        z, out = _splitmix64(z)
        s[i] = out
    return s


@nb.njit(inline="always", cache=True)
def _rotl(x, k):
    return ((x << k) | (x >> (np.uint64(64) - k))) & _MASK


@nb.njit(inline="always", cache=True)
def next_u64(s):
    result = (_rotl((s[0] + s[3]) & _MASK, np.uint64(23)) + s[0]) & _MASK
    t = (s[1] << np.uint64(17)) & _MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], np.uint64(45))
    return result


@nb.njit(inline="always", cache=True)
def uniform01(s):
    """Uniform deviate on [0, 1) with 53 random bits."""
    return (next_u64(s) >> np.uint64(11)) * _INV53


@nb.njit(inline="always", cache=True)
def normal_pair(s):
    """Two independent standard normals (Marsaglia polar method)."""
    while True:
        u = 2.0 * uniform01(s) - 1.0
        v = 2.0 * uniform01(s) - 1.0
        r2 = u * u + v * v
        if 0.0 < r2 < 1.0:
            f = np.sqrt(-2.0 * np.log(r2) / r2)
            return u * f, v * f
