"""Counter-based pseudorandom functions.

Every random quantity in the package is a pure function of a 64-bit key and a
counter.  Environments key on (master seed, site coordinates) and trajectories
on (master seed, trajectory index), so results never depend on query order,
worker count or scheduling.

The mixing function is the SplitMix64 finalizer.  The jitted versions are used
inside the simulation kernels; :func:`derive_key` is a pure-Python mirror used
to build keys outside of them.
"""

from __future__ import annotations

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

GOLDEN = np.uint64(_GOLDEN)
M1 = np.uint64(_M1)
M2 = np.uint64(_M2)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0

# stream tags used when deriving keys
STREAM_ENV = 1
STREAM_WALK = 2
STREAM_AUX = 3


def _mix_py(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _combine_py(key: int, value: int) -> int:
    return _mix_py(key ^ _mix_py((value + _GOLDEN) & MASK64))


def derive_key(seed: int, *parts: int) -> int:
    """Fold ``parts`` into ``seed``; negative parts use two's complement."""
    key = _mix_py(seed & MASK64)
    for p in parts:
        key = _combine_py(key, int(p) & MASK64)
    return key


def derive_keys(seed: int, *prefix: int, count: int) -> np.ndarray:
    """Keys ``derive_key(seed, *prefix, i)`` for ``i < count`` as a uint64 array."""
    base = derive_key(seed, *prefix)
    return _combine_range(np.uint64(base), count)


@nb.njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@nb.njit(cache=True, nogil=True)
def combine(key, value):
    """Jitted mirror of the Python key derivation (value is an int64)."""
    return mix64(key ^ mix64(np.uint64(value) + GOLDEN))


@nb.njit(cache=True, nogil=True)
def uniform(key, counter):
    """Uniform double in [0, 1) for draw number ``counter`` of stream ``key``."""
    z = mix64(key + (np.uint64(counter) + ONE) * GOLDEN)
    return np.float64(z >> S11) * INV53


@nb.njit(cache=True, nogil=True)
def _combine_range(base, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = combine(base, np.int64(i))
    return out


@nb.njit(cache=True, nogil=True)
def uniforms(key, start, count):
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        out[i] = uniform(key, start + i)
    return out


@nb.njit(cache=True, nogil=True)
def site_key(env_key, x):
    k = env_key
    for i in range(x.shape[0]):
        k = combine(k, np.int64(x[i]))
    return k


@nb.njit(cache=True, nogil=True)
def std_normal(key, counter):
    # Box-Muller on draws (counter, counter + 1)
    u1 = uniform(key, counter)
    u2 = uniform(key, counter + 1)
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


@nb.njit(cache=True, nogil=True)
def gamma_variate(key, counter, shape):
    """Marsaglia-Tsang gamma(shape, 1); returns (value, next free counter)."""
    boost = 1.0
    if shape < 1.0:
        boost = uniform(key, counter) ** (1.0 / shape)
        counter += 1
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        z = std_normal(key, counter)
        u = uniform(key, counter + 2)
        counter += 3
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        if np.log(1.0 - u) < 0.5 * z * z + d - d * v + d * np.log(v):
            return d * v * boost, counter
