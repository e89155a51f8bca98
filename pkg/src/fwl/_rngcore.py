"""xoshiro256++ primitives for the compiled replica kernels.

Per-replica states are derived with splitmix64 from (key0, key1, replica),
giving independent, scheduling-invariant streams.  Normals use the polar
method with a cached spare (slot 0 of a two-float scratch array; slot 1
is the occupancy flag).
"""

import math

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _sm64(z):
    z = uint64(z + _GOLDEN)
    z = uint64((z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9))
    z = uint64((z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB))
    return uint64(z ^ (z >> uint64(31)))


@njit(cache=True)
def state_for(key0, key1, replica):
    """Fresh xoshiro256++ state for one replica stream."""
    s = np.empty(4, dtype=np.uint64)
    z = uint64(_sm64(uint64(key0)) ^ uint64(key1))
    z = uint64(_sm64(z) ^ uint64(replica))
    nonzero = False
    for j in range(4):
        z = uint64(z + _GOLDEN)
        s[j] = _sm64(z)
        nonzero = nonzero or s[j] != uint64(0)
    if not nonzero:
        s[0] = _GOLDEN
    return s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return uint64((x << k) | (x >> (uint64(64) - k)))


@njit(cache=True, inline="always")
def next_u64(s):
    res = uint64(_rotl(uint64(s[0] + s[3]), uint64(23)) + s[0])
    t = uint64(s[1] << uint64(17))
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], uint64(45))
    return res


@njit(cache=True, inline="always")
def u01(s):
    """Uniform on (0, 1), strictly positive (log-safe)."""
    return (float(next_u64(s) >> uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def normal(s, spare):
    """Standard normal via Marsaglia's polar method with cached spare."""
    if spare[1] > 0.5:
        spare[1] = 0.0
        return spare[0]
    while True:
        u = 2.0 * u01(s) - 1.0
        v = 2.0 * u01(s) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            f = math.sqrt(-2.0 * math.log(q) / q)
            spare[0] = v * f
            spare[1] = 1.0
            return u * f


@njit(cache=True, inline="always")
def exponential(s, rate):
    """Exponential waiting time with the given rate."""
    return -math.log(u01(s)) / rate
