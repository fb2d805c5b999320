"""Counter-based hashing used for every random draw in the package.

Each draw is addressed by coordinates (seed, site, index, counter, lane) and
computed by repeated application of the SplitMix64 finalizer.  Nothing is
stateful, so any update's randomness can be regenerated out of order, by any
worker, and by both the scalar and the vectorized code paths.

Scalar helpers operate on Python ints; the ``*_v`` helpers operate on numpy
``uint64`` arrays and must agree with the scalar ones bit for bit.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# Domain tags keep independent uses of one master seed apart.
DOMAIN_PAIR = 0x243F6A8885A308D3
DOMAIN_TIME = 0x13198A2E03707344
DOMAIN_CHUNK = 0xA4093822299F31D0
DOMAIN_CASE = 0x082EFA98EC4E6C89

LANE_X = 0
LANE_Y = 1
N_LANES = 2

INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_v(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64) + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(master_seed: int, *coords: int) -> int:
    """Hash a master seed and integer coordinates into a fresh 64-bit seed."""
    h = mix64(master_seed & MASK64)
    for c in coords:
        h = mix64(h ^ (c & MASK64))
    return h


def stream_key(domain: int, master_seed: int, site: int, index: int) -> int:
    h = mix64((master_seed ^ domain) & MASK64)
    h = mix64(h ^ site)
    return mix64(h ^ index)


def stream_key_v(domain: int, master_seed: int, sites, indices) -> np.ndarray:
    base = np.uint64(mix64((master_seed ^ domain) & MASK64))
    sites = np.atleast_1d(np.asarray(sites, dtype=np.uint64))
    indices = np.atleast_1d(np.asarray(indices, dtype=np.uint64))
    h = mix64_v(base ^ sites)
    return mix64_v(h ^ indices)


def lane_hash(key: int, counter: int, lane: int) -> int:
    return mix64(mix64(key ^ ((counter * N_LANES + lane) & MASK64)))


def lane_hash_v(keys: np.ndarray, counters: np.ndarray, lane: int) -> np.ndarray:
    c = np.asarray(counters, dtype=np.uint64) * np.uint64(N_LANES) + np.uint64(lane)
    return mix64_v(mix64_v(np.asarray(keys, dtype=np.uint64) ^ c))


def bounded(h: int, q: int) -> int:
    """Map a 64-bit hash to ``{0..q-1}`` without modulo bias.

    Hashes in the top partial range are rejected and re-mixed.
    """
    if q & (q - 1) == 0:
        return h & (q - 1)
    limit = ((1 << 64) // q) * q
    while h >= limit:
        h = mix64(h)
    return h % q


def bounded_v(h: np.ndarray, q: int) -> np.ndarray:
    h = np.array(h, dtype=np.uint64, copy=True)
    if q & (q - 1) == 0:
        return (h & np.uint64(q - 1)).astype(np.int64)
    limit = np.uint64(((1 << 64) // q) * q)
    bad = h >= limit
    while bad.any():
        h[bad] = mix64_v(h[bad])
        bad = h >= limit
    return (h % np.uint64(q)).astype(np.int64)


def unit_float(h: int) -> float:
    """53-bit uniform in [0, 1)."""
    return (h >> 11) * INV_2_53


def unit_float_v(h: np.ndarray) -> np.ndarray:
    return (np.asarray(h, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * INV_2_53


def open_unit_float_v(h: np.ndarray) -> np.ndarray:
    """Uniform strictly inside (0, 1) on a 2**-52 grid offset by half a step."""
    m = (np.asarray(h, dtype=np.uint64) >> np.uint64(12)).astype(np.float64)
    return (m + 0.5) * (2.0 * INV_2_53)
