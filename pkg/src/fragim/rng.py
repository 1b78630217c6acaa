"""Counter-based random streams keyed by genealogical position.

Every random quantity in the simulator is a pure function of a 64-bit key
and a stream tag, so a block's draws never depend on the order in which
blocks are visited. Keys are derived by hashing (parent key, child index);
the mixing function is the splitmix64 finalizer.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags
CLOCK = 0x1
ATOM = 0x2
NOISE = 0x3
SPINE_CLOCK = 0x4
SPINE_PICK = 0x5

_INV53 = 1.0 / (1 << 53)


def mix64(z):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def root_key(seed) -> np.ndarray:
    s = np.asarray(seed).astype(np.uint64)
    with np.errstate(over="ignore"):
        return mix64(s * _GOLDEN + np.uint64(0x5851F42D4C957F2D))


def child_key(parent_key, index) -> np.ndarray:
    """Key of the ``index``-th child (0-based) of a block with ``parent_key``."""
    k = np.asarray(parent_key, dtype=np.uint64)
    i = np.asarray(index).astype(np.uint64)
    with np.errstate(over="ignore"):
        return mix64(k + (i + np.uint64(1)) * _GOLDEN)


def stream_bits(key, stream: int, counter=0) -> np.ndarray:
    k = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter).astype(np.uint64)
    with np.errstate(over="ignore"):
        return mix64(mix64(k ^ np.uint64(stream) * _M2) + c * _GOLDEN)


def uniform(key, stream: int, counter=0) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    bits = stream_bits(key, stream, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _INV53


def exponential(key, stream: int, counter=0) -> np.ndarray:
    """Unit-rate exponential draws."""
    return -np.log(uniform(key, stream, counter))


def path_seed(base_seed: int, index) -> np.ndarray:
    """Per-path seed: base seed XOR path index."""
    return np.bitwise_xor(np.uint64(base_seed & 0xFFFFFFFFFFFFFFFF), np.asarray(index).astype(np.uint64))
