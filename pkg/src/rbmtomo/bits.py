"""Bitstring/basis-index conversions.

Convention used throughout the package: a length-n bit vector maps to the
basis index with the first entry as the most significant bit, so
``bits_to_index([1, 0, 0]) == 4``. Dataset files, amplitude vectors, and
enumeration tables all share this ordering.
"""

import numpy as np

_BITSTRING_CACHE: dict[int, np.ndarray] = {}


def all_bitstrings(n: int) -> np.ndarray:
    """Return the (2**n, n) uint8 array of all length-n bit vectors.

    Row i is the binary representation of i, most significant bit first.
    The array is cached and must be treated as read-only.
    """
    if n < 0:
        raise ValueError(f"bit count must be nonnegative, got {n}")
    cached = _BITSTRING_CACHE.get(n)
    if cached is None:
        idx = np.arange(2**n, dtype=np.int64)
        shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
        cached = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        cached.setflags(write=False)
        _BITSTRING_CACHE[n] = cached
    return cached


def bits_to_index(bits: np.ndarray) -> np.ndarray | int:
    """Map bit vectors (last axis = bits, MSB first) to basis indices."""
    bits = np.asarray(bits)
    n = bits.shape[-1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    idx = bits.astype(np.int64) @ weights
    if idx.ndim == 0:
        return int(idx)
    return idx


def index_to_bits(index: int, n: int) -> np.ndarray:
    """Binary representation of `index` as a length-n uint8 vector, MSB first."""
    if not 0 <= index < 2**n:
        raise ValueError(f"index {index} out of range for {n} bits")
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((index >> shifts) & 1).astype(np.uint8)


def bits_to_string(bits: np.ndarray) -> str:
    """Render a bit vector as a '0'/'1' string, MSB first."""
    return "".join("1" if b else "0" for b in np.asarray(bits).ravel())


def string_to_bits(s: str) -> np.ndarray:
    """Parse a '0'/'1' string into a uint8 bit vector."""
    if not s or any(c not in "01" for c in s):
        raise ValueError(f"not a bitstring: {s!r}")
    return np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")
