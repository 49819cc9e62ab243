"""Portable deterministic pseudo-randomness.

Everything seeded in this package flows through the splitmix64 finalizer so
that weight generation, pairing, and synthesis reproduce bit-for-bit across
platforms and can be reimplemented in other languages from this file alone.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def hash_key(*parts) -> int:
    """Fold integers and strings into a single 64-bit stream key.

    Strings are folded byte-wise (FNV-1a) before mixing, so keys derived
    from identifiers are stable across runs and platforms.
    """
    acc = 0x243F6A8885A308D3
    for part in parts:
        if isinstance(part, str):
            h = 0xCBF29CE484222325
            for byte in part.encode("utf-8"):
                h = ((h ^ byte) * 0x100000001B3) & _MASK
            part = h
        elif not isinstance(part, (int, np.integer)):
            raise TypeError(f"unhashable key part: {part!r}")
        acc = mix64(acc ^ (int(part) & _MASK))
    return acc


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def next_float(self) -> float:
        # top 53 bits -> [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def sample_without_replacement(stream: SplitMix64, candidates: list[int], k: int) -> list[int]:
    """Partial Fisher-Yates draw of k items.

    Draws are sequential, so for a fixed stream the first j results of a
    k-draw equal the j-draw; callers rely on this prefix property.
    """
    if k > len(candidates):
        raise ValueError("k exceeds candidate count")
    pool = list(candidates)
    out = []
    for i in range(k):
        j = i + stream.next_below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
        out.append(pool[i])
    return out


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def u64_array(key: int, n: int) -> np.ndarray:
    """First n outputs of the splitmix64 stream keyed by `key`, vectorized."""
    states = np.uint64(key & _MASK) + (np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN))
    return _mix_array(states)


def hash_combine_array(acc, parts) -> np.ndarray:
    """Vectorized hash_key chaining step: mix64(acc ^ part) elementwise."""
    z = np.asarray(acc, dtype=np.uint64) ^ np.asarray(parts, dtype=np.uint64)
    return _mix_array(z + np.uint64(_GOLDEN))


def uniform_from_u64(bits: np.ndarray) -> np.ndarray:
    """Map u64 hash values to [0, 1) doubles."""
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53


def float_array(key: int, n: int) -> np.ndarray:
    """n uniforms in [0, 1), identical to SplitMix64(key) draws."""
    return (u64_array(key, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normal_array(key: int, n: int) -> np.ndarray:
    """n standard normals via Box-Muller on the keyed stream."""
    m = (n + 1) // 2
    u = u64_array(key, 2 * m)
    # (0, 1] for the radial term so log() stays finite
    u1 = ((u[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (u[m:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return out[:n]


def normal_matrix(key: int, shape: tuple[int, ...], scale: float = 1.0) -> np.ndarray:
    n = int(np.prod(shape))
    return (normal_array(key, n) * scale).reshape(shape)
