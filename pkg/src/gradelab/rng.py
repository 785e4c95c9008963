"""Deterministic random streams shared by initialization and noise synthesis.

Everything here is counter-based SplitMix64, so a (seed, index) pair fully
determines a stream with no hidden state. That is what makes runs with the
same seed byte-identical: there is no global RNG to advance out of order.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix_int(z: int) -> int:
    # SplitMix64 output function (Steele et al. finalizer), Python ints so
    # the wraparound is explicit and warning-free.
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _mix_arr(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def substream(seed: int, index: int) -> int:
    """Derive the seed of substream `index` from a master seed.

    Construction: mix the master seed, add (index + 1) strides of the golden
    gamma, mix again. Distinct indices give decorrelated streams.
    """
    s = _mix_int(seed)
    return _mix_int(s + (index + 1) * _GOLDEN)


def uniforms(seed: int, n: int) -> np.ndarray:
    """n doubles in [0, 1), counter-based off `seed`."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix_arr(np.uint64(seed & _MASK) + idx * np.uint64(_GOLDEN))
    # take the top 53 bits -> exactly representable doubles in [0, 1)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def normals(seed: int, n: int) -> np.ndarray:
    """n standard normal doubles via Box-Muller on SplitMix64 uniforms."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    m = (n + 1) // 2
    u = uniforms(seed, 2 * m)
    u1, u2 = u[0::2], u[1::2]
    # 1 - u1 lies in (0, 1], keeping the log finite
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * m, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]
