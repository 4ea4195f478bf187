"""Counter-based splittable random numbers.

Every random quantity in this package is a pure function of
``(master seed, stream index, counter)``.  A stream is an independent
substream keyed off the 64-bit master seed (one per Monte Carlo sample,
tree, or path); the counter enumerates draws inside the stream.  Because
no mutable generator state is shared, a run split across workers
produces exactly the multiset of samples a serial run produces, and any
single sample can be regenerated in isolation.

The word function is the SplitMix64 output function applied to
``key + (counter+1) * GOLDEN``; stream keys are derived by mixing seed
and stream index through the same finalizer.  Normals use the
Box-Muller cosine branch and consume two counters each.  The numba
kernels in :mod:`smoothtail._kernels` re-implement these recipes
bit-for-bit; ``tests/test_rng.py`` pins the equivalence.

Counter-consumption contract for branch sampling (shared with the
kernels): offspring draw takes 1 counter (0 for ``Fixed``), inhomogeneous
term takes 1 (0 for ``Constant``), each lognormal weight takes 2, each
finite-support or power-of-uniform weight takes 1, deterministic weights
take 0.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64 = np.uint64
_F53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> _U64(30)
        z *= _U64(_MIX1)
        z ^= z >> _U64(27)
        z *= _U64(_MIX2)
        z ^= z >> _U64(31)
    return z


def stream_key(seed: int, stream) -> "int | np.ndarray":
    """Derive the key of substream ``stream`` under ``seed``.

    Accepts a scalar or an integer array of stream indices; scalars
    return a Python int, arrays return uint64 arrays.
    """
    scalar = np.isscalar(stream)
    s = np.asarray(stream, dtype=np.uint64)
    a = _mix(np.asarray((seed + GOLDEN) & MASK64, dtype=np.uint64))
    with np.errstate(over="ignore"):
        b = _mix(s + _U64(_STREAM_SALT))
    key = _mix(a ^ b)
    if scalar:
        return int(key)
    return key


def words(key, counter, n: int | None = None) -> np.ndarray:
    """Raw uint64 output words.

    ``key`` and ``counter`` broadcast against each other; if ``n`` is
    given, counters ``counter .. counter+n-1`` are used instead.
    """
    k = np.asarray(key, dtype=np.uint64)
    if n is not None:
        c = np.asarray(counter, dtype=np.uint64) + np.arange(n, dtype=np.uint64)
    else:
        c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(k + (c + _U64(1)) * _U64(GOLDEN))


def uniforms(key, counter, n: int | None = None) -> np.ndarray:
    """Uniform(0,1) variates, strictly inside the open interval."""
    w = words(key, counter, n)
    return ((w >> _U64(11)).astype(np.float64) + 0.5) * _F53


def normals(key, counter, n: int | None = None) -> np.ndarray:
    """Standard normals via Box-Muller; each consumes two counters.

    With ``n`` given, normal ``i`` uses counters ``counter+2i`` and
    ``counter+2i+1``.  Without ``n``, ``counter`` may be an array and
    each entry consumes ``counter`` and ``counter+1``.
    """
    if n is not None:
        c = np.asarray(counter, dtype=np.uint64) + _U64(2) * np.arange(
            n, dtype=np.uint64
        )
    else:
        c = np.asarray(counter, dtype=np.uint64)
    u1 = uniforms(key, c)
    u2 = uniforms(key, c + _U64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class CounterStream:
    """Stateful convenience wrapper over one (seed, stream) substream.

    Tracks the counter so sequential callers do not have to.  The state
    is just ``(key, counter)``; copies are cheap and independent.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.key = stream_key(seed, stream)
        self.counter = counter

    def take(self, n: int) -> int:
        c = self.counter
        self.counter = c + n
        return c

    def uniforms(self, n: int) -> np.ndarray:
        return uniforms(self.key, self.take(n), n)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        return normals(self.key, self.take(2 * n), n)

    def exponentials(self, n: int, rate: float) -> np.ndarray:
        return -np.log(self.uniforms(n)) / rate
