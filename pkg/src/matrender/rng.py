"""Deterministic random streams.

Two flavours are used throughout the package:

* ``RandomStream`` wraps a single 64-bit counter hashed with splitmix64. The
  state lives in a one-element ``uint64`` array so numba kernels can advance
  it in place; a stream is fully determined by its starting counter.
* ``generator`` returns a numpy ``Generator`` backed by Philox, for bulk
  numpy-side sampling (dataset assignment, surface point sampling).

Both are keyed by ``derive_seed(seed, *keys)``, a stable hash, so sub-streams
never depend on call order or on the number of workers.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit sub-seed for ``(seed, *keys)``."""
    text = "/".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def next_float(state):
    """Uniform double in [0, 1); advances ``state[0]`` by one step."""
    state[0] += _GOLDEN
    return (mix64(state[0]) >> _S11) * _INV_2_53


@njit(cache=True, nogil=True)
def seed_state(base, index):
    state = np.empty(1, dtype=np.uint64)
    state[0] = mix64(base ^ mix64(np.uint64(index) + _GOLDEN))
    return state


class RandomStream:
    """An infinite stream of uniform doubles, reproducible from its key."""

    def __init__(self, seed: int = 0, *keys):
        self.state = np.array([derive_seed(seed, *keys)], dtype=np.uint64)

    def uniform(self) -> float:
        return next_float(self.state)

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([next_float(self.state) for _ in range(n)])

    def __repr__(self) -> str:
        return f"RandomStream(state=0x{int(self.state[0]):016x})"


def generator(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *keys)))
