"""Seedable, state-capturable randomness.

Every random draw in a simulation goes through a :class:`Rng`, a
xoshiro256** generator seeded with splitmix64.  The whole generator state is
four 64-bit words, so it can be captured, serialized and restored exactly;
two generators holding the same words produce the same stream forever.

The draw primitives are also exposed as numba-compiled functions operating on
the raw state buffer (``uint64[5]``: four state words and a draw counter) so
model kernels can consume the stream without leaving compiled code.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence, TypeVar

import numpy as np
from numba import njit

__all__ = [
    "ALGORITHM_ID",
    "Rng",
    "RngState",
    "RngVersionError",
    "derive_seed",
    "int_below",
    "next_u64",
    "shuffle_inplace",
    "uniform",
]

T = TypeVar("T")

ALGORITHM_ID = int.from_bytes(b"X256", "little")
N_WORDS = 4
MASK64 = (1 << 64) - 1

_U1 = np.uint64(1)
_INV_2_53 = 1.0 / 9007199254740992.0


class RngVersionError(ValueError):
    """Raised when restoring state produced by a different algorithm."""


@dataclass(frozen=True)
class RngState:
    """Plain-data capture of a generator.

    ``draws_so_far`` counts 64-bit words consumed since seeding.  It is kept
    for auditing only and is excluded from equality: it has no influence on
    the future stream.
    """

    algorithm_id: int
    words: tuple[int, ...]
    draws_so_far: int = field(default=0, compare=False)

    def to_bytes(self) -> bytes:
        head = struct.pack("<II", self.algorithm_id, len(self.words))
        body = struct.pack(f"<{len(self.words)}Q", *self.words)
        return head + body + struct.pack("<Q", self.draws_so_far)

    @classmethod
    def from_bytes(cls, data: bytes) -> RngState:
        state, used = cls.read_from(data, 0)
        if used != len(data):
            raise ValueError(f"trailing bytes after RngState: {len(data) - used}")
        return state

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> tuple[RngState, int]:
        """Parse a state block starting at ``offset``; return it and the end offset."""
        try:
            algorithm_id, count = struct.unpack_from("<II", data, offset)
            offset += 8
            words = struct.unpack_from(f"<{count}Q", data, offset)
            offset += 8 * count
            (draws,) = struct.unpack_from("<Q", data, offset)
        except struct.error as exc:
            raise ValueError("truncated RngState block") from exc
        return cls(algorithm_id, tuple(words), draws), offset + 8


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _seed_words(seed: int) -> list[int]:
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    words = []
    x = seed
    for _ in range(N_WORDS):
        x, z = _splitmix64(x)
        words.append(z)
    return words


def derive_seed(base_seed: int, *path: object) -> int:
    """Hash ``base_seed`` and a path of labels into an independent 64-bit seed."""
    text = "/".join([str(int(base_seed))] + [str(p) for p in path])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# --- compiled primitives ---------------------------------------------------


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def next_u64(s):
    """Advance the buffer one step and return the next 64-bit output."""
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    s[4] += _U1
    return result


@njit(cache=True)
def uniform(s):
    """Real in [0, 1) built from the top 53 bits of one output word."""
    return np.float64(next_u64(s) >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def int_below(s, n):
    """Unbiased integer in [0, n) by rejection on a full 64-bit word."""
    bound = np.uint64(n)
    threshold = (np.uint64(0) - bound) % bound
    while True:
        r = next_u64(s)
        if r >= threshold:
            return np.int64(r % bound)


@njit(cache=True)
def shuffle_inplace(s, arr):
    """Fisher-Yates shuffle of ``arr``; consumes ``len(arr) - 1`` draws."""
    for i in range(arr.shape[0] - 1, 0, -1):
        j = int_below(s, i + 1)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


@njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = uniform(s)


# --- Python-facing generator -----------------------------------------------


class Rng:
    """A generator owned by exactly one simulation at a time.

    >>> a, b = Rng(42), Rng(42)
    >>> a.uniform() == b.uniform()
    True
    """

    __slots__ = ("buffer",)

    def __init__(self, seed: int = 0):
        self.buffer = np.zeros(N_WORDS + 1, dtype=np.uint64)
        self.buffer[:N_WORDS] = np.array(_seed_words(int(seed)), dtype=np.uint64)

    @classmethod
    def from_state(cls, state: RngState) -> Rng:
        rng = cls.__new__(cls)
        rng.buffer = np.zeros(N_WORDS + 1, dtype=np.uint64)
        rng.restore(state)
        return rng

    @property
    def draws_so_far(self) -> int:
        return int(self.buffer[N_WORDS])

    def next_u64(self) -> int:
        return int(next_u64(self.buffer))

    def uniform(self) -> float:
        return float(uniform(self.buffer))

    def uniforms(self, k: int) -> np.ndarray:
        out = np.empty(k, dtype=np.float64)
        _fill_uniform(self.buffer, out)
        return out

    def int_below(self, n: int) -> int:
        if n < 1:
            raise ValueError(f"int_below requires n >= 1, got {n}")
        return int(int_below(self.buffer, n))

    def permutation(self, n: int) -> np.ndarray:
        order = np.arange(n, dtype=np.int64)
        shuffle_inplace(self.buffer, order)
        return order

    def shuffle(self, items: Sequence[T]) -> list[T]:
        """Return a new list holding ``items`` in a Fisher-Yates order."""
        return [items[i] for i in self.permutation(len(items))]

    def capture(self) -> RngState:
        words = tuple(int(w) for w in self.buffer[:N_WORDS])
        return RngState(ALGORITHM_ID, words, int(self.buffer[N_WORDS]))

    def restore(self, state: RngState) -> None:
        if state.algorithm_id != ALGORITHM_ID:
            raise RngVersionError(
                f"state was produced by algorithm {state.algorithm_id:#x}, "
                f"this generator is {ALGORITHM_ID:#x}"
            )
        if len(state.words) != N_WORDS:
            raise RngVersionError(f"expected {N_WORDS} state words, got {len(state.words)}")
        if not any(state.words):
            raise ValueError("all-zero xoshiro state is invalid")
        self.buffer[:N_WORDS] = np.array(state.words, dtype=np.uint64)
        self.buffer[N_WORDS] = np.uint64(state.draws_so_far)

    def copy(self) -> Rng:
        rng = Rng.__new__(Rng)
        rng.buffer = self.buffer.copy()
        return rng

    def __repr__(self) -> str:
        return f"Rng(draws_so_far={self.draws_so_far})"
