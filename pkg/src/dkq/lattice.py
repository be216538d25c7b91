"""Lattice configuration and bit-packed rows of one time slice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern


class ConfigError(ValueError):
    """Invalid simulation or lattice parameters."""


@dataclass(frozen=True)
class LatticeConfig:
    n_sites: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.n_sites < 2:
            raise ConfigError(f"n_sites must be >= 2, got {self.n_sites}")
        if self.boundary != "periodic":
            raise ConfigError("only periodic boundaries are supported")

    @property
    def n_words(self) -> int:
        return (self.n_sites + 63) // 64


class SpinRow:
    """N spins packed into uint64 words; bit ``m`` set iff site ``m`` is up."""

    __slots__ = ("n", "words")

    def __init__(self, n: int, words: np.ndarray):
        self.n = int(n)
        self.words = np.ascontiguousarray(words, dtype=np.uint64)
        if self.words.shape != ((self.n + 63) // 64,):
            raise ValueError("word count does not match n")
        rem = self.n - 64 * (self.words.shape[0] - 1)
        if rem < 64 and int(self.words[-1]) >> rem:
            raise ValueError("padding bits beyond n must be zero")

    @classmethod
    def zeros(cls, n: int) -> "SpinRow":
        return cls(n, np.zeros((n + 63) // 64, dtype=np.uint64))

    @classmethod
    def ones(cls, n: int) -> "SpinRow":
        return cls.from_bits(np.ones(n, dtype=np.uint8))

    @classmethod
    def from_bits(cls, bits) -> "SpinRow":
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        n = bits.shape[0]
        padded = np.zeros(64 * ((n + 63) // 64), dtype=np.uint8)
        padded[:n] = bits & 1
        words = np.packbits(padded, bitorder="little").view("<u8")
        return cls(n, words.astype(np.uint64))

    @classmethod
    def from_string(cls, s: str) -> "SpinRow":
        """``"00100"`` -> site 2 up (leftmost character is site 0)."""
        return cls.from_bits([int(c) for c in s])

    @classmethod
    def from_int(cls, n: int, value: int) -> "SpinRow":
        return cls.from_bits([(value >> m) & 1 for m in range(n)])

    def to_bits(self) -> np.ndarray:
        b = self.words.astype("<u8").view(np.uint8).reshape(-1, 8)
        bits = np.unpackbits(b, axis=1, bitorder="little").ravel()
        return bits[: self.n].copy()

    def to_int(self) -> int:
        return sum(int(b) << m for m, b in enumerate(self.to_bits()))

    def __str__(self) -> str:
        return "".join(str(int(b)) for b in self.to_bits())

    def __repr__(self) -> str:
        return f"SpinRow({str(self)!r})" if self.n <= 80 else f"SpinRow(n={self.n})"

    def __getitem__(self, m: int) -> int:
        m %= self.n
        return int((int(self.words[m >> 6]) >> (m & 63)) & 1)

    def __eq__(self, other) -> bool:
        return isinstance(other, SpinRow) and self.n == other.n and bool(
            np.array_equal(self.words, other.words))

    def __hash__(self):
        return hash((self.n, self.words.tobytes()))

    def popcount(self) -> int:
        return int(kern.row_popcount(self.words))

    def shifted(self, j: int) -> "SpinRow":
        """Row whose bit m is this row's bit (m + j) mod n."""
        out = np.empty_like(self.words)
        kern.ring_shift(self.words, self.n, j, out)
        return SpinRow(self.n, out)


def neighbor_or(row: SpinRow, m: int) -> int:
    """1 iff site m or site m+1 (mod N) is excited, i.e. the constraint fires."""
    return row[m] | row[(m + 1) % row.n]


def count_in_window(row: SpinRow, m: int, K: int) -> int:
    """Excitations among sites m, m+1, ..., m+K-1 (mod N)."""
    if K < 1 or K > row.n:
        raise ConfigError(f"window size K={K} must lie in [1, N={row.n}]")
    return sum(row[(m + j) % row.n] for j in range(K))
