"""Order- and duplicate-insensitive aggregate payloads.

Three kinds are supported: ``MAX``, ``MIN`` and ``COUNT_SKETCH`` (a
Flajolet-Martin sketch with stochastic averaging over ``m`` bitmaps).  Every
kind forms a join-semilattice under :func:`synopsis_merge`, so folding the same
contribution any number of times, in any order, gives the same result.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from typing import Iterable

import numpy as np

PHI = 0.77351  # FM bias correction constant
DEFAULT_REGISTERS = 64
_MASK64 = (1 << 64) - 1


class Kind(enum.IntEnum):
    MAX = 1
    MIN = 2
    COUNT_SKETCH = 3


class SynopsisKindError(TypeError):
    pass


class IncompatibleSynopsisError(ValueError):
    pass


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _key(contribution) -> int:
    if isinstance(contribution, (int, np.integer)):
        return int(contribution) & _MASK64
    if isinstance(contribution, str):
        contribution = contribution.encode()
    if isinstance(contribution, bytes):
        return int.from_bytes(hashlib.blake2b(contribution, digest_size=8).digest(), "big")
    raise SynopsisKindError(f"cannot hash contribution of type {type(contribution).__name__}")


def hash64(contribution, seed: int = 0) -> int:
    """Seeded 64-bit hash used by the COUNT sketch."""
    return _splitmix64(_key(contribution) ^ _splitmix64(seed & _MASK64))


class OdiSynopsis:
    """Immutable aggregate value; ``merge`` returns a new instance."""

    __slots__ = ("kind", "value", "registers", "hash_seed")

    def __init__(self, kind: Kind, value=None, registers: np.ndarray | None = None, hash_seed: int = 0):
        self.kind = Kind(kind)
        self.value = value
        self.hash_seed = int(hash_seed)
        if self.kind is Kind.COUNT_SKETCH:
            if registers is None:
                raise ValueError("COUNT_SKETCH needs a register array")
            registers = np.asarray(registers, dtype=np.uint64)
            registers.setflags(write=False)
        self.registers = registers

    @classmethod
    def empty(cls, kind: Kind | str, m: int = DEFAULT_REGISTERS, hash_seed: int = 0) -> "OdiSynopsis":
        kind = parse_kind(kind)
        if kind is Kind.COUNT_SKETCH:
            if m < 1:
                raise ValueError("register count must be positive")
            return cls(kind, registers=np.zeros(m, dtype=np.uint64), hash_seed=hash_seed)
        return cls(kind)

    @classmethod
    def of(cls, kind: Kind | str, contributions: Iterable, m: int = DEFAULT_REGISTERS, hash_seed: int = 0) -> "OdiSynopsis":
        s = cls.empty(kind, m=m, hash_seed=hash_seed)
        if s.kind is Kind.COUNT_SKETCH:
            return s.insert_many(contributions)
        for c in contributions:
            s = s.insert(c)
        return s

    @property
    def m(self) -> int:
        return 0 if self.registers is None else len(self.registers)

    @property
    def is_empty(self) -> bool:
        if self.kind is Kind.COUNT_SKETCH:
            return not self.registers.any()
        return self.value is None

    def insert(self, contribution) -> "OdiSynopsis":
        if self.kind is Kind.COUNT_SKETCH:
            h = hash64(contribution, self.hash_seed)
            j, bit = self._slot(h)
            if int(self.registers[j]) >> bit & 1:
                return self
            regs = self.registers.copy()
            regs[j] |= np.uint64(1 << bit)
            return OdiSynopsis(self.kind, registers=regs, hash_seed=self.hash_seed)
        if isinstance(contribution, (bytes, str)) or not _is_ordered_scalar(contribution):
            raise SynopsisKindError(f"{self.kind.name} expects an ordered scalar, got {contribution!r}")
        if self.value is None:
            return OdiSynopsis(self.kind, value=contribution)
        if self.kind is Kind.MAX:
            return self if contribution <= self.value else OdiSynopsis(self.kind, value=contribution)
        return self if contribution >= self.value else OdiSynopsis(self.kind, value=contribution)

    def insert_many(self, contributions: Iterable) -> "OdiSynopsis":
        if self.kind is not Kind.COUNT_SKETCH:
            s = self
            for c in contributions:
                s = s.insert(c)
            return s
        keys = np.fromiter((_key(c) for c in contributions), dtype=np.uint64)
        if keys.size == 0:
            return self
        h = _splitmix64_np(keys ^ np.uint64(_splitmix64(self.hash_seed & _MASK64)))
        m = np.uint64(self.m)
        idx = (h % m).astype(np.int64)
        rest = h // m
        low = rest & (~rest + np.uint64(1))  # lowest set bit, 0 when rest == 0
        bits = np.where(low == 0, np.uint64(1) << np.uint64(63), low)
        regs = self.registers.copy()
        np.bitwise_or.at(regs, idx, bits)
        return OdiSynopsis(self.kind, registers=regs, hash_seed=self.hash_seed)

    def _slot(self, h: int) -> tuple[int, int]:
        j, rest = divmod(h, self.m)[::-1]
        bit = (rest & -rest).bit_length() - 1 if rest else 63
        return j, bit

    def merge(self, other: "OdiSynopsis") -> "OdiSynopsis":
        if self.kind is not other.kind:
            raise IncompatibleSynopsisError(f"cannot merge {self.kind.name} with {other.kind.name}")
        if self.kind is Kind.COUNT_SKETCH:
            if self.m != other.m or self.hash_seed != other.hash_seed:
                raise IncompatibleSynopsisError("sketch parameters differ (m or hash seed)")
            return OdiSynopsis(self.kind, registers=self.registers | other.registers, hash_seed=self.hash_seed)
        if other.value is None:
            return self
        if self.value is None:
            return other
        if self.kind is Kind.MAX:
            return self if self.value >= other.value else other
        return self if self.value <= other.value else other

    def estimate(self) -> float:
        if self.kind is not Kind.COUNT_SKETCH:
            raise SynopsisKindError("estimate_count needs a COUNT_SKETCH")
        if self.m < 16:
            raise ValueError("estimation needs at least 16 registers")
        if self.is_empty:
            return 0.0
        regs = self.registers
        first_zero = np.zeros(self.m)
        for j, b in enumerate(regs.tolist()):
            first_zero[j] = ((~b) & (b + 1)).bit_length() - 1
        return self.m / PHI * 2.0 ** first_zero.mean()

    def to_bytes(self) -> bytes:
        """Kind byte, then either a presence flag and int64 value, or
        uint16 ``m``, uint64 hash seed and ``m`` uint64 registers; all big-endian."""
        if self.kind is Kind.COUNT_SKETCH:
            return struct.pack(">BHQ", self.kind, self.m, self.hash_seed) + self.registers.astype(">u8").tobytes()
        if self.value is None:
            return struct.pack(">BBq", self.kind, 0, 0)
        return struct.pack(">BBq", self.kind, 1, int(self.value))

    @classmethod
    def from_bytes(cls, data: bytes) -> "OdiSynopsis":
        kind = Kind(data[0])
        if kind is Kind.COUNT_SKETCH:
            _, m, seed = struct.unpack_from(">BHQ", data)
            regs = np.frombuffer(data, dtype=">u8", count=m, offset=11).astype(np.uint64)
            return cls(kind, registers=regs, hash_seed=seed)
        _, present, value = struct.unpack(">BBq", data)
        return cls(kind, value=value if present else None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OdiSynopsis) or self.kind is not other.kind:
            return NotImplemented
        if self.kind is Kind.COUNT_SKETCH:
            return self.hash_seed == other.hash_seed and np.array_equal(self.registers, other.registers)
        return self.value == other.value

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        if self.kind is Kind.COUNT_SKETCH:
            return f"OdiSynopsis(COUNT_SKETCH, m={self.m}, est={self.estimate() if self.m >= 16 else 'n/a'})"
        return f"OdiSynopsis({self.kind.name}, {self.value!r})"


def _is_ordered_scalar(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def parse_kind(kind: Kind | str) -> Kind:
    if isinstance(kind, Kind):
        return kind
    try:
        return Kind[str(kind).upper()]
    except KeyError:
        if str(kind).lower() == "count":
            return Kind.COUNT_SKETCH
        raise ValueError(f"unknown synopsis kind {kind!r}") from None


def synopsis_insert(s: OdiSynopsis, contribution) -> OdiSynopsis:
    return s.insert(contribution)


def synopsis_merge(a: OdiSynopsis, b: OdiSynopsis) -> OdiSynopsis:
    return a.merge(b)


def estimate_count(s: OdiSynopsis) -> float:
    return s.estimate()
