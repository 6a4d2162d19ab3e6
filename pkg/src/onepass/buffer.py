"""Bounded replay memory with freshness-biased reservoir insertion.

Each stream example is admitted with probability ``min(1, beta * m / n)``
where ``m`` is the capacity and ``n`` the number of examples seen so far.
``beta > 1`` tilts the reservoir toward recent examples. Once full, a new
admission overwrites a uniformly random occupied slot.

Payloads are stored as opaque bytes produced by a :class:`Codec`, so the
buffer's footprint depends on the codec rather than on the feature dtype.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from onepass.priority import DEFAULT_PRIORITY_FLOOR, SumTree


class CodecError(ValueError):
    """A payload could not be encoded or decoded."""


class Codec(Protocol):
    name: str

    def encode(self, x: np.ndarray) -> bytes: ...

    def decode(self, payload: bytes) -> np.ndarray: ...

    def decode_many(self, payloads: list[bytes]) -> np.ndarray: ...


class IdentityCodec:
    """Raw little-endian float64 bytes. Round trips are bit-exact."""

    name = "identity"

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self._nbytes = 8 * dim

    def encode(self, x: np.ndarray) -> bytes:
        x = np.asarray(x, dtype="<f8")
        if x.shape != (self.dim,):
            raise CodecError(f"expected a vector of shape ({self.dim},), got {x.shape}")
        return x.tobytes()

    def decode(self, payload: bytes) -> np.ndarray:
        if len(payload) != self._nbytes:
            raise CodecError(f"payload has {len(payload)} bytes, expected {self._nbytes}")
        return np.frombuffer(payload, dtype="<f8").astype(np.float64)

    def decode_many(self, payloads: list[bytes]) -> np.ndarray:
        blob = b"".join(payloads)
        if len(blob) != self._nbytes * len(payloads):
            raise CodecError("corrupt payload in batch")
        return np.frombuffer(blob, dtype="<f8").reshape(len(payloads), self.dim).astype(np.float64)


class Quant8Codec:
    """Per-vector affine 8-bit quantization.

    Layout: ``lo`` and ``step`` as two little-endian float64, then one uint8
    per feature. Decoding returns ``lo + q * step`` with
    ``step = (max - min) / 255``; every component is reproduced within
    ``step / 2`` of the input (plus float rounding). Roughly 8x smaller than
    the identity codec for wide vectors.
    """

    name = "quant8"
    _header = struct.Struct("<dd")

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self._nbytes = self._header.size + dim

    @staticmethod
    def tolerance(x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x.max() - x.min()) / 255.0 / 2.0

    def encode(self, x: np.ndarray) -> bytes:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise CodecError(f"expected a vector of shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise CodecError("cannot quantize non-finite values")
        lo = float(x.min())
        step = float(x.max() - lo) / 255.0
        if step > 0:
            q = np.clip(np.rint((x - lo) / step), 0, 255).astype(np.uint8)
        else:
            q = np.zeros(self.dim, dtype=np.uint8)
        return self._header.pack(lo, step) + q.tobytes()

    def decode(self, payload: bytes) -> np.ndarray:
        if len(payload) != self._nbytes:
            raise CodecError(f"payload has {len(payload)} bytes, expected {self._nbytes}")
        lo, step = self._header.unpack_from(payload)
        q = np.frombuffer(payload, dtype=np.uint8, offset=self._header.size)
        return lo + q.astype(np.float64) * step

    def decode_many(self, payloads: list[bytes]) -> np.ndarray:
        return np.stack([self.decode(p) for p in payloads]) if payloads else np.empty((0, self.dim))


CODECS = {"identity": IdentityCodec, "quant8": Quant8Codec}


def make_codec(codec_id: str, dim: int) -> Codec:
    try:
        return CODECS[codec_id](dim)
    except KeyError:
        raise ValueError(f"unknown codec {codec_id!r}; choose from {sorted(CODECS)}") from None


@dataclass(frozen=True)
class BufferConfig:
    capacity: int
    beta: float = 1.5
    codec_id: str = "identity"

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.codec_id not in CODECS:
            raise ValueError(f"unknown codec {self.codec_id!r}")


def inclusion_probability(n_seen: int, config: BufferConfig) -> float:
    """Admission probability for the ``n_seen``-th stream example."""
    if n_seen < 1:
        raise ValueError("inclusion probability is undefined before any example is seen")
    return min(1.0, config.beta * config.capacity / n_seen)


class ReplayBuffer:
    """Fixed-capacity store of encoded examples and their sampling priorities.

    ``n_seen`` counts stream examples and must be advanced once per example
    with :meth:`observe` before that example's :meth:`try_insert`; :meth:`offer`
    does both. Priorities live in ``self.tree`` (a :class:`SumTree`), with
    unoccupied slots at zero.
    """

    def __init__(
        self,
        config: BufferConfig,
        dim: int,
        rng: np.random.Generator,
        priority_floor: float = DEFAULT_PRIORITY_FLOOR,
    ) -> None:
        self.config = config
        self.dim = dim
        self.codec = make_codec(config.codec_id, dim)
        self.rng = rng
        self.priority_floor = priority_floor
        self.tree = SumTree(config.capacity)
        self.n_seen = 0
        self.size = 0
        self._payloads: list[bytes | None] = [None] * config.capacity
        self.labels = np.full(config.capacity, -1, dtype=np.int64)
        self.insert_step = np.full(config.capacity, -1, dtype=np.int64)
        self.stream_index = np.full(config.capacity, -1, dtype=np.int64)

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def __len__(self) -> int:
        return self.size

    def is_full(self) -> bool:
        return self.size == self.capacity

    def observe(self) -> int:
        self.n_seen += 1
        return self.n_seen

    def try_insert(self, x: np.ndarray, y: int, priority: float, step: int = 0) -> int | None:
        """Admit the most recently observed example with reservoir probability.

        Returns the slot written, or ``None`` if the example was skipped.
        """
        if self.n_seen < 1:
            raise RuntimeError("observe() must be called before try_insert()")
        if not self.priority_floor * (1 - 1e-12) <= priority <= 1.0:
            raise ValueError(f"priority {priority} outside [{self.priority_floor}, 1]")
        p = inclusion_probability(self.n_seen, self.config)
        if p < 1.0 and self.rng.random() >= p:
            return None
        payload = self.codec.encode(x)
        if self.size < self.capacity:
            slot = self.size
            self.size += 1
        else:
            slot = int(self.rng.integers(self.size))
        self._payloads[slot] = payload
        self.labels[slot] = y
        self.insert_step[slot] = step
        self.stream_index[slot] = self.n_seen - 1
        self.tree.update(slot, priority)
        return slot

    def offer(self, x: np.ndarray, y: int, priority: float, step: int = 0) -> int | None:
        self.observe()
        return self.try_insert(x, y, priority, step)

    def _check_occupied(self, slot: int) -> None:
        if not 0 <= slot < self.size:
            raise IndexError(f"slot {slot} is not occupied (buffer holds {self.size})")

    def read_slot(self, slot: int) -> tuple[np.ndarray, int]:
        self._check_occupied(slot)
        return self.codec.decode(self._payloads[slot]), int(self.labels[slot])

    def read_slots(self, slots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        slots = np.asarray(slots, dtype=np.int64)
        if slots.size and (slots.min() < 0 or slots.max() >= self.size):
            raise IndexError("batch references an unoccupied slot")
        payloads = [self._payloads[s] for s in slots.tolist()]
        return self.codec.decode_many(payloads), self.labels[slots].copy()

    def priorities(self, slots: np.ndarray) -> np.ndarray:
        return self.tree.leaves[np.asarray(slots, dtype=np.int64)].copy()

    def set_priority(self, slot: int, value: float) -> None:
        self._check_occupied(slot)
        self.tree.update(slot, value)

    def mean_priority(self) -> float:
        return self.tree.total / self.size if self.size else 0.0

    def payload_bytes(self) -> int:
        return sum(len(p) for p in self._payloads[: self.size])
