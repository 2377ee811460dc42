"""Flat float32 tensors plus the fuse/unfuse, padding, chunking and reduction kernels."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityExceededError, CorruptionError, InvalidInputError

DTYPE = np.dtype("<f4")
ELEMENT_SIZE = DTYPE.itemsize


def next_pow2(n: int) -> int:
    if n < 1:
        raise InvalidInputError("next_pow2 needs n >= 1")
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True, eq=False)
class Tensor:
    """Read-only float32 payload. ``data`` holds ``padded_len`` elements, the
    first ``logical_len`` of which are meaningful; the tail is zero."""

    data: np.ndarray
    logical_len: int

    def __post_init__(self):
        data = self.data
        if data.dtype != DTYPE or data.ndim != 1:
            raise InvalidInputError(f"tensor data must be 1-D float32, got {data.dtype} ndim={data.ndim}")
        if not 0 <= self.logical_len <= data.shape[0]:
            raise InvalidInputError(f"logical_len {self.logical_len} outside [0, {data.shape[0]}]")
        if self.logical_len < data.shape[0] and np.any(data[self.logical_len:]):
            raise InvalidInputError("padding tail must be zero")
        if data.flags.writeable:
            data.setflags(write=False)

    @classmethod
    def from_values(cls, values: Iterable[float] | np.ndarray) -> Tensor:
        arr = np.array(values, dtype=DTYPE).reshape(-1)
        return cls(arr, arr.shape[0])

    @classmethod
    def zeros(cls, n: int) -> Tensor:
        return cls(np.zeros(n, dtype=DTYPE), n)

    @property
    def padded_len(self) -> int:
        return self.data.shape[0]

    @property
    def nbytes(self) -> int:
        return self.data.shape[0] * ELEMENT_SIZE

    @property
    def padded_bytes(self) -> int:
        return self.nbytes

    @property
    def logical(self) -> np.ndarray:
        return self.data[: self.logical_len]

    def __len__(self) -> int:
        return self.padded_len

    def __eq__(self, other: object) -> bool:
        # bit-level equality, so -0.0 != 0.0 and NaN payloads compare by bits
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.logical_len == other.logical_len
            and self.data.shape == other.data.shape
            and self.data.view(np.uint32).tobytes() == other.data.view(np.uint32).tobytes()
        )

    def __repr__(self) -> str:
        head = np.array2string(self.data[:8], separator=",")
        more = "..." if self.padded_len > 8 else ""
        return f"Tensor(logical_len={self.logical_len}, padded_len={self.padded_len}, data={head}{more})"


class Modality(str, enum.Enum):
    RGB = "RGB"
    FLOW = "FLOW"
    TEXT = "TEXT"
    AUDIO = "AUDIO"


@dataclass(frozen=True)
class SegmentDescriptor:
    query_id: int
    modality: str
    arrival_time: int  # monotonic ns
    logical_len: int


@dataclass(frozen=True)
class SegmentOffset:
    query_id: int
    start_index: int
    logical_len: int


@dataclass(frozen=True, eq=False)
class FusedTensor:
    buffer: Tensor
    offsets: tuple[SegmentOffset, ...]
    modalities: tuple[str, ...] = field(default=())


def pad_to_pow2(t: Tensor) -> Tensor:
    if t.logical_len < 1:
        raise InvalidInputError("cannot pad a zero-length tensor")
    target = next_pow2(t.logical_len)
    if t.padded_len == target:
        return t
    out = np.zeros(target, dtype=DTYPE)
    out[: t.logical_len] = t.logical
    return Tensor(out, t.logical_len)


class WriteAudit:
    """Records every element range written into a fused buffer."""

    def __init__(self):
        self.ranges: list[tuple[int, int]] = []

    def record(self, start: int, stop: int) -> None:
        self.ranges.append((start, stop))

    def writes_per_element(self, n: int) -> np.ndarray:
        counts = np.zeros(n, dtype=np.int64)
        for start, stop in self.ranges:
            counts[start:stop] += 1
        return counts


def fuse(
    segments: Sequence[tuple[SegmentDescriptor, Tensor]],
    capacity_bytes: int | None = None,
    audit: WriteAudit | None = None,
) -> FusedTensor:
    """Lay the power-of-two padded segments end to end in one buffer.

    Each segment's logical elements are written exactly once into a
    pre-zeroed backing array; the padding slots are never touched.
    """
    if not segments:
        raise InvalidInputError("fuse needs at least one segment")
    slots = []
    total = 0
    for desc, t in segments:
        if t.logical_len < 1:
            raise InvalidInputError(f"segment {desc.query_id} is empty")
        if t.data.dtype != DTYPE:
            raise InvalidInputError("all segments must be float32")
        slots.append(total)
        total += next_pow2(t.logical_len)
    if capacity_bytes is not None and total * ELEMENT_SIZE > capacity_bytes:
        raise CapacityExceededError(f"fused size {total * ELEMENT_SIZE} B exceeds capacity {capacity_bytes} B")

    buf = np.zeros(total, dtype=DTYPE)
    offsets = []
    for (desc, t), start in zip(segments, slots):
        stop = start + t.logical_len
        buf[start:stop] = t.logical
        if audit is not None:
            audit.record(start, stop)
        offsets.append(SegmentOffset(desc.query_id, start, t.logical_len))
    return FusedTensor(Tensor(buf, total), tuple(offsets), tuple(d.modality for d, _ in segments))


def unfuse(f: FusedTensor) -> list[tuple[int, Tensor]]:
    n = f.buffer.padded_len
    if not f.offsets:
        if n:
            raise CorruptionError("buffer holds data but the offset table is empty")
        return []
    out = []
    prev_end = 0
    for off in f.offsets:
        start, length = off.start_index, off.logical_len
        if start < prev_end or length < 1 or start + length > n:
            raise CorruptionError(f"offset ({off.query_id}, {start}, {length}) invalid for buffer of {n}")
        prev_end = start + next_pow2(length)
        # strip padding: only the logical elements go back to the caller
        out.append((off.query_id, Tensor(f.buffer.data[start : start + length].copy(), length)))
    return out


def reduce_sum(a: Tensor, b: Tensor) -> Tensor:
    if a.padded_len != b.padded_len:
        raise InvalidInputError(f"length mismatch {a.padded_len} vs {b.padded_len}")
    return Tensor(np.add(a.data, b.data), a.logical_len)


def fold_sum(tensors: Sequence[Tensor]) -> Tensor:
    """Left-to-right n-ary sum; the canonical in-node reduction order."""
    if not tensors:
        raise InvalidInputError("fold_sum of nothing")
    first = tensors[0]
    acc = first.data.copy()
    for t in tensors[1:]:
        if t.padded_len != first.padded_len:
            raise InvalidInputError(f"length mismatch {first.padded_len} vs {t.padded_len}")
        acc += t.data
    return Tensor(acc, first.logical_len)


def chunk_split(t: Tensor, chunk_bytes: int) -> list[Tensor]:
    if chunk_bytes <= 0:
        raise InvalidInputError("chunk_bytes must be positive")
    if chunk_bytes % ELEMENT_SIZE:
        raise InvalidInputError(f"chunk_bytes must be a multiple of {ELEMENT_SIZE}")
    step = chunk_bytes // ELEMENT_SIZE
    return [Tensor(t.data[i : i + step], len(t.data[i : i + step])) for i in range(0, t.padded_len, step)]


def concat(chunks: Sequence[Tensor]) -> Tensor:
    if not chunks:
        return Tensor(np.zeros(0, dtype=DTYPE), 0)
    data = np.concatenate([c.data for c in chunks])
    return Tensor(data, data.shape[0])
