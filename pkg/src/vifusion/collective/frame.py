"""AllReduce wire frame: 30-byte little-endian header followed by float32 payload."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FramingError
from ..tensor import DTYPE

MAGIC = b"VFAR"
VERSION = 1
# magic, version, msg_type, job_id, round, chunk_index, sender_id, payload_len
HEADER = struct.Struct("<4sBBQIIII")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 30

# high bit of msg_type marks a rejected/failed frame (NACK semantics)
ERROR_BIT = 0x80

_EMPTY = np.zeros(0, dtype=DTYPE)
_EMPTY.setflags(write=False)


class MsgType(enum.IntEnum):
    PUSH_PARTIAL = 1
    GROUP_SUM = 2
    GLOBAL_SUM = 3
    BROADCAST = 4
    ACK = 5


@dataclass(eq=False, slots=True)
class AllReduceFrame:
    msg_type: MsgType
    job_id: int
    round: int
    chunk_index: int
    sender_id: int
    payload: np.ndarray = field(default=_EMPTY)
    error: bool = False

    @property
    def payload_len(self) -> int:
        return self.payload.shape[0] * 4

    @property
    def wire_size(self) -> int:
        return HEADER_SIZE + self.payload.shape[0] * 4

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.job_id, self.round, self.chunk_index, self.sender_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AllReduceFrame):
            return NotImplemented
        return encode_frame(self) == encode_frame(other)

    def __repr__(self) -> str:
        err = ", error" if self.error else ""
        return (
            f"AllReduceFrame({self.msg_type.name}, job={self.job_id}, round={self.round}, "
            f"chunk={self.chunk_index}, sender={self.sender_id}, payload_len={self.payload_len}{err})"
        )


def encode_header(frame: AllReduceFrame) -> bytes:
    msg_type = int(frame.msg_type) | (ERROR_BIT if frame.error else 0)
    return HEADER.pack(
        MAGIC, VERSION, msg_type, frame.job_id, frame.round, frame.chunk_index, frame.sender_id, frame.payload_len
    )


def encode_frame(frame: AllReduceFrame) -> bytes:
    payload = np.ascontiguousarray(frame.payload, dtype=DTYPE)
    return encode_header(frame) + payload.tobytes()


def decode_header(buf: bytes) -> tuple[MsgType, bool, int, int, int, int, int]:
    if len(buf) < HEADER_SIZE:
        raise FramingError(f"need {HEADER_SIZE} header bytes, got {len(buf)}")
    magic, version, raw_type, job_id, rnd, chunk, sender, payload_len = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FramingError(f"unsupported version {version}")
    if payload_len % 4:
        raise FramingError(f"payload_len {payload_len} not a multiple of 4")
    try:
        msg_type = MsgType(raw_type & ~ERROR_BIT)
    except ValueError as exc:
        raise FramingError(f"unknown msg_type {raw_type}") from exc
    return msg_type, bool(raw_type & ERROR_BIT), job_id, rnd, chunk, sender, payload_len


def decode_frame(buf: bytes) -> AllReduceFrame:
    msg_type, error, job_id, rnd, chunk, sender, payload_len = decode_header(buf)
    if len(buf) != HEADER_SIZE + payload_len:
        raise FramingError(f"frame is {len(buf)} bytes, header declares {HEADER_SIZE + payload_len}")
    payload = np.frombuffer(buf, dtype=DTYPE, offset=HEADER_SIZE)
    return AllReduceFrame(msg_type, job_id, rnd, chunk, sender, payload, error)
