"""Aggregation-server state machine (rack and core tiers).

A rack-tier job collects PUSH_PARTIAL frames from its group, sums them and
forwards one GROUP_SUM to the core tier (or broadcasts directly when it is
the only group). The core tier collects GROUP_SUMs and returns one
GLOBAL_SUM per rack; each rack job then broadcasts to its members.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ProtocolError, StragglerTimeoutError
from .frame import AllReduceFrame, MsgType

Outbound = list[tuple[int, AllReduceFrame]]


class Phase(enum.IntEnum):
    COLLECTING = 0
    FORWARDING = 1
    BROADCASTING = 2
    DONE = 3
    ABORTED = 4


def canonical_sum(payloads: dict[int, np.ndarray]) -> np.ndarray:
    """Left fold in ascending sender order, independent of arrival order."""
    keys = sorted(payloads)
    acc = payloads[keys[0]].copy()
    for k in keys[1:]:
        acc += payloads[k]
    return acc


@dataclass
class AggregationJobState:
    job_id: int
    round: int
    tier: str  # "rack" | "core"
    self_id: int
    expected_senders: frozenset[int]
    downstream: tuple[int, ...]
    upstream: int | None = None
    received: dict[int, np.ndarray] = field(default_factory=dict)
    phase: Phase = Phase.COLLECTING
    chunk_index: int = 0
    payload_len: int | None = None
    error: Exception | None = None
    result: np.ndarray | None = None

    @property
    def accumulator(self) -> np.ndarray | None:
        return canonical_sum(self.received) if self.received else None

    @property
    def missing(self) -> list[int]:
        return sorted(self.expected_senders - self.received.keys())

    @property
    def operands(self) -> int:
        return len(self.received)


def _ack(state: AggregationJobState, frame: AllReduceFrame, error: bool = False) -> AllReduceFrame:
    return AllReduceFrame(MsgType.ACK, frame.job_id, frame.round, frame.chunk_index, state.self_id, error=error)


def _abort(state: AggregationJobState, exc: Exception) -> Outbound:
    state.phase = Phase.ABORTED
    state.error = exc
    out = []
    for dst in sorted(state.expected_senders):
        out.append((dst, AllReduceFrame(MsgType.ACK, state.job_id, state.round, state.chunk_index, state.self_id, error=True)))
    return out


def _emit_down(state: AggregationJobState, payload: np.ndarray, msg_type: MsgType) -> Outbound:
    state.result = payload
    return [
        (dst, AllReduceFrame(msg_type, state.job_id, state.round, state.chunk_index, state.self_id, payload))
        for dst in state.downstream
    ]


def aggregation_server_handle(frame: AllReduceFrame, state: AggregationJobState) -> Outbound:
    """Apply one inbound frame to a job and return the frames to send.

    Duplicate pushes are answered with a plain ACK and leave the
    accumulator untouched.
    """
    if state.phase == Phase.ABORTED:
        return [(frame.sender_id, _ack(state, frame, error=True))]

    inbound = MsgType.PUSH_PARTIAL if state.tier == "rack" else MsgType.GROUP_SUM
    if frame.msg_type == inbound:
        sender = frame.sender_id
        if sender not in state.expected_senders:
            return [(sender, _ack(state, frame, error=True))]
        if sender in state.received or state.phase != Phase.COLLECTING:
            return [(sender, _ack(state, frame))]
        if state.payload_len is None:
            state.payload_len = frame.payload_len
            state.chunk_index = frame.chunk_index
        elif frame.payload_len != state.payload_len:
            return _abort(
                state,
                ProtocolError(
                    f"job {state.job_id}: sender {sender} sent {frame.payload_len} B, expected {state.payload_len} B"
                ),
            )
        state.received[sender] = frame.payload
        if len(state.received) < len(state.expected_senders):
            return []
        total = canonical_sum(state.received)
        if state.tier == "core":
            state.phase = Phase.DONE
            return _emit_down(state, total, MsgType.GLOBAL_SUM)
        if state.upstream is None:
            # single group: the core stage is the identity
            state.phase = Phase.DONE
            return _emit_down(state, total, MsgType.BROADCAST)
        state.phase = Phase.FORWARDING
        return [
            (
                state.upstream,
                AllReduceFrame(MsgType.GROUP_SUM, state.job_id, state.round, state.chunk_index, state.self_id, total),
            )
        ]

    if frame.msg_type == MsgType.GLOBAL_SUM and state.tier == "rack":
        if state.phase != Phase.FORWARDING or frame.sender_id != state.upstream:
            return [(frame.sender_id, _ack(state, frame))]
        state.phase = Phase.BROADCASTING
        out = _emit_down(state, frame.payload, MsgType.BROADCAST)
        state.phase = Phase.DONE
        return out

    if frame.msg_type == MsgType.ACK:
        if frame.error and state.upstream is not None and frame.sender_id == state.upstream:
            # the core tier gave up on this job; tell the group
            return _abort(state, ProtocolError(f"job {state.job_id}: aborted upstream"))
        return []
    return [(frame.sender_id, _ack(state, frame, error=True))]


def straggler_check(state: AggregationJobState) -> Outbound:
    """Abort a job that is still collecting when its timeout fires."""
    if state.phase != Phase.COLLECTING:
        return []
    return _abort(state, StragglerTimeoutError(state.job_id, state.missing))


class AggregationServer:
    """Holds many jobs; serializes state changes per job."""

    def __init__(self, self_id: int, opener: Callable[[AllReduceFrame], AggregationJobState | None] | None = None):
        self.self_id = self_id
        self.jobs: dict[int, AggregationJobState] = {}
        self.opener = opener

    def register(self, state: AggregationJobState) -> AggregationJobState:
        self.jobs[state.job_id] = state
        return state

    def handle(self, frame: AllReduceFrame) -> Outbound:
        state = self.jobs.get(frame.job_id)
        if state is None and self.opener is not None:
            state = self.opener(frame)
            if state is not None:
                self.jobs[frame.job_id] = state
        if state is None:
            # unknown job: NACK
            return [
                (
                    frame.sender_id,
                    AllReduceFrame(MsgType.ACK, frame.job_id, frame.round, frame.chunk_index, self.self_id, error=True),
                )
            ]
        return aggregation_server_handle(frame, state)

    def errors(self) -> list[Exception]:
        return [s.error for s in self.jobs.values() if s.error is not None]
