from .aggregator import AggregationJobState, AggregationServer, Phase, aggregation_server_handle, canonical_sum
from .algorithms import ALL_KINDS, HFBA_HIGH_CHUNK, HFBA_LOW_CHUNK, AlgorithmKind
from .api import (
    Communicator,
    allreduce,
    allreduce_hfba,
    allreduce_hierarchical,
    allreduce_naive,
    allreduce_ring,
    serve_aggregator,
)
from .frame import ERROR_BIT, HEADER_SIZE, MAGIC, VERSION, AllReduceFrame, MsgType, decode_frame, encode_frame
from .simrun import AllReduceRun, SimConfig, simulate_allreduce

__all__ = [
    "ALL_KINDS",
    "AggregationJobState",
    "AggregationServer",
    "AlgorithmKind",
    "AllReduceFrame",
    "AllReduceRun",
    "Communicator",
    "ERROR_BIT",
    "HEADER_SIZE",
    "HFBA_HIGH_CHUNK",
    "HFBA_LOW_CHUNK",
    "MAGIC",
    "MsgType",
    "Phase",
    "SimConfig",
    "VERSION",
    "aggregation_server_handle",
    "allreduce",
    "allreduce_hfba",
    "allreduce_hierarchical",
    "allreduce_naive",
    "allreduce_ring",
    "canonical_sum",
    "decode_frame",
    "encode_frame",
    "serve_aggregator",
    "simulate_allreduce",
]
