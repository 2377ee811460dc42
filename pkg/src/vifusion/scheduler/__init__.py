from .fusion import (
    Admission,
    FusionBatch,
    FusionBuffer,
    FusionPolicy,
    FusionScheduler,
    enqueue,
    poll_trigger,
)
from .pipeline import (
    CallableExecutor,
    CostModelExecutor,
    DispatchLog,
    QueryCompletion,
    StageError,
    StageRecord,
    run_dispatch_loop,
)
from .sharding import DEFAULT_LAMBDA, LayerProfile, ShardPlan, evaluate_splits, plan_shards

__all__ = [
    "Admission",
    "CallableExecutor",
    "CostModelExecutor",
    "DEFAULT_LAMBDA",
    "DispatchLog",
    "FusionBatch",
    "FusionBuffer",
    "FusionPolicy",
    "FusionScheduler",
    "LayerProfile",
    "QueryCompletion",
    "ShardPlan",
    "StageError",
    "StageRecord",
    "enqueue",
    "evaluate_splits",
    "plan_shards",
    "poll_trigger",
    "run_dispatch_loop",
]
