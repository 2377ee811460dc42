"""Contiguous layer partitioning balancing shard compute against activation transfer."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import InvalidInputError

# 1 MB of activation costs about one compute unit
DEFAULT_LAMBDA = 1e-6

# exhaustive search is used while the number of candidate split sets stays below this
EXHAUSTIVE_LIMIT = 200_000
EXHAUSTIVE_MAX_LAYERS = 32


@dataclass(frozen=True)
class LayerProfile:
    compute_cost: tuple[float, ...]
    activation_bytes: tuple[float, ...]

    def __init__(self, compute_cost: Sequence[float], activation_bytes: Sequence[float]):
        compute = tuple(compute_cost)
        acts = tuple(activation_bytes)
        n = len(compute)
        if n == 0:
            raise InvalidInputError("profile has no layers")
        # the final layer's output never crosses a split, so it may be omitted
        if len(acts) not in (n, n - 1):
            raise InvalidInputError(f"activation_bytes has {len(acts)} entries for {n} layers")
        if any(c <= 0 for c in compute) or any(a <= 0 for a in acts):
            raise InvalidInputError("profile entries must be positive")
        object.__setattr__(self, "compute_cost", compute)
        object.__setattr__(self, "activation_bytes", acts)

    @property
    def num_layers(self) -> int:
        return len(self.compute_cost)


@dataclass(frozen=True)
class ShardPlan:
    split_points: tuple[int, ...]
    per_shard_compute: tuple[float, ...]
    transfer_costs: tuple[float, ...]
    objective: float
    lam: float

    @property
    def n_shards(self) -> int:
        return len(self.split_points) + 1

    @property
    def max_compute(self) -> float:
        return max(self.per_shard_compute)

    @property
    def total_transfer(self) -> float:
        return sum(self.transfer_costs)


def evaluate_splits(profile: LayerProfile, splits: Sequence[int], lam: float) -> ShardPlan:
    """Score one split set. Every planner path goes through here so objectives
    for the same splits are bit-identical regardless of search strategy."""
    bounds = (0, *splits, profile.num_layers)
    per_shard = tuple(sum(profile.compute_cost[a:b]) for a, b in zip(bounds, bounds[1:]))
    transfers = tuple(profile.activation_bytes[p - 1] for p in splits)
    objective = max(per_shard) + lam * sum(transfers)
    return ShardPlan(tuple(splits), per_shard, transfers, objective, lam)


def _better(a: ShardPlan, b: ShardPlan | None) -> bool:
    if b is None:
        return True
    return (a.objective, a.total_transfer, a.split_points) < (b.objective, b.total_transfer, b.split_points)


def _plan_exhaustive(profile: LayerProfile, n_shards: int, lam: float) -> ShardPlan:
    best = None
    # combinations() yields in lexicographic order, so ties keep the smallest
    for splits in itertools.combinations(range(1, profile.num_layers), n_shards - 1):
        plan = evaluate_splits(profile, splits, lam)
        if _better(plan, best):
            best = plan
    return best


def _plan_dp(profile: LayerProfile, n_shards: int, lam: float) -> ShardPlan:
    """Exact search for large profiles.

    For every candidate bottleneck value (a contiguous segment sum), a DP finds
    the minimum-transfer partition whose shards all fit under it. The best
    (bottleneck + lam * transfer) over all candidates is the optimum.
    """
    n = profile.num_layers
    compute = profile.compute_cost
    acts = profile.activation_bytes
    seg = [[0.0] * (n + 1) for _ in range(n + 1)]
    for a in range(n):
        for b in range(a + 1, n + 1):
            seg[a][b] = sum(compute[a:b])
    candidates = sorted({seg[a][b] for a in range(n) for b in range(a + 1, n + 1)})

    best = None
    for cap in candidates:
        # cost[k][i]: (transfer, splits) covering layers i..n-1 with k shards
        inf = (math.inf, ())
        cost = [[inf] * (n + 1) for _ in range(n_shards + 1)]
        cost[0][n] = (0.0, ())
        for k in range(1, n_shards + 1):
            for i in range(n - 1, -1, -1):
                if k == 1:
                    cost[1][i] = (0.0, ()) if seg[i][n] <= cap else inf
                    continue
                best_here = inf
                for j in range(i + 1, n):
                    if seg[i][j] > cap:
                        break
                    tail = cost[k - 1][j]
                    if tail[0] == math.inf:
                        continue
                    cand = (acts[j - 1] + tail[0], (j, *tail[1]))
                    if cand < best_here:
                        best_here = cand
                cost[k][i] = best_here
        transfer, splits = cost[n_shards][0]
        if transfer == math.inf:
            continue
        plan = evaluate_splits(profile, splits, lam)
        if _better(plan, best):
            best = plan
    return best


def plan_shards(profile: LayerProfile, n_shards: int, lam: float = DEFAULT_LAMBDA) -> ShardPlan:
    n = profile.num_layers
    if n_shards < 1 or n_shards > n:
        raise InvalidInputError(f"n_shards must be in [1, {n}], got {n_shards}")
    if n_shards == 1:
        return evaluate_splits(profile, (), lam)
    if n <= EXHAUSTIVE_MAX_LAYERS and math.comb(n - 1, n_shards - 1) <= EXHAUSTIVE_LIMIT:
        return _plan_exhaustive(profile, n_shards, lam)
    return _plan_dp(profile, n_shards, lam)
