"""Budgeted stratified sampling over an append-only stream.

Rows arrive in mini-batches.  Each row receives a fresh uniform (0, 1)
key; a stratum retains the rows with the smallest keys it has ever seen,
tracking d_i, the smallest key it ever discarded (1.0 until the first
eviction).  A new row enters its stratum's sample iff its key is at most
d_i, which keeps every retained set an exact bottom-k by key, hence a
uniform without-replacement subset of the stratum so far.

After each batch the total may exceed the budget M.  The settle step
computes fractional per-stratum targets M_i = M * f(i) / sum(f) from the
current online statistics (f is the square root of the configured
weighted squared-CV score, as in the offline allocators) and evicts the
excess so that the objective

    F = sum_i f(i)^2 / s_i

increases as little as possible.  Only strata above their target are ever
touched; within them, evictions are distributed by repeatedly removing a
row from the stratum with the smallest marginal increase
f(i)^2 / (s_i (s_i - 1)), which is the exact integer optimum for this
separable convex objective.  Evicted rows are always the largest keys of
their stratum.

With batch size one this is a pure streaming sampler; with the entire
stream as one batch it reduces to the offline pipeline (same statistics,
same targets), up to one row of rounding.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alloc import (
    AllocationPlan,
    L2,
    UNIT_WEIGHTS,
    WeightSpec,
    floor_zero_costs,
    resolve_caps,
    round_with_caps,
)
from .dataset import ColumnSchema, GroupKey, Relation
from .errors import SchemaMismatch
from .sampler import StratifiedSample, StratumSample, draw_stratified
from .stats import EMPTY_MOMENTS, RunningMoments, accumulate, compute_catalog


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which columns and weights drive the per-stratum score f(i)^2."""

    columns: tuple[str, ...]
    weights: WeightSpec = UNIT_WEIGHTS


@dataclass
class KeyedStratumSample:
    """Bottom-k-by-key reservoir for one stratum plus its online moments."""

    key: GroupKey
    d: float = 1.0
    n_seen: int = 0
    moments: dict[str, RunningMoments] = field(default_factory=dict)
    # max-heap on key via negation: entries are (-key, arrival ordinal, record)
    heap: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.heap)

    def observe(self, record_values: dict[str, float]) -> None:
        self.n_seen += 1
        for col, x in record_values.items():
            self.moments[col] = accumulate(self.moments.get(col, EMPTY_MOMENTS), x)

    def offer(self, key_value: float, ordinal: int, record: tuple) -> bool:
        if key_value <= self.d:
            heapq.heappush(self.heap, (-key_value, ordinal, record))
            return True
        return False

    def evict(self, count: int) -> None:
        """Drop the ``count`` largest keys; d becomes the smallest dropped."""
        smallest = None
        for _ in range(count):
            neg_key, _, _ = heapq.heappop(self.heap)
            smallest = -neg_key
        if smallest is not None:
            self.d = smallest

    def retained_keys(self) -> list[float]:
        return sorted(-neg for neg, _, _ in self.heap)


@dataclass
class SettleReport:
    beta: int
    evicted: dict[GroupKey, int]
    targets: dict[GroupKey, float]
    f_squared: dict[GroupKey, float]
    delta_objective: float


@dataclass
class StreamState:
    schema: tuple[ColumnSchema, ...]
    group_attrs: tuple[str, ...]
    objective: ObjectiveSpec
    budget: int
    strata: dict[GroupKey, KeyedStratumSample] = field(default_factory=dict)
    arrivals: int = 0
    last_settle: SettleReport | None = None

    @property
    def total_retained(self) -> int:
        return sum(s.size for s in self.strata.values())

    def scores(self) -> tuple[list[GroupKey], np.ndarray]:
        """Per-stratum f(i)^2 from the current online moments.

        Zero-variance or zero-mean strata score 0 and are floored to a
        vanishing positive value, mirroring the offline cost floor.
        """
        keys = list(self.strata)
        raw = np.zeros(len(keys))
        for i, key in enumerate(keys):
            st = self.strata[key]
            total = 0.0
            for col in self.objective.columns:
                m = st.moments.get(col, EMPTY_MOMENTS)
                if m.mean == 0.0:
                    continue
                cv = m.std / abs(m.mean)
                total += self.objective.weights.weight(0, key, col) * cv * cv
            raw[i] = total
        return keys, floor_zero_costs(raw)

    def targets(self) -> dict[GroupKey, float]:
        """Fractional optimal sizes M_i = M * f(i) / sum f(j)."""
        keys, f2 = self.scores()
        f = np.sqrt(f2)
        shares = self.budget * f / f.sum()
        return dict(zip(keys, shares))

    def objective_value(self) -> float:
        """F = sum f(i)^2 / s_i over retained strata (inf on an empty one)."""
        keys, f2 = self.scores()
        total = 0.0
        for key, f2_i in zip(keys, f2):
            s = self.strata[key].size
            if s == 0:
                return math.inf
            total += f2_i / s
        return total

    def snapshot(self) -> StratifiedSample:
        """Read-only view of the current sample for querying."""
        sample = StratifiedSample(self.schema, self.group_attrs, "stream", 0)
        for key, st in self.strata.items():
            entries = sorted(st.heap, key=lambda e: e[1])
            sample.strata.append(
                StratumSample(
                    key,
                    st.n_seen,
                    st.size,
                    [e[1] for e in entries],
                    [e[2] for e in entries],
                )
            )
        return sample


def make_state(
    schema: Sequence[ColumnSchema],
    group_attrs: Sequence[str],
    objective: ObjectiveSpec,
    budget: int,
) -> StreamState:
    names = {c.name for c in schema}
    for a in tuple(group_attrs) + tuple(objective.columns):
        if a not in names:
            raise SchemaMismatch(f"column {a!r} not in schema")
    return StreamState(tuple(schema), tuple(group_attrs), objective, int(budget))


def batch_keys(seed: int, count: int) -> np.ndarray:
    """Uniform keys assigned to a batch, in row order.

    Exposed so replay checks can regenerate the exact keys a batch used.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    return rng.random(count)


def ingest_batch(state: StreamState, batch: Sequence[tuple], seed: int) -> StreamState:
    """Feed one mini-batch, then settle back to the budget.

    Every arriving row updates its stratum's online moments and count; it
    is retained only if its key passes the stratum's discard threshold.
    New strata start with d = 1.0 (accept everything).
    """
    by_name = {c.name: i for i, c in enumerate(state.schema)}
    group_pos = [by_name[a] for a in state.group_attrs]
    col_pos = {col: by_name[col] for col in state.objective.columns}
    n_cols = len(state.schema)

    keys = batch_keys(seed, len(batch))
    for key_value, record in zip(keys, batch):
        if len(record) != n_cols:
            raise SchemaMismatch(
                f"record has {len(record)} fields, schema has {n_cols}"
            )
        try:
            col_values = {col: float(record[i]) for col, i in col_pos.items()}
        except (TypeError, ValueError):
            raise SchemaMismatch("non-numeric value in an aggregation column") from None
        gkey = GroupKey(state.group_attrs, tuple(record[i] for i in group_pos))
        stratum = state.strata.get(gkey)
        if stratum is None:
            stratum = KeyedStratumSample(gkey)
            state.strata[gkey] = stratum
        stratum.observe(col_values)
        stratum.offer(float(key_value), state.arrivals, tuple(record))
        state.arrivals += 1
    settle_budget(state)
    return state


def settle_budget(state: StreamState) -> StreamState:
    """Evict the rows above budget with the smallest possible F increase.

    Only strata whose current size exceeds their fractional target M_i
    lose rows; the eviction counts are the exact integer minimizer of the
    F increase over those strata (greedy by marginal cost, which is optimal
    for a separable convex objective).
    """
    beta = state.total_retained - state.budget
    if beta <= 0:
        state.last_settle = SettleReport(max(beta, 0), {}, {}, {}, 0.0)
        return state
    keys, f2 = state.scores()
    f = np.sqrt(f2)
    shares = state.budget * f / f.sum()
    targets = dict(zip(keys, shares))
    f2_by_key = dict(zip(keys, f2))

    oversized = [k for k in keys if state.strata[k].size > targets[k]]
    sizes = {k: state.strata[k].size for k in oversized}

    def marginal(k: GroupKey) -> float:
        s = sizes[k]
        if s <= 1:
            return math.inf
        return f2_by_key[k] / (s * (s - 1))

    heap = [(marginal(k), i, k) for i, k in enumerate(oversized)]
    heapq.heapify(heap)
    evicted: dict[GroupKey, int] = {}
    before = {k: state.strata[k].size for k in oversized}
    for _ in range(beta):
        cost, i, k = heapq.heappop(heap)
        sizes[k] -= 1
        evicted[k] = evicted.get(k, 0) + 1
        if sizes[k] > 0:  # an emptied stratum cannot lose more rows
            heapq.heappush(heap, (marginal(k), i, k))

    delta = 0.0
    for k, count in evicted.items():
        state.strata[k].evict(count)
        s_new = state.strata[k].size
        s_old = before[k]
        if s_new == 0:
            delta = math.inf
        elif not math.isinf(delta):
            delta += f2_by_key[k] * (1.0 / s_new - 1.0 / s_old)
    state.last_settle = SettleReport(beta, evicted, targets, f2_by_key, delta)
    return state


def two_pass_reference(
    records: Sequence[tuple],
    schema: Sequence[ColumnSchema],
    group_attrs: Sequence[str],
    objective: ObjectiveSpec,
    budget: int,
    seed: int,
) -> StratifiedSample:
    """Offline oracle: first pass computes the catalog, second pass draws
    the planned sample.  Scores match the streaming f(i)^2 exactly."""
    rel = Relation.from_records(schema, records)
    plan = offline_plan(rel, group_attrs, objective, budget)
    return draw_stratified(rel, plan, seed)


def offline_plan(
    rel: Relation,
    group_attrs: Sequence[str],
    objective: ObjectiveSpec,
    budget: int,
) -> AllocationPlan:
    """The offline allocation the streaming sampler converges to."""
    catalog = compute_catalog(rel, group_attrs, objective.columns)
    keys = list(catalog.entries)
    raw = np.zeros(len(keys))
    for i, key in enumerate(keys):
        st = catalog.entries[key]
        total = 0.0
        for col in objective.columns:
            s = st.per_column[col]
            if s.cv_defined:
                total += objective.weights.weight(0, key, col) * s.cv**2
        raw[i] = total
    costs = floor_zero_costs(raw)
    caps = np.array([catalog.entries[k].n for k in keys], dtype=np.int64)
    fractional, frozen = resolve_caps(costs, caps, budget)
    sizes, warnings = round_with_caps(fractional, caps, budget, costs=costs)
    return AllocationPlan(
        method=L2,
        group_attrs=tuple(group_attrs),
        keys=tuple(keys),
        populations=caps,
        fractional=fractional,
        sizes=sizes,
        budget=budget,
        capped=frozenset(k for k, fz in zip(keys, frozen) if fz),
        costs=costs,
        warnings=warnings,
    )
