"""Comparison allocators: proportional, equal-split and their max-hybrid.

All three share the :class:`~gbsample.alloc.AllocationPlan` contract, so
the sampler and the evaluation pipeline treat them interchangeably with
the CV-driven allocators.  None of them looks at variances, which is
exactly the weakness the CV-driven allocators address: two groups with
equal sizes and means but very different spreads receive identical
budgets here.
"""

from __future__ import annotations

import numpy as np

from .alloc import AllocationPlan, round_with_caps
from .stats import StatsCatalog

UNIFORM = "uniform"
SENATE = "senate"
CONGRESS = "congress"


def _plan(method, catalog, keys, caps, fractional, budget, warnings):
    sizes, round_warnings = round_with_caps(
        fractional, caps, budget, ensure_min_one=False
    )
    return AllocationPlan(
        method=method,
        group_attrs=catalog.group_attrs,
        keys=tuple(keys),
        populations=caps,
        fractional=fractional,
        sizes=sizes,
        budget=budget,
        capped=frozenset(
            k for k, f, c in zip(keys, fractional, caps) if f >= c
        ),
        costs=None,
        warnings=warnings + round_warnings,
    )


def alloc_uniform(catalog: StatsCatalog, budget: int) -> AllocationPlan:
    """Proportional-to-size allocation (what a plain uniform row sample
    yields in expectation).  Small groups may round to zero rows."""
    keys = list(catalog.entries)
    caps = np.array([catalog.entries[k].n for k in keys], dtype=np.int64)
    total = caps.sum()
    fractional = budget * caps / total
    fractional = np.minimum(fractional, caps)
    return _plan(UNIFORM, catalog, keys, caps, fractional, budget, [])


def senate_shares(caps: np.ndarray, budget: int) -> np.ndarray:
    """Equal split with cap overflow redistributed equally among the rest."""
    caps = np.asarray(caps, dtype=np.int64)
    r = caps.size
    shares = np.zeros(r, dtype=np.float64)
    active = np.ones(r, dtype=bool)
    remaining = float(min(budget, int(caps.sum())))
    while True:
        count = int(active.sum())
        if count == 0:
            break
        each = remaining / count
        over = active & (caps < each)
        if not over.any():
            shares[active] = each
            break
        shares[over] = caps[over]
        remaining -= float(caps[over].sum())
        active &= ~over
    return shares


def alloc_senate(catalog: StatsCatalog, budget: int) -> AllocationPlan:
    """Equal budget per stratum regardless of size or spread."""
    keys = list(catalog.entries)
    caps = np.array([catalog.entries[k].n for k in keys], dtype=np.int64)
    fractional = senate_shares(caps, budget)
    return _plan(SENATE, catalog, keys, caps, fractional, budget, [])


def alloc_congress(catalog: StatsCatalog, budget: int) -> AllocationPlan:
    """Hybrid of the proportional and equal-split allocations.

    Each stratum's raw share is the larger of its proportional share and
    its (cap-respecting) equal share; raw shares are rescaled to the
    budget and clipped at the populations with proportional
    redistribution.
    """
    keys = list(catalog.entries)
    caps = np.array([catalog.entries[k].n for k in keys], dtype=np.int64)
    total = caps.sum()
    house = budget * caps / total
    senate = senate_shares(caps, budget)
    raw = np.maximum(house, senate)
    fractional = raw * (min(budget, int(total)) / raw.sum())
    return _plan(CONGRESS, catalog, keys, caps, fractional, budget, [])
