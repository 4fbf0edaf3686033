"""gbsample: stratified sampling for approximate group-by query processing.

Build per-stratum statistics in one pass, allocate a sample budget so that
a norm of the per-group coefficients of variation is minimized, draw the
sample, answer group-by queries from it, and score the answers against
exact results.  A streaming sampler maintains the same kind of sample over
an append-only stream within a fixed memory budget.
"""

__version__ = "0.1.0"
