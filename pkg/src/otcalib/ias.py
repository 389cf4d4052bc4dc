"""Per-question sample budgets for instance-adaptive Best-of-N.

All rules return the smallest ``n`` in ``[1, n_max]`` meeting a target
probability ``C`` of at least one success, or ``n_max`` flagged as saturated
when no such ``n`` exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from otcalib.quantile import DEFAULT_LEVELS

P_ONE = 1.0 - 1e-12
P_ZERO = 1e-12
CEIL_NUDGE = 1e-9


@dataclass(frozen=True)
class AllocationRequest:
    confidence: float
    n_max: int = 64
    quantile_grid: tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if len(self.quantile_grid) < 1:
            raise ValueError("quantile_grid must be non-empty")


@dataclass(frozen=True)
class AllocationResult:
    n: int
    saturated: bool = False


def _boundary(p: float, n_max: int) -> AllocationResult | None:
    if p >= P_ONE:
        return AllocationResult(1, False)
    if p <= P_ZERO:
        return AllocationResult(n_max, True)
    return None


def n_star(p: float, confidence: float, n_max: int = 64) -> AllocationResult:
    """Direct search for the minimal ``n`` with ``1 - (1 - p)^n >= C``."""
    hit = _boundary(p, n_max)
    if hit is not None:
        return hit
    for n in range(1, n_max + 1):
        if 1.0 - (1.0 - p) ** n >= confidence:
            return AllocationResult(n, False)
    return AllocationResult(n_max, True)


def n_ias_closed_form(p: float, confidence: float, n_max: int = 64) -> AllocationResult:
    """``min(ceil(log(1 - C) / log(1 - p)), n_max)``, floored at 1."""
    hit = _boundary(p, n_max)
    if hit is not None:
        return hit
    n = math.ceil(math.log1p(-confidence) / math.log1p(-p) - CEIL_NUDGE)
    n = max(n, 1)
    if n > n_max:
        return AllocationResult(n_max, True)
    return AllocationResult(n, False)


def allocate_base(score: float, request: AllocationRequest) -> AllocationResult:
    """Treat the raw PRM score as the per-trial success probability."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must be in [0, 1], got {score}")
    return n_star(score, request.confidence, request.n_max)


def posterior_allocation(p_hat, confidence: float, n_max: int) -> AllocationResult:
    """Minimal ``n`` whose success probability averaged over ``p_hat`` reaches C."""
    p_hat = np.clip(np.asarray(p_hat, dtype=np.float64), 0.0, 1.0)
    miss = 1.0 - p_hat
    for n in range(1, n_max + 1):
        if float(np.mean(1.0 - miss ** n)) >= confidence:
            return AllocationResult(n, False)
    return AllocationResult(n_max, True)


def allocate_posterior(model, h, request: AllocationRequest) -> AllocationResult:
    p_hat = model.quantiles(request.quantile_grid, np.asarray(h, dtype=np.float64)[None, :])[0]
    return posterior_allocation(p_hat, request.confidence, request.n_max)


def allocate_beta_point(model, h, beta: float, request: AllocationRequest) -> AllocationResult:
    p = model.quantile(beta, h)
    return n_ias_closed_form(p, request.confidence, request.n_max)
