"""Monte Carlo Best-of-N with instance-adaptive budgets over candidate pools.

Each (question, trial) pair owns a PRNG stream derived from the run seed, the
question id and the trial index, so every control level replays the same draw
order (common random numbers) and results do not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from otcalib.data import CandidatePool
from otcalib.ias import (AllocationRequest, allocate_base, n_ias_closed_form,
                         posterior_allocation)
from otcalib.quantile import DEFAULT_LEVELS
from otcalib.rng import Xoshiro256, derive_seed

SWEEP_HEADER = "variant,control_kind,control,mean_accuracy,mean_norm_budget,n_questions,n_trials,seed"
DEFAULT_C_LEVELS = (0.5, 0.683, 0.799, 0.872, 0.919, 0.949, 0.968, 0.98, 0.9874, 0.999)


@dataclass
class SimConfig:
    n_trials: int = 100
    n_max: int = 64
    c_levels: tuple[float, ...] = DEFAULT_C_LEVELS
    beta_levels: tuple[float, ...] = DEFAULT_LEVELS
    fixed_C_for_beta_sweep: float = 0.9
    quantile_grid: tuple[float, ...] = DEFAULT_LEVELS
    seed: int = 0
    variant: str = "ot"

    def __post_init__(self):
        if self.n_trials < 1 or self.n_max < 1:
            raise ValueError("n_trials and n_max must be >= 1")
        if any(not 0.0 < c < 1.0 for c in (*self.c_levels, self.fixed_C_for_beta_sweep)):
            raise ValueError("confidence levels must lie in (0, 1)")
        if self.variant not in ("base", "ot", "qr"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class SweepPoint:
    control_kind: str
    control: float
    mean_accuracy: float
    mean_normalized_budget: float
    n_summary: dict = field(default_factory=dict)

    def csv_row(self, variant: str, n_questions: int, n_trials: int, seed: int) -> str:
        return ",".join([variant, self.control_kind, repr(self.control),
                         repr(self.mean_accuracy), repr(self.mean_normalized_budget),
                         str(n_questions), str(n_trials), str(seed)])


def trial_rng(seed: int, question_id: str, trial: int) -> Xoshiro256:
    return Xoshiro256(derive_seed(seed, question_id, trial))


def prefix_outcomes(pool: CandidatePool, n_draws: int, rng: Xoshiro256) -> np.ndarray:
    """Correctness of the Best-of-n pick for every n in ``1..n_draws``.

    Candidates are drawn without replacement by a partial Fisher-Yates
    shuffle; the kept candidate is the highest score so far, with ties going
    to the earliest draw. Entry ``n - 1`` is the outcome for budget ``n``.
    Budgets beyond the pool size reuse the full-pool outcome.
    """
    size = len(pool)
    if size == 0:
        raise ValueError("empty pool")
    m = min(n_draws, size)
    order = list(range(size))
    out = np.empty(n_draws, dtype=bool)
    best_score = -np.inf
    best_correct = False
    for i in range(m):
        j = i + rng.randbelow(size - i)
        order[i], order[j] = order[j], order[i]
        c = order[i]
        if pool.scores[c] > best_score:
            best_score = pool.scores[c]
            best_correct = bool(pool.correct[c])
        out[i] = best_correct
    out[m:] = best_correct
    return out


def run_trial(pool: CandidatePool, n: int, rng: Xoshiro256) -> bool:
    """Best-of-``n`` outcome: draw ``min(n, |pool|)`` candidates, keep the top score."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return bool(prefix_outcomes(pool, n, rng)[n - 1])


def outcome_table(pools: list[CandidatePool], n_max: int, n_trials: int, seed: int) -> np.ndarray:
    """Boolean array ``(questions, trials, n_max)`` of Best-of-n outcomes."""
    table = np.empty((len(pools), n_trials, n_max), dtype=bool)
    for qi, pool in enumerate(pools):
        for t in range(n_trials):
            table[qi, t] = prefix_outcomes(pool, n_max, trial_rng(seed, pool.question_id, t))
    return table


def evaluate_allocation(table: np.ndarray, budgets, n_max: int) -> tuple[float, float]:
    """Mean accuracy over (questions x trials) and mean ``N_i / n_max``."""
    budgets = np.asarray(budgets, dtype=np.int64)
    if np.any(budgets < 1) or np.any(budgets > n_max):
        raise ValueError("budgets must lie in [1, n_max]")
    picked = table[np.arange(table.shape[0]), :, budgets - 1]
    return float(picked.mean()), float(budgets.mean() / n_max)


def _summary(budgets) -> dict:
    b = np.asarray(budgets)
    return {"min": int(b.min()), "median": float(np.median(b)), "max": int(b.max()),
            "mean": float(b.mean())}


def _quantile_table(model, pools, levels) -> np.ndarray:
    hidden = np.stack([p.question_hidden for p in pools])
    return model.quantiles(levels, hidden)


def c_sweep_budgets(pools, model, config: SimConfig) -> dict[float, list[int]]:
    budgets = {}
    if config.variant == "base":
        for c in config.c_levels:
            req = AllocationRequest(c, config.n_max)
            budgets[c] = [allocate_base(p.question_score, req).n for p in pools]
        return budgets
    if model is None:
        raise ValueError(f"variant {config.variant!r} needs a quantile model")
    grid = getattr(model, "levels", None) if config.variant == "qr" else None
    grid = tuple(grid) if grid is not None else config.quantile_grid
    p_hat = _quantile_table(model, pools, grid)
    for c in config.c_levels:
        budgets[c] = [posterior_allocation(row, c, config.n_max).n for row in p_hat]
    return budgets


def beta_sweep_budgets(pools, model, config: SimConfig) -> dict[float, list[int]]:
    if model is None:
        raise ValueError("the beta sweep needs a quantile model")
    p_hat = _quantile_table(model, pools, config.beta_levels)
    c = config.fixed_C_for_beta_sweep
    return {beta: [n_ias_closed_form(float(p), c, config.n_max).n for p in p_hat[:, m]]
            for m, beta in enumerate(config.beta_levels)}


def _run(pools, budgets_by_control, kind, config) -> list[SweepPoint]:
    table = outcome_table(pools, config.n_max, config.n_trials, config.seed)
    points = []
    for control, budgets in budgets_by_control.items():
        acc, norm = evaluate_allocation(table, budgets, config.n_max)
        points.append(SweepPoint(kind, float(control), acc, norm, _summary(budgets)))
    return points


def sweep_C(pools, model, config: SimConfig) -> list[SweepPoint]:
    """Accuracy and budget at every confidence level in ``config.c_levels``."""
    return _run(pools, c_sweep_budgets(pools, model, config), "c", config)


def sweep_beta(pools, model, config: SimConfig) -> list[SweepPoint]:
    """Accuracy and budget when allocating from a single quantile level at fixed C."""
    return _run(pools, beta_sweep_budgets(pools, model, config), "beta", config)


def fixed_budget_accuracy(pools, n: int, config: SimConfig) -> float:
    table = outcome_table(pools, config.n_max, config.n_trials, config.seed)
    return evaluate_allocation(table, [n] * len(pools), config.n_max)[0]


def write_sweep(points: list[SweepPoint], variant: str, n_questions: int, config: SimConfig,
                path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for pt in points:
            fh.write(pt.csv_row(variant, n_questions, config.n_trials, config.seed) + "\n")
