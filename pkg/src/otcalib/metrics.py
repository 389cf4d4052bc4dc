"""Calibration metrics: Brier, PosBrier, ECE, WQL and calibration area.

Targets are fractional empirical success probabilities, not binary labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from otcalib.quantile import DEFAULT_LEVELS, expected_probabilities, median_estimates

CSV_HEADER = "variant,n,brier,pos_brier,ece,wql,calibration_area"


def _pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions, {t.shape[0]} targets")
    if p.shape[0] == 0:
        raise ValueError("empty input")
    return p, t


def brier(preds, targets) -> float:
    p, t = _pair(preds, targets)
    return float(np.mean((p - t) ** 2))


def pos_brier(preds, targets, threshold: float = 0.0) -> float:
    """Brier score over samples whose target exceeds ``threshold``.

    Returns 0.0 when no sample qualifies; see :func:`has_positives`.
    """
    p, t = _pair(preds, targets)
    mask = t > threshold
    if not mask.any():
        return 0.0
    return float(np.mean((p[mask] - t[mask]) ** 2))


def has_positives(targets, threshold: float = 0.0) -> bool:
    return bool(np.any(np.asarray(targets) > threshold))


@dataclass(frozen=True)
class EceConfig:
    num_bins: int = 12
    lo: float = -0.0005
    hi: float = 1.0005

    def __post_init__(self):
        if self.num_bins < 1 or not (self.lo < 0.0 <= 1.0 < self.hi):
            raise ValueError("EceConfig needs num_bins >= 1 and lo < 0 <= 1 < hi")


def ece_bins(preds, config: EceConfig = EceConfig()) -> np.ndarray:
    """Bin index per prediction; bins are half-open except the last."""
    p = np.asarray(preds, dtype=np.float64)
    edges = np.linspace(config.lo, config.hi, config.num_bins + 1)
    idx = np.searchsorted(edges, p, side="right") - 1
    return np.clip(idx, 0, config.num_bins - 1)


def ece(preds, targets, config: EceConfig = EceConfig()) -> float:
    p, t = _pair(preds, targets)
    idx = ece_bins(p, config)
    total = 0.0
    n = p.shape[0]
    for j in range(config.num_bins):
        mask = idx == j
        cnt = int(mask.sum())
        if cnt:
            total += cnt / n * abs(float(p[mask].mean()) - float(t[mask].mean()))
    return total


def pinball(tau: float, y, q):
    """``tau * (y - q)`` when ``y >= q`` else ``(1 - tau) * (q - y)``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    out = np.where(y >= q, tau * (y - q), (1.0 - tau) * (q - y))
    return float(out) if out.ndim == 0 else out


def _hidden_targets(samples):
    if isinstance(samples, tuple):
        hidden, targets = samples
        return np.asarray(hidden, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    return samples.hidden, samples.p_emp


def wql(model, samples, levels=DEFAULT_LEVELS) -> float:
    """Pinball loss averaged over samples, then equally over levels.

    ``samples`` is a dataset or a ``(hidden, targets)`` tuple.
    """
    hidden, targets = _hidden_targets(samples)
    if targets.shape[0] == 0:
        raise ValueError("empty samples")
    lv = np.asarray(levels, dtype=np.float64)
    q = model.quantiles(lv, hidden)
    per_level = [float(np.mean(pinball(tau, targets, q[:, m]))) for m, tau in enumerate(lv)]
    return float(np.mean(per_level))


def calibration_curve(model, samples, levels=DEFAULT_LEVELS) -> np.ndarray:
    """Empirical coverage ``P(p_emp <= Q(beta|h))`` per level."""
    hidden, targets = _hidden_targets(samples)
    if targets.shape[0] == 0:
        raise ValueError("empty samples")
    q = model.quantiles(np.asarray(levels, dtype=np.float64), hidden)
    return np.mean(targets[:, None] <= q, axis=0)


def calibration_area(model, samples, levels=DEFAULT_LEVELS) -> float:
    cov = calibration_curve(model, samples, levels)
    return float(np.mean(np.abs(cov - np.asarray(levels, dtype=np.float64))))


@dataclass(frozen=True)
class PointMassModel:
    """Degenerate predictive distribution at a fixed score per row.

    Lets the raw PRM score take part in the calibration-area computation.
    """

    scores: np.ndarray

    def quantiles(self, levels, hidden) -> np.ndarray:
        return np.repeat(np.clip(self.scores, 0, 1)[:, None], len(np.atleast_1d(levels)), axis=1)


@dataclass(frozen=True)
class MetricsReport:
    variant: str
    n_samples: int
    brier: float
    pos_brier: float
    ece: float
    wql: float | None
    calibration_area: float
    no_positives: bool = False

    def csv_row(self) -> str:
        wql_text = "" if self.wql is None else repr(self.wql)
        return ",".join([self.variant, str(self.n_samples), repr(self.brier),
                         repr(self.pos_brier), repr(self.ece), wql_text,
                         repr(self.calibration_area)])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n" + self.csv_row() + "\n")


def point_predictions(variant: str, samples, model=None, grid=DEFAULT_LEVELS) -> np.ndarray:
    if variant == "base":
        return samples.scores
    if model is None:
        raise ValueError(f"variant {variant!r} needs a model")
    if variant == "ot":
        return expected_probabilities(model, samples.hidden, grid)
    if variant == "qr":
        return median_estimates(model, samples.hidden)
    raise ValueError(f"unknown variant {variant!r}")


def evaluate_variant(variant: str, samples, model=None, ece_config: EceConfig = EceConfig(),
                     levels=DEFAULT_LEVELS, pos_threshold: float = 0.0) -> MetricsReport:
    """Assemble every metric for one score variant.

    ``base`` scores the raw PRM scores and carries no WQL; its calibration
    area treats each score as a point-mass prediction.
    """
    preds = point_predictions(variant, samples, model, levels)
    targets = samples.p_emp
    if variant == "base":
        w = None
        area = calibration_area(PointMassModel(samples.scores), samples, levels)
    else:
        w = wql(model, samples, levels)
        area = calibration_area(model, samples, levels)
    for name, value in (("wql", w), ("area", area)):
        if value is not None and not math.isfinite(value):
            raise FloatingPointError(f"non-finite {name}")
    return MetricsReport(
        variant=variant,
        n_samples=len(targets),
        brier=brier(preds, targets),
        pos_brier=pos_brier(preds, targets, pos_threshold),
        ece=ece(preds, targets, ece_config),
        wql=w,
        calibration_area=area,
        no_positives=not has_positives(targets, pos_threshold),
    )
