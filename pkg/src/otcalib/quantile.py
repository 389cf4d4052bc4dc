"""Conditional quantile models ``Q(beta | h)``.

Every model exposes ``quantiles(levels, hidden) -> (n, m)`` plus the scalar
``quantile(beta, h)``. Outputs are clamped to [0, 1] at query time only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from otcalib.optim import AdamState, adam_step, clip_gradients
from otcalib.rng import Xoshiro256

DEFAULT_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))
LEVEL_MATCH_TOL = 1e-9


class UnsupportedLevelError(ValueError):
    """A fixed-grid model was queried off its trained grid."""


def _check_levels(levels) -> np.ndarray:
    levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.any(levels < 0.0) or np.any(levels > 1.0) or np.any(np.isnan(levels)):
        raise ValueError("quantile levels must lie in [0, 1]")
    return levels


def _as_matrix(hidden) -> np.ndarray:
    h = np.asarray(hidden, dtype=np.float64)
    return h[None, :] if h.ndim == 1 else h


class QuantileModelMixin:
    def quantile(self, beta: float, h) -> float:
        return float(self.quantiles([beta], _as_matrix(h))[0, 0])


@dataclass
class OtQuantileModel(QuantileModelMixin):
    """Quantiles read off the derivative of a convex potential.

    In ``uniform`` mode the source is U(0, 1) so ``Q(beta|h) = F'(beta, h)``.
    In ``score`` mode ``beta`` is first mapped through the empirical source
    score quantiles in ``source_quantile_table`` (evenly spaced knots).
    """

    potential: object
    source_mode: str = "uniform"
    source_quantile_table: np.ndarray | None = None
    inference_potential: str = "f"

    def __post_init__(self):
        if self.source_mode not in ("uniform", "score"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")
        if self.source_mode == "score" and self.source_quantile_table is None:
            raise ValueError("score mode needs a source_quantile_table")

    def source_points(self, levels: np.ndarray) -> np.ndarray:
        if self.source_mode == "uniform":
            return levels
        table = np.asarray(self.source_quantile_table)
        knots = np.linspace(0.0, 1.0, len(table))
        return np.interp(levels, knots, table)

    def raw_quantiles(self, levels, hidden) -> np.ndarray:
        levels = _check_levels(levels)
        h = _as_matrix(hidden)
        n, m = h.shape[0], levels.shape[0]
        ys = np.tile(self.source_points(levels), n)
        hh = np.repeat(h, m, axis=0)
        return np.asarray(self.potential.dy(ys, hh)).reshape(n, m)

    def quantiles(self, levels, hidden) -> np.ndarray:
        return np.clip(self.raw_quantiles(levels, hidden), 0.0, 1.0)


def build_source_table(scores, knots: int = 101) -> np.ndarray:
    """Empirical score quantiles at ``knots`` evenly spaced levels."""
    return np.quantile(np.asarray(scores, dtype=np.float64), np.linspace(0.0, 1.0, knots))


@dataclass
class QrModel(QuantileModelMixin):
    """Independent linear quantile heads, one per fixed level."""

    weights: np.ndarray
    biases: np.ndarray
    levels: tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 1 or np.any(np.diff(lv) <= 0) or lv[0] < 0 or lv[-1] > 1:
            raise ValueError("levels must be strictly increasing within [0, 1]")
        self.levels = tuple(float(v) for v in lv)
        if self.weights.shape[0] != len(self.levels) or self.biases.shape != (len(self.levels),):
            raise ValueError("weights/biases do not match the number of levels")

    def level_index(self, beta: float) -> int:
        diffs = np.abs(np.asarray(self.levels) - beta)
        i = int(np.argmin(diffs))
        if diffs[i] > LEVEL_MATCH_TOL:
            raise UnsupportedLevelError(
                f"unsupported level {beta}: model only has {list(self.levels)}")
        return i

    def supports(self, beta: float) -> bool:
        try:
            self.level_index(beta)
        except UnsupportedLevelError:
            return False
        return True

    def raw_quantiles(self, levels, hidden) -> np.ndarray:
        levels = _check_levels(levels)
        idx = [self.level_index(b) for b in levels]
        h = _as_matrix(hidden)
        return h @ self.weights[idx].T + self.biases[idx]

    def quantiles(self, levels, hidden) -> np.ndarray:
        return np.clip(self.raw_quantiles(levels, hidden), 0.0, 1.0)


def qr_quantile(model: QrModel, beta: float, h) -> float:
    return model.quantile(beta, h)


def ot_quantile(model: OtQuantileModel, beta: float, h) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    return model.quantile(beta, h)


def qr_train(hidden, targets, levels=DEFAULT_LEVELS, lr: float = 1e-2, steps: int = 2000,
             batch_size: int = 256, seed: int = 0, clip_max_norm: float = 1.0) -> QrModel:
    """Fit linear quantile heads with the pinball loss.

    Heads start at zero and are optimised jointly with Adam on minibatches
    drawn with replacement. Nothing forces the heads to be ordered.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if hidden.shape[0] == 0:
        raise ValueError("empty training split")
    lv = np.asarray(levels, dtype=np.float64)
    m, d = lv.shape[0], hidden.shape[1]
    params = {"weights": np.zeros((m, d)), "biases": np.zeros(m)}
    state = AdamState()
    rng = Xoshiro256(seed)
    n = hidden.shape[0]
    for step in range(steps):
        idx = np.array([rng.randbelow(n) for _ in range(batch_size)])
        h, y = hidden[idx], targets[idx]
        q = h @ params["weights"].T + params["biases"]
        resid = y[:, None] - q
        loss = np.mean(np.where(resid >= 0, lv * resid, (lv - 1.0) * resid))
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite pinball loss at step {step}")
        dq = np.where(resid >= 0, -lv, 1.0 - lv) / (batch_size * m)
        grads = {"weights": dq.T @ h, "biases": dq.sum(0)}
        clip_gradients(grads, clip_max_norm)
        adam_step(params, grads, state, lr)
    return QrModel(params["weights"], params["biases"], tuple(float(v) for v in lv))


def expected_probabilities(model, hidden, grid=DEFAULT_LEVELS) -> np.ndarray:
    """Trapezoid estimate of ``int_0^1 Q(tau|h) dtau`` per context row."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape[0] < 2:
        raise ValueError("grid needs at least 2 levels")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    q = model.quantiles(grid, _as_matrix(hidden))
    return ((q[:, :-1] + q[:, 1:]) * 0.5 * np.diff(grid)).sum(axis=1)


def expected_probability(model, h, grid=DEFAULT_LEVELS) -> float:
    return float(expected_probabilities(model, _as_matrix(h), grid)[0])


def median_estimate(model: QrModel, h) -> float:
    if not model.supports(0.5):
        raise UnsupportedLevelError("model has no 0.5 level")
    return model.quantile(0.5, h)


def median_estimates(model: QrModel, hidden) -> np.ndarray:
    if not model.supports(0.5):
        raise UnsupportedLevelError("model has no 0.5 level")
    return model.quantiles([0.5], _as_matrix(hidden))[:, 0]


@dataclass
class ConstantQuantileModel(QuantileModelMixin):
    """Predicts the same value at every level and context."""

    value: float

    def quantiles(self, levels, hidden) -> np.ndarray:
        levels = _check_levels(levels)
        return np.full((_as_matrix(hidden).shape[0], levels.shape[0]),
                       float(np.clip(self.value, 0.0, 1.0)))
