"""Alternating dual training of a pair of convex potentials.

``g`` is updated on every minibatch and ``f`` every ``f_update_every`` steps.
With the source on the ``x`` side and targets on the ``y`` side, ``f'`` pushes
the source onto the targets and ``g'`` is its inverse; ``inference_potential``
picks which derivative answers quantile queries (``auto`` keeps whichever has
the lower validation calibration area).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from otcalib.data import CalibrationDataset
from otcalib.metrics import calibration_area
from otcalib.optim import AdamState, adam_step, clip_gradients
from otcalib.picnn import (PicnnConfig, PicnnPotential, init_potential, loss_gradients,
                           project_nonnegative)
from otcalib.quantile import DEFAULT_LEVELS, OtQuantileModel, build_source_table
from otcalib.rng import Xoshiro256, derive_seed

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "loss_f", "loss_g", "lr_f", "lr_g", "val_area", "best_area")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_f: float = 1e-3
    lr_g: float = 1e-3
    lr_decay_gamma: float = 0.5
    lr_decay_every: int = 1000
    f_update_every: int = 5
    batch_size: int = 256
    max_steps: int = 20000
    clip_max_norm: float = 1.0
    eval_every: int = 10
    patience: int = 175
    min_delta: float = 1e-4
    source_mode: str = "uniform"
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    inference_potential: str = "auto"
    eval_levels: tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        self.eval_levels = tuple(float(v) for v in self.eval_levels)
        self.validate()

    def validate(self) -> None:
        if self.lr_f <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.lr_decay_gamma <= 1.0:
            raise ValueError("lr_decay_gamma must be in (0, 1]")
        for name in ("lr_decay_every", "f_update_every", "batch_size", "eval_every", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.clip_max_norm <= 0:
            raise ValueError("clip_max_norm must be positive")
        if self.min_delta < 0:
            raise ValueError("min_delta must be nonnegative")
        if self.source_mode not in ("uniform", "score"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")
        if self.inference_potential not in ("f", "g", "auto"):
            raise ValueError("inference_potential must be f, g or auto")

    def lr_at(self, base: float, step: int) -> float:
        """Learning rate used on 1-based ``step`` after step decay."""
        return base * self.lr_decay_gamma ** ((step - 1) // self.lr_decay_every)

    def to_json(self) -> dict:
        d = asdict(self)
        d["eval_levels"] = list(self.eval_levels)
        return d


@dataclass
class TrainingData:
    hidden: np.ndarray
    targets: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.hidden.ndim != 2 or self.hidden.shape[0] != self.targets.shape[0]:
            raise ValueError("hidden must be (n, d) with one target per row")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @classmethod
    def from_dataset(cls, ds: CalibrationDataset) -> "TrainingData":
        return cls(ds.hidden, ds.p_emp, ds.scores)


@dataclass
class TrainResult:
    g: PicnnPotential
    f: PicnnPotential
    log: list[dict]
    inference_potential: str
    source_mode: str
    source_table: np.ndarray | None
    best_area: float
    best_step: int

    def model(self, which: str | None = None) -> OtQuantileModel:
        which = which or self.inference_potential
        return OtQuantileModel({"f": self.f, "g": self.g}[which], self.source_mode,
                               self.source_table, which)


def make_batch(data: TrainingData, config: TrainConfig, rng: Xoshiro256):
    """Draw ``batch_size`` rows with replacement; returns ``(x, y, hidden)``.

    ``y`` is the row's empirical success probability and ``x`` either a fresh
    U(0, 1) draw or the row's PRM score.
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty training split")
    idx = np.empty(config.batch_size, dtype=np.int64)
    x = np.empty(config.batch_size)
    uniform = config.source_mode == "uniform"
    for i in range(config.batch_size):
        j = rng.randbelow(n)
        idx[i] = j
        x[i] = rng.random() if uniform else data.scores[j]
    return x, data.targets[idx], data.hidden[idx]


def _update(pot, grads, state, lr, config):
    clip_gradients(grads, config.clip_max_norm)
    adam_step(pot.params, grads, state, lr, (config.adam_beta1, config.adam_beta2),
              config.adam_eps)
    project_nonnegative(pot)


def _evaluate(g, f, val: TrainingData, config: TrainConfig, table):
    names = ("g", "f") if config.inference_potential == "auto" else (config.inference_potential,)
    best_name, best = None, np.inf
    for name in names:
        model = OtQuantileModel({"g": g, "f": f}[name], config.source_mode, table, name)
        area = calibration_area(model, (val.hidden, val.targets), config.eval_levels)
        if area < best:
            best_name, best = name, area
    return best, best_name


def train(train_data: TrainingData, val_data: TrainingData, pconfig: PicnnConfig,
          tconfig: TrainConfig) -> TrainResult:
    """Run alternating dual training with early stopping on calibration area.

    The returned potentials are the checkpoint with the lowest validation
    area. Patience only resets on improvements larger than ``min_delta``.
    """
    tconfig.validate()
    if len(val_data) == 0:
        raise TrainingError("empty validation split")
    if len(train_data) == 0:
        raise TrainingError("empty training split")
    g = init_potential(pconfig, derive_seed(tconfig.seed, "g"))
    f = init_potential(pconfig, derive_seed(tconfig.seed, "f"))
    rng = Xoshiro256(derive_seed(tconfig.seed, "batches"))
    table = build_source_table(train_data.scores) if tconfig.source_mode == "score" else None
    state_g, state_f = AdamState(), AdamState()

    rows: list[dict] = []
    best_area, best_step = np.inf, 0
    best_pair = (g.copy(), f.copy())
    best_name = "g" if tconfig.inference_potential == "auto" else tconfig.inference_potential
    patience_ref = np.inf
    evals_since_improve = 0
    loss_f = loss_g = float("nan")

    for step in range(1, tconfig.max_steps + 1):
        lr_g = tconfig.lr_at(tconfig.lr_g, step)
        lr_f = tconfig.lr_at(tconfig.lr_f, step)
        x, y, h = make_batch(train_data, tconfig, rng)
        try:
            loss_g, grads = loss_gradients(g, f, x, y, h, "loss_g")
            _update(g, grads, state_g, lr_g, tconfig)
            if step % tconfig.f_update_every == 0:
                loss_f, grads = loss_gradients(g, f, x, y, h, "loss_f")
                _update(f, grads, state_f, lr_f, tconfig)
        except (ArithmeticError, FloatingPointError) as exc:
            raise TrainingError(f"step {step}: {exc}") from exc

        if step % tconfig.eval_every == 0 or step == tconfig.max_steps:
            area, name = _evaluate(g, f, val_data, tconfig, table)
            if area < best_area:
                best_area, best_step, best_name = area, step, name
                best_pair = (g.copy(), f.copy())
            if area < patience_ref - tconfig.min_delta:
                patience_ref = area
                evals_since_improve = 0
            else:
                evals_since_improve += 1
            rows.append({"step": step, "loss_f": loss_f, "loss_g": loss_g, "lr_f": lr_f,
                         "lr_g": lr_g, "val_area": area, "best_area": best_area})
            log.debug("step %d area %.5f best %.5f (%s)", step, area, best_area, best_name)
            if evals_since_improve >= tconfig.patience:
                log.info("early stop at step %d, best area %.5f at step %d",
                         step, best_area, best_step)
                break

    g_best, f_best = best_pair
    return TrainResult(g_best, f_best, rows, best_name, tconfig.source_mode, table,
                       float(best_area), best_step)


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in LOG_COLUMNS) + "\n")
