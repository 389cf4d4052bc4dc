"""Synthetic calibration data with closed-form conditional quantiles.

A fixed unit direction ``w`` turns a context ``h`` into a latent difficulty
``a = sigmoid(w . h / sqrt(d))``, and the success probability ``p`` is drawn
from a family whose quantile function is known:

* ``uniform_band``: ``p ~ U(0.6a, 0.6a + 0.4)``
* ``logit_normal``: ``p = sigmoid(2a - 1 + 0.8 z)``, ``z ~ N(0, 1)``

Scores are made optimistic by shifting ``logit(p)`` by ``prm_bias`` plus
Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from otcalib.data import CalibrationDataset, CalibrationSample, CandidatePool
from otcalib.quantile import QuantileModelMixin
from otcalib.rng import Xoshiro256, derive_seed
from otcalib.special import logit, norm_ppf, sigmoid

FAMILIES = ("uniform_band", "logit_normal")
BAND_SLOPE = 0.6
BAND_WIDTH = 0.4
LOGIT_SCALE = 0.8
SCORE_CLAMP = 1e-6


@dataclass
class SyntheticConfig:
    family: str = "uniform_band"
    hidden_dim: int = 16
    n_questions: int = 100
    prefixes_per_question: int = 4
    n_rollouts: int = 8
    prm_bias: float = 1.5
    prm_noise_sd: float = 0.5
    ranking_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if min(self.hidden_dim, self.n_questions, self.prefixes_per_question,
               self.n_rollouts) < 1:
            raise ValueError("hidden_dim, n_questions, prefixes and n_rollouts must be >= 1")
        if self.prm_noise_sd < 0:
            raise ValueError("prm_noise_sd must be nonnegative")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticOracle(QuantileModelMixin):
    """True conditional quantile function of a synthetic family."""

    family: str
    direction: np.ndarray

    def latent(self, hidden) -> np.ndarray:
        h = np.asarray(hidden, dtype=np.float64)
        h = h[None, :] if h.ndim == 1 else h
        return sigmoid(h @ self.direction / math.sqrt(self.direction.shape[0]))

    def quantiles(self, levels, hidden) -> np.ndarray:
        levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
        a = self.latent(hidden)
        if self.family == "uniform_band":
            return BAND_SLOPE * a[:, None] + BAND_WIDTH * levels[None, :]
        z = np.array([norm_ppf(b) for b in levels])
        with np.errstate(over="ignore"):
            return sigmoid((2.0 * a - 1.0)[:, None] + LOGIT_SCALE * z[None, :])

    def sample_p(self, a: float, rng: Xoshiro256) -> float:
        if self.family == "uniform_band":
            return BAND_SLOPE * a + BAND_WIDTH * rng.random()
        return sigmoid(2.0 * a - 1.0 + LOGIT_SCALE * rng.normal())

    def to_json(self) -> dict:
        return {"family": self.family, "direction": self.direction.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticOracle":
        return cls(obj["family"], np.asarray(obj["direction"], dtype=np.float64))


def oracle_quantile(oracle: SyntheticOracle, beta: float, h) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    return oracle.quantile(beta, h)


def make_oracle(config: SyntheticConfig) -> SyntheticOracle:
    rng = Xoshiro256(derive_seed(config.seed, "direction"))
    w = rng.normal_array(config.hidden_dim)
    return SyntheticOracle(config.family, w / np.linalg.norm(w))


def prm_score(p: float, shift: float) -> float:
    """Uncalibrated score: ``p`` moved by ``shift`` in logit space."""
    if shift == 0.0:
        return p
    q = min(max(p, SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return sigmoid(logit(q) + shift)


def generate_dataset(config: SyntheticConfig):
    """Return ``(dataset, oracle)``; every question draws from its own stream."""
    oracle = make_oracle(config)
    d = config.hidden_dim
    samples = []
    for qi in range(config.n_questions):
        rng = Xoshiro256(derive_seed(config.seed, "question", qi))
        qid = f"q{qi:05d}"
        for prefix in range(config.prefixes_per_question):
            h = rng.normal_array(d)
            p = oracle.sample_p(float(oracle.latent(h)[0]), rng)
            shift = config.prm_bias + config.prm_noise_sd * rng.normal()
            k = sum(rng.random() < p for _ in range(config.n_rollouts))
            samples.append(CalibrationSample.from_counts(
                qid, prefix, prm_score(p, shift), h, config.n_rollouts, k))
    name = f"synthetic-{config.family}-s{config.seed}"
    return CalibrationDataset(samples, d, name), oracle


def make_pool(question_id: str, hidden, p_true: float, n_candidates: int, alpha: float,
              rng: Xoshiro256) -> CandidatePool:
    """Candidates correct with probability ``p_true``; ``alpha`` sets how well
    scores separate correct from incorrect ones."""
    correct = np.zeros(n_candidates, dtype=bool)
    scores = np.zeros(n_candidates)
    for i in range(n_candidates):
        c = rng.random() < p_true
        correct[i] = c
        scores[i] = sigmoid(alpha * (2.0 * c - 1.0) + rng.normal())
    return CandidatePool(question_id, np.asarray(hidden, dtype=np.float64),
                         float(np.mean(scores)), scores, correct)


def generate_pools(config: SyntheticConfig, n_candidates: int = 64,
                   oracle: SyntheticOracle | None = None) -> list[CandidatePool]:
    oracle = oracle or make_oracle(config)
    pools = []
    for qi in range(config.n_questions):
        rng = Xoshiro256(derive_seed(config.seed, "pool", qi))
        h = rng.normal_array(config.hidden_dim)
        p_true = oracle.sample_p(float(oracle.latent(h)[0]), rng)
        pools.append(make_pool(f"t{qi:05d}", h, p_true, n_candidates,
                               config.ranking_strength, rng))
    return pools
