"""Calibration records, candidate pools, and grouped train/test splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from otcalib.rng import Xoshiro256


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class CalibrationSample:
    question_id: str
    prefix_index: int
    score: float
    hidden: np.ndarray
    n_rollouts: int
    n_correct: int
    p_emp: float

    @classmethod
    def from_counts(cls, question_id, prefix_index, score, hidden, n_rollouts, n_correct):
        return cls(question_id, int(prefix_index), float(score),
                   np.asarray(hidden, dtype=np.float64), int(n_rollouts), int(n_correct),
                   n_correct / n_rollouts)

    def validate(self, hidden_dim: int | None = None) -> None:
        if not isinstance(self.question_id, str) or not self.question_id:
            raise DataError("question_id must be a non-empty string")
        if self.prefix_index < 0:
            raise DataError("prefix_index must be nonnegative")
        if self.n_rollouts < 1:
            raise DataError("n_rollouts must be positive")
        if not 0 <= self.n_correct <= self.n_rollouts:
            raise DataError(
                f"n_correct={self.n_correct} outside [0, n_rollouts={self.n_rollouts}]")
        if self.p_emp != self.n_correct / self.n_rollouts:
            raise DataError(f"p_emp={self.p_emp} disagrees with "
                            f"{self.n_correct}/{self.n_rollouts}")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise DataError(f"score {self.score} outside [0, 1]")
        if self.hidden.ndim != 1:
            raise DataError("hidden must be a vector")
        if hidden_dim is not None and self.hidden.shape[0] != hidden_dim:
            raise DataError(
                f"hidden dimension {self.hidden.shape[0]} != dataset dimension {hidden_dim}")
        if not np.all(np.isfinite(self.hidden)):
            raise DataError("hidden contains non-finite values")


@dataclass
class CalibrationDataset:
    samples: list[CalibrationSample]
    hidden_dim: int
    name: str = "dataset"
    _arrays: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise DataError("empty dataset")
        for s in self.samples:
            s.validate(self.hidden_dim)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def hidden(self) -> np.ndarray:
        if "hidden" not in self._arrays:
            self._arrays["hidden"] = np.stack([s.hidden for s in self.samples])
        return self._arrays["hidden"]

    @property
    def p_emp(self) -> np.ndarray:
        if "p_emp" not in self._arrays:
            self._arrays["p_emp"] = np.array([s.p_emp for s in self.samples])
        return self._arrays["p_emp"]

    @property
    def scores(self) -> np.ndarray:
        if "scores" not in self._arrays:
            self._arrays["scores"] = np.array([s.score for s in self.samples])
        return self._arrays["scores"]

    def question_ids(self) -> list[str]:
        """Distinct question ids in order of first appearance."""
        return list(dict.fromkeys(s.question_id for s in self.samples))

    def subset(self, questions, name: str | None = None) -> "CalibrationDataset":
        keep = set(questions)
        picked = [s for s in self.samples if s.question_id in keep]
        return CalibrationDataset(picked, self.hidden_dim, name or self.name)


@dataclass(frozen=True)
class CandidatePool:
    question_id: str
    question_hidden: np.ndarray
    question_score: float
    scores: np.ndarray
    correct: np.ndarray

    def __post_init__(self):
        if len(self.scores) == 0:
            raise DataError(f"question {self.question_id!r}: empty candidate list")
        if len(self.scores) != len(self.correct):
            raise DataError(f"question {self.question_id!r}: scores/correct length mismatch")
        bad = [s for s in self.scores if not (0.0 <= s <= 1.0)]
        if bad:
            raise DataError(
                f"question {self.question_id!r}: candidate score {bad[0]} outside [0, 1]")
        if not 0.0 <= self.question_score <= 1.0:
            raise DataError(
                f"question {self.question_id!r}: question_score {self.question_score} "
                "outside [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class SplitAssignment:
    train_questions: frozenset
    test_questions: frozenset
    seed: int
    train_fraction: float

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "train_questions": sorted(self.train_questions),
            "test_questions": sorted(self.test_questions),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitAssignment":
        train = frozenset(obj["train_questions"])
        test = frozenset(obj["test_questions"])
        if train & test:
            raise DataError("split has questions on both sides")
        return cls(train, test, int(obj["seed"]), float(obj["train_fraction"]))


def _parse_json_line(line: str, lineno: int, path) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DataError(f"{path}:{lineno}: expected a JSON object")
    return obj


def _iter_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def load_dataset(path, format: str = "jsonl", name: str | None = None) -> CalibrationDataset:
    """Read a ``samples.jsonl`` file.

    Errors name the offending line. A ``p_emp`` field, when present, must
    agree exactly with ``n_correct / n_rollouts``.
    """
    if format != "jsonl":
        raise DataError(f"unsupported format {format!r}")
    samples = []
    hidden_dim = None
    for lineno, line in _iter_lines(path):
        obj = _parse_json_line(line, lineno, path)
        try:
            n_roll = obj["n_rollouts"]
            n_corr = obj["n_correct"]
            if not (isinstance(n_roll, int) and isinstance(n_corr, int)):
                raise DataError("n_rollouts and n_correct must be integers")
            if n_roll < 1:
                raise DataError("n_rollouts must be positive")
            hidden = np.asarray(obj["hidden"], dtype=np.float64)
            sample = CalibrationSample.from_counts(
                obj["question_id"], obj.get("prefix_index", 0), float(obj["score"]),
                hidden, n_roll, n_corr)
            if "p_emp" in obj and float(obj["p_emp"]) != sample.p_emp:
                raise DataError(f"p_emp={obj['p_emp']} disagrees with {n_corr}/{n_roll}")
            if hidden_dim is None:
                hidden_dim = hidden.shape[0] if hidden.ndim == 1 else -1
            sample.validate(hidden_dim)
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except (DataError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        samples.append(sample)
    if not samples:
        raise DataError(f"{path}: empty dataset")
    return CalibrationDataset(samples, hidden_dim, name or Path(path).stem)


def save_dataset(dataset: CalibrationDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            fh.write(json.dumps({
                "question_id": s.question_id,
                "prefix_index": s.prefix_index,
                "score": s.score,
                "hidden": s.hidden.tolist(),
                "n_rollouts": s.n_rollouts,
                "n_correct": s.n_correct,
            }) + "\n")


def load_pools(path) -> list[CandidatePool]:
    pools = []
    seen = set()
    for lineno, line in _iter_lines(path):
        obj = _parse_json_line(line, lineno, path)
        try:
            qid = obj["question_id"]
            if qid in seen:
                raise DataError(f"duplicate question_id {qid!r}")
            seen.add(qid)
            cands = obj["candidates"]
            pools.append(CandidatePool(
                question_id=qid,
                question_hidden=np.asarray(obj["question_hidden"], dtype=np.float64),
                question_score=float(obj["question_score"]),
                scores=np.array([float(c["score"]) for c in cands], dtype=np.float64),
                correct=np.array([bool(c["correct"]) for c in cands], dtype=bool),
            ))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    if not pools:
        raise DataError(f"{path}: no pools")
    return pools


def save_pools(pools: list[CandidatePool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pools:
            fh.write(json.dumps({
                "question_id": p.question_id,
                "question_score": p.question_score,
                "question_hidden": p.question_hidden.tolist(),
                "candidates": [{"score": float(s), "correct": bool(c)}
                               for s, c in zip(p.scores, p.correct)],
            }) + "\n")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def group_split(dataset: CalibrationDataset, train_fraction: float = 0.8,
                seed: int = 42) -> SplitAssignment:
    """Shuffle question ids and cut them into train and test sets.

    The train side gets ``round_half_up(train_fraction * Q)`` questions,
    clamped to ``[1, Q - 1]`` so neither side is empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    questions = dataset.question_ids()
    if len(questions) < 2:
        raise DataError("group_split needs at least 2 distinct questions")
    Xoshiro256(seed).shuffle(questions)
    n_train = min(max(round_half_up(train_fraction * len(questions)), 1), len(questions) - 1)
    return SplitAssignment(frozenset(questions[:n_train]), frozenset(questions[n_train:]),
                           seed, train_fraction)


def save_split(split: SplitAssignment, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split(path) -> SplitAssignment:
    with open(path, encoding="utf-8") as fh:
        return SplitAssignment.from_json(json.load(fh))


def apply_split(dataset: CalibrationDataset, split: SplitAssignment):
    """Return ``(train, test)`` datasets for a split."""
    return (dataset.subset(split.train_questions, f"{dataset.name}-train"),
            dataset.subset(split.test_questions, f"{dataset.name}-test"))
