"""Golden fixtures and the registry of oracle-checked reference values.

A golden fixture is a short CLI pipeline run from pinned seeds. Its expected
outputs live under ``fixtures/<name>/expected`` and are compared column by
column against a fresh run, with a per-column absolute tolerance (zero means
the text must match exactly).

Each registry entry pairs a documented reference value with the oracle that
recomputes it independently of the code under test. Tests call the oracles;
the documented values are never trusted on their own.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

FIXTURE_ENV = "OTCALIB_FIXTURES"


def fixture_root() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    return Path(env) if env else Path(__file__).resolve().parents[2] / "fixtures"


@dataclass(frozen=True)
class GoldenFixture:
    name: str
    steps: tuple[tuple[str, ...], ...]
    outputs: tuple[str, ...]
    tolerances: dict = field(default_factory=dict)

    def argv(self, work: Path, fixture_dir: Path, seed_offset: int = 0) -> list[list[str]]:
        runs = []
        for step in self.steps:
            args = [a.replace("{work}", str(work)).replace("{fixture}", str(fixture_dir))
                    for a in step]
            if seed_offset:
                for i, a in enumerate(args[:-1]):
                    if a == "--seed":
                        args[i + 1] = str(int(args[i + 1]) + seed_offset)
            runs.append(args)
        return runs


_METRIC_TOL = {c: 1e-9 for c in ("brier", "pos_brier", "ece", "wql", "calibration_area")}
_LOG_TOL = {"loss_f": 1e-6, "loss_g": 1e-6, "lr_f": 0.0, "lr_g": 0.0,
            "val_area": 1e-9, "best_area": 1e-9}

FIXTURES = (
    GoldenFixture(
        name="split_q10",
        steps=(("synth", "--family", "uniform_band", "--questions", "10", "--seed", "0",
                "--prefixes", "1", "--out-dir", "{work}"),
               ("split", "--samples", "{work}/samples.jsonl", "--train-fraction", "0.8",
                "--seed", "42", "--out-dir", "{work}")),
        outputs=("split.json",),
    ),
    GoldenFixture(
        name="pipeline_small",
        steps=(("synth", "--family", "uniform_band", "--questions", "40", "--seed", "11",
                "--out-dir", "{work}"),
               ("split", "--samples", "{work}/samples.jsonl", "--seed", "42",
                "--out-dir", "{work}"),
               ("train-ot", "--samples", "{work}/samples.jsonl", "--split", "{work}/split.json",
                "--config", "{fixture}/train_config.json", "--seed", "3", "--out-dir", "{work}"),
               ("train-qr", "--samples", "{work}/samples.jsonl", "--split", "{work}/split.json",
                "--steps", "300", "--seed", "5", "--out-dir", "{work}"),
               ("evaluate", "--samples", "{work}/samples.jsonl", "--split", "{work}/split.json",
                "--variant", "base", "--out-dir", "{work}"),
               ("evaluate", "--samples", "{work}/samples.jsonl", "--split", "{work}/split.json",
                "--variant", "ot", "--checkpoint", "{work}/checkpoint_ot.json",
                "--out-dir", "{work}"),
               ("evaluate", "--samples", "{work}/samples.jsonl", "--split", "{work}/split.json",
                "--variant", "qr", "--checkpoint", "{work}/checkpoint_qr.json",
                "--out-dir", "{work}")),
        outputs=("train_log.csv", "metrics_base.csv", "metrics_ot.csv", "metrics_qr.csv",
                 "calibration_curve_ot.csv", "quantile_curves_ot.csv"),
        tolerances={"train_log.csv": _LOG_TOL,
                    "metrics_base.csv": _METRIC_TOL, "metrics_ot.csv": _METRIC_TOL,
                    "metrics_qr.csv": _METRIC_TOL,
                    "calibration_curve_ot.csv": {"coverage": 1e-9},
                    "quantile_curves_ot.csv": {"quantile": 1e-9}},
    ),
    GoldenFixture(
        name="sweep_small",
        steps=(("synth", "--family", "logit_normal", "--questions", "4", "--pool-questions",
                "30", "--seed", "5", "--out-dir", "{work}"),
               ("simulate", "--pools", "{work}/pools.jsonl", "--variant", "base", "--sweep", "c",
                "--trials", "20", "--seed", "1", "--out-dir", "{work}"),
               ("allocate", "--pools", "{work}/pools.jsonl", "--variant", "base",
                "--confidence", "0.9", "--out-dir", "{work}")),
        outputs=("sweep_base_c.csv", "allocations_base.csv"),
        tolerances={"sweep_base_c.csv": {"mean_accuracy": 1e-12, "mean_norm_budget": 1e-12}},
    ),
)


@dataclass
class Mismatch:
    fixture: str
    file: str
    column: str
    max_deviation: float

    def __str__(self) -> str:
        return f"{self.fixture}: {self.file} column {self.column!r} max deviation {self.max_deviation:g}"


@dataclass
class FixtureReport:
    results: dict[str, list[Mismatch]]

    @property
    def passed(self) -> bool:
        return not any(self.results.values())

    def lines(self) -> list[str]:
        out = []
        for name, mism in self.results.items():
            out.append(f"{'PASS' if not mism else 'FAIL'} {name}")
            out.extend(f"  {m}" for m in mism)
        return out


def _rows(text: str) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text)))


def compare_csv(fixture: str, fname: str, expected: str, actual: str,
                tolerances: dict) -> list[Mismatch]:
    exp, act = _rows(expected), _rows(actual)
    if not exp or not act or exp[0] != act[0]:
        return [Mismatch(fixture, fname, "<header>", math.inf)]
    if len(exp) != len(act):
        return [Mismatch(fixture, fname, "<rows>", float(abs(len(exp) - len(act))))]
    out = []
    for j, col in enumerate(exp[0]):
        tol = tolerances.get(col, 0.0)
        worst = 0.0
        for er, ar in zip(exp[1:], act[1:]):
            if er[j] == ar[j]:
                continue
            if tol == 0.0 or "" in (er[j], ar[j]):
                worst = math.inf
                break
            try:
                worst = max(worst, abs(float(er[j]) - float(ar[j])))
            except ValueError:
                worst = math.inf
                break
        if worst > tol:
            out.append(Mismatch(fixture, fname, col, worst))
    return out


def _compare(fixture: GoldenFixture, fname: str, expected: str, actual: str) -> list[Mismatch]:
    if fname.endswith(".csv"):
        return compare_csv(fixture.name, fname, expected, actual,
                           fixture.tolerances.get(fname, {}))
    if expected != actual:
        return [Mismatch(fixture.name, fname, "<content>", math.inf)]
    return []


def run_fixture(fixture: GoldenFixture, work: Path, root: Path | None = None,
                seed_offset: int = 0) -> None:
    from otcalib.cli import run

    fixture_dir = (root or fixture_root()) / fixture.name
    for argv in fixture.argv(work, fixture_dir, seed_offset):
        code = run(argv)
        if code != 0:
            raise RuntimeError(f"fixture {fixture.name}: step {argv[0]} exited with {code}")


def verify_fixtures(root: Path | None = None, seed_offset: int = 0,
                    names: tuple[str, ...] | None = None) -> FixtureReport:
    """Rerun each fixture pipeline and diff it against the stored outputs.

    ``seed_offset`` shifts every ``--seed`` flag, which should make the
    comparison fail; it exists to show the fixtures are sensitive.
    """
    root = root or fixture_root()
    results = {}
    for fx in FIXTURES:
        if names is not None and fx.name not in names:
            continue
        with tempfile.TemporaryDirectory() as tmp:
            work = Path(tmp)
            run_fixture(fx, work, root, seed_offset)
            mism = []
            for fname in fx.outputs:
                expected = (root / fx.name / "expected" / fname).read_text(encoding="utf-8")
                actual = (work / fname).read_text(encoding="utf-8")
                mism.extend(_compare(fx, fname, expected, actual))
        results[fx.name] = mism
    return FixtureReport(results)


def regenerate_fixtures(root: Path | None = None) -> None:
    """Rewrite every expected output from the pinned seeds."""
    root = root or fixture_root()
    for fx in FIXTURES:
        dest = root / fx.name / "expected"
        dest.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory() as tmp:
            run_fixture(fx, Path(tmp), root)
            for fname in fx.outputs:
                shutil.copyfile(Path(tmp) / fname, dest / fname)


# --- oracle registry -------------------------------------------------------

@dataclass(frozen=True)
class OracleEntry:
    name: str
    claim: str
    documented: object
    oracle: str
    check: Callable[[], tuple[bool, dict]]
    slow: bool = False


def _independent_xoshiro(seed: int):
    """Stand-alone xoshiro256** stream used only as an oracle."""
    m = (1 << 64) - 1
    s, st = [], seed
    for _ in range(4):
        st = (st + 0x9E3779B97F4A7C15) & m
        z = st
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
        s.append(z ^ (z >> 31))

    def rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & m

    while True:
        out = (rotl((s[1] * 5) & m, 7) * 9) & m
        t = (s[1] << 17) & m
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        yield out


def oracle_split(question_ids: list[str], train_fraction: float, seed: int):
    stream = _independent_xoshiro(seed)
    ids = list(question_ids)
    for i in range(len(ids) - 1, 0, -1):
        n = i + 1
        limit = (1 << 64) - (1 << 64) % n
        r = next(stream)
        while r >= limit:
            r = next(stream)
        j = r % n
        ids[i], ids[j] = ids[j], ids[i]
    n_train = min(max(math.floor(train_fraction * len(ids) + 0.5), 1), len(ids) - 1)
    return sorted(ids[:n_train]), sorted(ids[n_train:])


def _check_golden_split():
    from otcalib.data import group_split
    from otcalib.synthetic import SyntheticConfig, generate_dataset

    ds, _ = generate_dataset(SyntheticConfig(n_questions=10, prefixes_per_question=1, seed=0))
    train, test = oracle_split(ds.question_ids(), 0.8, 42)
    split = group_split(ds, 0.8, 42)
    stored = json.loads((fixture_root() / "split_q10" / "expected" / "split.json").read_text())
    ok = (sorted(split.train_questions) == train and sorted(split.test_questions) == test
          and stored["train_questions"] == train and stored["test_questions"] == test
          and (len(train), len(test)) == (8, 2))
    return ok, {"train": train, "test": test}


def _small_pair(seed: int, layers: int = 2):
    from otcalib.picnn import PicnnConfig, init_potential

    cfg = PicnnConfig(input_dim=3, hidden_dim_context=4, hidden_dim_convex=4,
                      num_layers=layers, embed_dims=(4,))
    return init_potential(cfg, 2 * seed), init_potential(cfg, 2 * seed + 1)


def _batch(seed: int, n: int = 6, dim: int = 3):
    from otcalib.rng import Xoshiro256

    r = Xoshiro256(seed)
    x = r.random_array(n)
    y = r.random_array(n)
    h = np.stack([r.normal_array(dim) for _ in range(n)])
    return x, y, h


def _check_dy_fd():
    from otcalib.gradcheck import check_dy

    worst = 0.0
    for seed in range(5):
        g, _ = _small_pair(seed, 3)
        x, _, h = _batch(100 + seed)
        worst = max(worst, check_dy(g, x, h))
    return worst <= 1e-4, {"max_scaled_error": worst}


def _check_loss_gradient_fd():
    from otcalib.gradcheck import check_loss_gradients

    detail = {}
    seed = 0
    while len(detail) < 2:
        g, f = _small_pair(seed)
        x, y, h = _batch(200 + seed)
        res = [check_loss_gradients(g, f, x, y, h, w) for w in ("loss_f", "loss_g")]
        if not any(r.kink_crossed for r in res):
            detail = {r.which: r.max_rel_error for r in res}
        seed += 1
    return all(v <= 1e-4 for v in detail.values()), detail


def _check_adam_step():
    from otcalib.optim import AdamState, adam_step

    lr, b1, b2, eps, grad = 0.1, 0.9, 0.999, 1e-8, 1.0
    m = (1 - b1) * grad
    v = (1 - b2) * grad * grad
    hand = 1.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
    params = {"w": np.array([1.0])}
    adam_step(params, {"w": np.array([grad])}, AdamState(), lr, (b1, b2), eps)
    got = float(params["w"][0])
    return abs(got - hand) <= 1e-15 and abs((1.0 - got) - 0.1) < 1e-7, {"hand": hand,
                                                                         "got": got}


def _check_unconditional_recovery():
    from otcalib.picnn import PicnnConfig
    from otcalib.rng import Xoshiro256
    from otcalib.trainer import TrainConfig, TrainingData, train

    r = Xoshiro256(1)
    train_data = TrainingData(np.ones((2000, 1)), 0.2 + 0.5 * r.random_array(2000), np.zeros(2000))
    val_data = TrainingData(np.ones((500, 1)), 0.2 + 0.5 * r.random_array(500), np.zeros(500))
    res = train(train_data, val_data, PicnnConfig(input_dim=1),
                TrainConfig(max_steps=3000, eval_every=50, lr_decay_every=4000, seed=0))
    xs = np.round(np.arange(0.05, 0.951, 0.05), 2)
    q = res.model().quantiles(xs, np.ones((1, 1)))[0]
    err = float(np.max(np.abs(q - (0.2 + 0.5 * xs))))
    return err <= 0.05, {"max_error": err, "potential": res.inference_potential}


def _check_qr_crossing():
    from otcalib.data import apply_split, group_split
    from otcalib.quantile import DEFAULT_LEVELS, qr_train
    from otcalib.rng import Xoshiro256
    from otcalib.synthetic import SyntheticConfig, generate_dataset

    ds, _ = generate_dataset(SyntheticConfig(n_questions=500, prm_noise_sd=0.5, seed=3))
    tr, _ = apply_split(ds, group_split(ds, 0.8, 42))
    model = qr_train(tr.hidden, tr.p_emp, DEFAULT_LEVELS)
    r = Xoshiro256(99)
    hv = np.stack([r.normal_array(ds.hidden_dim) for _ in range(1000)])
    q = model.raw_quantiles(DEFAULT_LEVELS, hv)
    count = int(np.sum(np.any(np.diff(q, axis=1) < 0, axis=1)))
    return count > 0, {"rows_with_crossing": count}


def _check_trapezoid():
    from otcalib.quantile import expected_probability

    class Square:
        def quantiles(self, levels, hidden):
            lv = np.asarray(levels, dtype=np.float64)
            return np.tile(lv ** 2, (np.atleast_2d(hidden).shape[0], 1))

    taus = [i / 10 for i in range(11)]
    hand = sum(0.5 * (taus[i + 1] - taus[i]) * (taus[i] ** 2 + taus[i + 1] ** 2)
               for i in range(10))
    got = expected_probability(Square(), np.zeros(1))
    return abs(hand - 0.335) < 1e-12 and abs(got - hand) < 1e-12, {"hand": hand, "got": got}


def _check_ece_two_bins():
    from otcalib.metrics import ece

    preds, targets = [0.1, 0.9], [0.0, 1.0]
    lo, hi, nb = -0.0005, 1.0005, 12
    width = (hi - lo) / nb
    bins: dict[int, list] = {}
    for p, t in zip(preds, targets):
        bins.setdefault(min(int((p - lo) // width), nb - 1), []).append((p, t))
    hand = sum(len(b) / len(preds) * abs(np.mean([p for p, _ in b]) - np.mean([t for _, t in b]))
               for b in bins.values())
    got = ece(preds, targets)
    return abs(hand - 0.1) < 1e-12 and abs(got - hand) < 1e-12, {"hand": hand, "got": got}


def brute_force_n(p: float, confidence: float, n_max: int = 64) -> tuple[int, bool]:
    for n in range(1, n_max + 1):
        if 1.0 - (1.0 - p) ** n >= confidence:
            return n, False
    return n_max, True


def _check_closed_form_agreement():
    from otcalib.ias import n_ias_closed_form

    bad = []
    for i in range(1, 100):
        p = i / 100
        for c in (0.5, 0.9, 0.99, 0.999):
            res = n_ias_closed_form(p, c, 64)
            if (res.n, res.saturated) != brute_force_n(p, c, 64):
                bad.append((p, c))
    return not bad, {"mismatches": bad}


def _check_posterior_n8():
    from otcalib.ias import posterior_allocation

    grid, c = (0.2, 0.8), 0.9
    means = {n: sum(1 - (1 - p) ** n for p in grid) / len(grid) for n in range(1, 9)}
    hand = min(n for n, v in means.items() if v >= c)
    got = posterior_allocation(np.array(grid), c, 64).n
    return hand == 8 and got == hand, {"mean7": round(means[7], 4), "mean8": round(means[8], 4),
                                       "n": got}


def _check_simulator_lln():
    from otcalib.data import CandidatePool
    from otcalib.simulator import run_trial, trial_rng

    correct = np.array([True, False, False, True, False, True, True, False, False, False])
    pool = CandidatePool("lln", np.zeros(2), 0.5, np.linspace(0.1, 0.9, 10), correct)
    acc = np.mean([run_trial(pool, 1, trial_rng(0, "lln", t)) for t in range(10_000)])
    return abs(acc - correct.mean()) <= 0.02, {"accuracy": float(acc)}


def _check_oracle_sweep():
    from otcalib.simulator import SimConfig, sweep_beta, sweep_C
    from otcalib.synthetic import SyntheticConfig, generate_pools, make_oracle

    config = SyntheticConfig(n_questions=60, ranking_strength=1.0, seed=4)
    oracle = make_oracle(config)
    pools = generate_pools(config, 64, oracle)
    sim = SimConfig(n_trials=100, seed=0, variant="ot")
    pts = sweep_C(pools, oracle, sim)
    acc = [p.mean_accuracy for p in pts]
    bud = [p.mean_normalized_budget for p in pts]
    beta = [p.mean_normalized_budget for p in sweep_beta(pools, oracle, sim)]
    ok = (all(b >= a - 0.02 for a, b in zip(acc, acc[1:]))
          and all(b >= a for a, b in zip(bud, bud[1:]))
          and all(b <= a for a, b in zip(beta, beta[1:])))
    return ok, {"accuracy": acc, "budget": bud, "beta_budget": beta}


def _check_prm_optimism():
    from otcalib.synthetic import SyntheticConfig, generate_dataset

    ds, _ = generate_dataset(SyntheticConfig(n_questions=2500, prm_bias=1.5, seed=8))
    gap = float(np.mean(ds.scores) - np.mean(ds.p_emp))
    return len(ds) >= 10_000 and gap > 0, {"mean_score_minus_mean_p": gap}


def _check_alpha_zero():
    from otcalib.rng import Xoshiro256, derive_seed
    from otcalib.simulator import run_trial, trial_rng
    from otcalib.synthetic import make_pool

    p_true = 0.3
    accs = {}
    for n in (1, 4, 16):
        hits = 0
        for t in range(10_000):
            rng = Xoshiro256(derive_seed(12, n, t))
            pool = make_pool("a0", np.zeros(1), p_true, n, 0.0, rng)
            hits += run_trial(pool, n, trial_rng(1, "a0", t))
        accs[n] = hits / 10_000
    return all(abs(a - p_true) <= 0.02 for a in accs.values()), accs


REGISTRY = (
    OracleEntry("golden_split_q10", "10 questions, fraction 0.8, seed 42 split 8/2",
                (8, 2), "independent xoshiro256** Fisher-Yates shuffle", _check_golden_split),
    OracleEntry("potential_dy_fd", "potential derivative matches central differences",
                1e-4, "central difference at eps 1e-3", _check_dy_fd),
    OracleEntry("loss_gradient_fd", "dual-loss parameter gradients match central differences",
                1e-4, "central difference over every parameter, kink-free draw",
                _check_loss_gradient_fd),
    OracleEntry("adam_one_step", "first Adam step with unit gradient moves by lr",
                0.1, "hand evaluation of the bias-corrected update", _check_adam_step),
    OracleEntry("unconditional_recovery", "U(0,1) to U(0.2,0.7) map error",
                0.05, "closed-form monotone map 0.2 + 0.5x", _check_unconditional_recovery,
                slow=True),
    OracleEntry("qr_crossing", "QR with noisy scores crosses on held-out contexts",
                "> 0", "count crossing rows over 1000 random contexts", _check_qr_crossing,
                slow=True),
    OracleEntry("trapezoid_tau_squared", "trapezoid of tau^2 on 11 levels",
                0.335, "hand trapezoid sum", _check_trapezoid),
    OracleEntry("ece_two_singletons", "ECE of [0.1, 0.9] vs [0, 1]",
                0.1, "hand binning on 12 equal-width bins", _check_ece_two_bins),
    OracleEntry("closed_form_agreement", "closed-form budget equals brute force",
                0, "exhaustive p x C grid against linear search", _check_closed_form_agreement),
    OracleEntry("posterior_grid_n8", "posterior budget on {0.2, 0.8} at C=0.9",
                8, "enumerate n = 1..8", _check_posterior_n8),
    OracleEntry("simulator_n1_lln", "Best-of-1 accuracy approaches pool accuracy",
                0.02, "10^4 trials", _check_simulator_lln, slow=True),
    OracleEntry("oracle_sweep_monotone", "oracle-calibrated sweeps are monotone",
                0.02, "100-trial simulation with the true quantiles", _check_oracle_sweep,
                slow=True),
    OracleEntry("prm_optimism", "positive bias makes scores optimistic",
                "> 0", "Monte Carlo over 10^4 samples", _check_prm_optimism),
    OracleEntry("alpha_zero_bon", "uninformative scores leave accuracy at pool fraction",
                0.02, "10^4 trials for N in {1, 4, 16}", _check_alpha_zero, slow=True),
)


def verify_registry(include_slow: bool = True) -> dict[str, tuple[bool, dict]]:
    return {e.name: e.check() for e in REGISTRY if include_slow or not e.slow}


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="python -m otcalib.fixtures")
    parser.add_argument("action", choices=("verify", "regenerate", "oracles"))
    parser.add_argument("--root", type=Path, default=None)
    parser.add_argument("--fast", action="store_true", help="skip slow oracle checks")
    args = parser.parse_args(argv)
    if args.action == "regenerate":
        regenerate_fixtures(args.root)
        return 0
    if args.action == "verify":
        report = verify_fixtures(args.root)
        print("\n".join(report.lines()))
        return 0 if report.passed else 1
    ok = True
    for name, (passed, detail) in verify_registry(not args.fast).items():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
