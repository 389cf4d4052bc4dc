import numpy as np
import pytest

from otcalib.data import CandidatePool
from otcalib.quantile import ConstantQuantileModel
from otcalib.simulator import (DEFAULT_C_LEVELS, SWEEP_HEADER, SimConfig, evaluate_allocation,
                               fixed_budget_accuracy, outcome_table, prefix_outcomes, run_trial,
                               sweep_beta, sweep_C, trial_rng, write_sweep)
from otcalib.synthetic import SyntheticConfig, generate_pools, make_oracle


def _pool(correct, scores=None, qid="q"):
    correct = np.asarray(correct, dtype=bool)
    scores = np.linspace(0.1, 0.9, correct.size) if scores is None else np.asarray(scores, float)
    return CandidatePool(qid, np.zeros(2), 0.5, scores, correct)


def test_full_pool_unique_correct_argmax():
    pool = _pool([False, False, True], [0.2, 0.5, 0.9])
    assert all(run_trial(pool, n, trial_rng(s, "q", 0)) for n in (3, 10) for s in range(20))


def test_all_incorrect():
    pool = _pool([False] * 8)
    assert not any(run_trial(pool, n, trial_rng(0, "q", t)) for n in (1, 8) for t in range(10))


def test_n1_matches_pool_fraction():
    correct = [True, False, False, True, False, True, True, False, False, False]
    pool = _pool(correct, qid="lln")
    acc = np.mean([run_trial(pool, 1, trial_rng(0, "lln", t)) for t in range(10_000)])
    assert abs(acc - np.mean(correct)) <= 0.02


def test_ties_go_to_earliest_draw():
    pool = _pool([True, False], [0.5, 0.5])
    for t in range(30):
        rng = trial_rng(3, "q", t)
        first = prefix_outcomes(pool, 2, rng)[0]
        assert prefix_outcomes(pool, 2, trial_rng(3, "q", t))[1] == first


def test_prefix_outcomes_consistent_with_run_trial():
    pool = _pool(np.arange(12) % 3 == 0, np.random.default_rng(0).uniform(size=12))
    for t in range(20):
        table = prefix_outcomes(pool, 16, trial_rng(1, "q", t))
        for n in (1, 5, 12, 16):
            assert table[n - 1] == run_trial(pool, n, trial_rng(1, "q", t))


def test_empty_and_bad_budgets():
    pool = _pool([True])
    with pytest.raises(ValueError):
        run_trial(pool, 0, trial_rng(0, "q", 0))
    table = outcome_table([pool], 4, 3, 0)
    with pytest.raises(ValueError):
        evaluate_allocation(table, [5], 4)


def _pools(n=25, seed=4):
    cfg = SyntheticConfig(n_questions=n, seed=seed)
    oracle = make_oracle(cfg)
    return generate_pools(cfg, 64, oracle), oracle


def test_sweep_c_rows_and_determinism(tmp_path):
    pools, oracle = _pools()
    cfg = SimConfig(n_trials=10, seed=2, variant="ot")
    a = sweep_C(pools, oracle, cfg)
    assert len(a) == len(DEFAULT_C_LEVELS) == 10
    assert a == sweep_C(pools, oracle, cfg)
    for p in a:
        assert 1 / 64 <= p.mean_normalized_budget <= 1.0
    write_sweep(a, "ot", len(pools), cfg, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == SWEEP_HEADER and len(lines) == 11


def test_base_sweep_with_equal_scores_is_flat_where_allocations_agree():
    pools = [CandidatePool(f"q{i}", np.zeros(2), 0.99, np.full(4, 0.5), np.array([1, 0, 0, 1], bool))
             for i in range(5)]
    pts = sweep_C(pools, None, SimConfig(n_trials=5, variant="base", n_max=4))
    assert len({p.mean_normalized_budget for p in pts}) <= 2
    assert pts[0].mean_normalized_budget == 0.25


def test_single_all_correct_question():
    pool = _pool([True] * 6)
    pts = sweep_C([pool], ConstantQuantileModel(0.3), SimConfig(n_trials=5, variant="ot"))
    assert all(p.mean_accuracy == 1.0 for p in pts)


def test_beta_sweep_monotone_and_saturated_at_zero():
    pools, oracle = _pools()
    pts = sweep_beta(pools, oracle, SimConfig(n_trials=5, variant="ot"))
    budgets = [p.mean_normalized_budget for p in pts]
    assert all(a >= b for a, b in zip(budgets, budgets[1:]))
    zero = sweep_beta(pools, ConstantQuantileModel(0.0), SimConfig(n_trials=5, variant="ot"))
    assert all(p.mean_normalized_budget == 1.0 for p in zero)


def test_identity_allocator_matches_fixed_budget():
    pools, _ = _pools(10)
    cfg = SimConfig(n_trials=20, seed=5)
    table = outcome_table(pools, cfg.n_max, cfg.n_trials, cfg.seed)
    acc, norm = evaluate_allocation(table, [64] * len(pools), 64)
    assert norm == 1.0
    assert acc == fixed_budget_accuracy(pools, 64, cfg)
    direct = np.mean([[run_trial(p, 64, trial_rng(5, p.question_id, t)) for t in range(20)]
                      for p in pools])
    assert acc == direct


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_trials=0)
    with pytest.raises(ValueError):
        SimConfig(variant="x")
    with pytest.raises(ValueError):
        sweep_C(_pools(3)[0], None, SimConfig(variant="ot", n_trials=1))
