import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_potential, zero_potential
from otcalib.picnn import PicnnConfig, init_potential
from otcalib.quantile import (DEFAULT_LEVELS, ConstantQuantileModel, OtQuantileModel, QrModel,
                              UnsupportedLevelError, build_source_table, expected_probabilities,
                              expected_probability, median_estimate, ot_quantile, qr_quantile,
                              qr_train)
from otcalib.rng import Xoshiro256


def _constant_slope_net(slope):
    """One-layer PICNN with value ``slope * y``, so its derivative is constant."""
    pot = zero_potential(PicnnConfig(input_dim=2, hidden_dim_context=2, hidden_dim_convex=1,
                                     num_layers=1, embed_dims=(2,)))
    pot.params["cvx.0.wy"][:] = 1.0
    pot.params["cvx.0.y_bias"][:] = slope
    return pot


class Linear:
    """Stand-in potential with derivative a*y + b, for exact quantile checks."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def dy(self, y, hidden):
        return self.a * np.asarray(y) + self.b


class FnModel:
    def __init__(self, fn):
        self.fn = fn

    def quantiles(self, levels, hidden):
        lv = np.asarray(levels, dtype=np.float64)
        return np.tile(self.fn(lv), (np.atleast_2d(hidden).shape[0], 1))


def test_identity_transport_gives_level():
    model = OtQuantileModel(Linear(1.0, 0.0))
    assert ot_quantile(model, 0.3, np.zeros(2)) == pytest.approx(0.3)


def test_constant_derivative_is_clamped():
    model = OtQuantileModel(_constant_slope_net(1.7))
    assert ot_quantile(model, 0.4, np.zeros(2)) == 1.0
    assert OtQuantileModel(Linear(0.0, 1.7)).quantile(0.2, np.zeros(2)) == 1.0


def test_beta_out_of_range():
    with pytest.raises(ValueError):
        ot_quantile(OtQuantileModel(Linear(1, 0)), 1.2, np.zeros(2))


def test_ot_no_crossing_1000_draws():
    rng = Xoshiro256(31)
    violations = 0
    for k in range(10):
        model = OtQuantileModel(random_potential(400 + k))
        d = model.potential.config.input_dim
        for _ in range(100):
            h = rng.normal_array(d)
            b1, b2 = sorted((rng.random(), rng.random()))
            q1, q2 = model.quantile(b1, h), model.quantile(b2, h)
            violations += q1 > q2
            assert 0.0 <= q1 <= 1.0 and 0.0 <= q2 <= 1.0
    assert violations == 0


def test_score_mode_maps_through_table():
    table = build_source_table(np.linspace(0.2, 0.6, 50), 101)
    assert table[0] == pytest.approx(0.2) and table[-1] == pytest.approx(0.6)
    model = OtQuantileModel(Linear(1.0, 0.0), "score", table)
    assert model.quantile(0.5, np.zeros(1)) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        OtQuantileModel(Linear(1.0, 0.0), "score")


def _qr(levels=DEFAULT_LEVELS, d=3):
    return QrModel(np.zeros((len(levels), d)), np.zeros(len(levels)), levels)


def test_qr_lookup_and_bias_passthrough():
    m = _qr()
    m.biases[3] = 0.3
    assert qr_quantile(m, 0.3, np.ones(3)) == pytest.approx(0.3)
    r = Xoshiro256(1)
    m.weights[:] = np.stack([r.normal_array(3) for _ in range(11)])
    h = r.normal_array(3)
    assert qr_quantile(m, 0.5, h) == pytest.approx(float(np.clip(m.weights[5] @ h + m.biases[5], 0, 1)))
    assert median_estimate(m, h) == qr_quantile(m, 0.5, h)


def test_qr_unsupported_level():
    with pytest.raises(UnsupportedLevelError, match="unsupported level"):
        qr_quantile(_qr(), 0.55, np.zeros(3))
    with pytest.raises(UnsupportedLevelError):
        median_estimate(_qr((0.1, 0.9)), np.zeros(3))


def test_median_from_bias():
    m = _qr()
    m.biases[5] = 0.4
    assert median_estimate(m, np.ones(3)) == pytest.approx(0.4)


def test_qr_zero_steps():
    m = qr_train(np.ones((4, 2)), np.full(4, 0.5), steps=0)
    assert np.all(m.weights == 0) and np.all(m.biases == 0)
    assert np.all(m.raw_quantiles(DEFAULT_LEVELS, np.ones((2, 2))) == 0)


def test_qr_point_mass_converges_to_target():
    from otcalib.metrics import pinball

    m = qr_train(np.zeros((1, 2)), np.array([0.5]), steps=600, lr=0.01, batch_size=8)
    # 0.5 is optimal at every level; interior levels have no other minimiser
    assert np.allclose(m.biases[1:-1], 0.5, atol=0.01)
    for tau, b in zip(DEFAULT_LEVELS, m.biases):
        assert pinball(tau, 0.5, b) <= pinball(tau, 0.5, 0.5) + 0.01


def test_qr_crossing_while_ot_does_not():
    from otcalib.data import apply_split, group_split
    from otcalib.synthetic import SyntheticConfig, generate_dataset

    ds, _ = generate_dataset(SyntheticConfig(n_questions=300, prm_noise_sd=0.5, seed=3))
    tr, _ = apply_split(ds, group_split(ds))
    qr = qr_train(tr.hidden, tr.p_emp, steps=1000)
    r = Xoshiro256(99)
    h = np.stack([r.normal_array(16) for _ in range(1000)])
    assert np.any(np.diff(qr.raw_quantiles(DEFAULT_LEVELS, h), axis=1) < 0)
    ot = OtQuantileModel(init_potential(PicnnConfig(input_dim=16), 5))
    assert np.all(np.diff(ot.raw_quantiles(DEFAULT_LEVELS, h), axis=1) >= 0)


def test_expected_probability_cases():
    h = np.zeros(1)
    assert expected_probability(ConstantQuantileModel(0.5), h) == pytest.approx(0.5)
    assert expected_probability(FnModel(lambda t: t), h) == pytest.approx(0.5)
    hand = sum(0.05 * (a * a + b * b) for a, b in zip(np.arange(10) / 10, np.arange(1, 11) / 10))
    assert expected_probability(FnModel(lambda t: t * t), h) == pytest.approx(hand, abs=1e-12)
    with pytest.raises(ValueError):
        expected_probability(ConstantQuantileModel(0.5), h, [0.5])


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=30, deadline=None)
def test_expected_probability_within_range(seed):
    model = OtQuantileModel(random_potential(seed))
    h = Xoshiro256(seed).normal_array(model.potential.config.input_dim)
    q = model.quantiles(DEFAULT_LEVELS, h)[0]
    e = expected_probabilities(model, h[None, :])[0]
    assert q.min() - 1e-12 <= e <= q.max() + 1e-12
