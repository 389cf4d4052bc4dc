import math

import numpy as np
import pytest

from helpers import random_batch, random_potential, softplus_net, zero_potential
from otcalib.gradcheck import check_dy, check_loss_gradients
from otcalib.picnn import (PicnnConfig, PicnnError, dual_losses, embed_context, forward,
                           init_potential, is_nonnegative, loss_gradients, parameter_shapes,
                           potential_dy, potential_value, project_nonnegative)
from otcalib.rng import Xoshiro256


def test_parameter_layout_default():
    shapes = parameter_shapes(PicnnConfig(input_dim=16))
    assert list(shapes)[:2] == ["embed.0.weight", "embed.0.bias"]
    assert shapes["embed.0.weight"] == (64, 16) and shapes["embed.1.weight"] == (32, 64)
    assert "cvx.0.wz" not in shapes and "cvx.0.gate_weight" not in shapes
    assert shapes["cvx.1.wz"] == (32, 32) and shapes["cvx.2.wz"] == (1, 32)


@pytest.mark.parametrize("bad", [dict(num_layers=0), dict(hidden_dim_convex=0), dict(embed_dims=()),
                                 dict(activation_convex="relu")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PicnnConfig(input_dim=2, **bad)


def test_init_deterministic_and_constrained():
    cfg = PicnnConfig(input_dim=4, hidden_dim_context=5, hidden_dim_convex=6, embed_dims=(7,))
    a, b = init_potential(cfg, 3), init_potential(cfg, 3)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
        if name.endswith("bias"):
            assert np.all(a.params[name] == 0.0)
        if is_nonnegative(name):
            assert np.all(a.params[name] >= 0.0)
    assert not np.array_equal(a.params["embed.0.weight"], init_potential(cfg, 4).params["embed.0.weight"])


def test_embed_zero_and_identity():
    cfg = PicnnConfig(input_dim=2, hidden_dim_context=2, hidden_dim_convex=2, embed_dims=(2,))
    pot = zero_potential(cfg)
    assert np.array_equal(embed_context(pot, [0.3, 0.9]), np.zeros(2))
    pot.params["embed.0.weight"][:] = np.eye(2)
    assert np.allclose(embed_context(pot, [0.5, -0.5]), [0.5, -0.5])
    rnd = init_potential(cfg, 1)
    assert np.array_equal(embed_context(rnd, [0.1, 0.2]), embed_context(rnd, [0.1, 0.2]))
    with pytest.raises(ValueError):
        embed_context(rnd, [0.1, 0.2, 0.3])


def test_zero_network_is_zero():
    pot = zero_potential(PicnnConfig(input_dim=3))
    assert potential_value(pot, 0.7, np.ones(3)) == 0.0


def test_softplus_arrangement():
    pot = softplus_net()
    assert potential_value(pot, 0.0, [0.2, 0.3]) == pytest.approx(math.log(2.0), abs=1e-15)
    assert potential_dy(pot, 0.0, [0.2, 0.3]) == pytest.approx(0.5, abs=1e-15)


def test_convexity_1000_draws():
    rng = Xoshiro256(17)
    violations = 0
    for k in range(10):
        pot = random_potential(100 + k)
        n = 100
        h = np.stack([rng.normal_array(pot.config.input_dim) for _ in range(n)])
        y1 = 4 * rng.random_array(n) - 2
        y2 = 4 * rng.random_array(n) - 2
        lam = rng.random_array(n)
        mid = pot.value(lam * y1 + (1 - lam) * y2, h)
        chord = lam * pot.value(y1, h) + (1 - lam) * pot.value(y2, h)
        violations += int(np.sum(mid > chord + 1e-9))
    assert violations == 0


def test_monotone_derivative_1000_draws():
    rng = Xoshiro256(18)
    for k in range(10):
        pot = random_potential(200 + k)
        h = rng.normal_array(pot.config.input_dim)
        ys = np.sort(4 * rng.random_array(100) - 2)
        d = pot.dy(ys, h)
        assert np.all(np.diff(d) >= -1e-12)


def test_dy_matches_finite_differences_100_configs():
    rng = Xoshiro256(19)
    for k in range(100):
        pot = random_potential(300 + k)
        x, _, h = random_batch(rng, 5, pot.config.input_dim)
        assert check_dy(pot, x, h) <= 1e-4


def test_nonfinite_reports_layer():
    pot = softplus_net()
    pot.params["cvx.1.bias"][:] = np.inf
    with pytest.raises(PicnnError, match="layer 1"):
        potential_value(pot, 0.1, [0.0, 0.0])


class Quadratic:
    """value = 0.5 * scale * y^2, so the derivative is scale * y."""

    def __init__(self, scale):
        self.scale = scale

    def value_and_dy(self, y, hidden):
        y = np.asarray(y, dtype=np.float64)
        return 0.5 * self.scale * y ** 2, self.scale * y


def test_dual_losses_hand_example():
    loss_f, loss_g = dual_losses(Quadratic(1.0), Quadratic(0.0), [0.3], [0.4], None)
    assert loss_g == pytest.approx(-0.16)
    assert loss_f == pytest.approx(0.0)


def test_dual_losses_f_quadratic():
    # f = y^2/2, g' = identity: loss_f = mean f(x) - mean f(y)
    loss_f, loss_g = dual_losses(Quadratic(1.0), Quadratic(1.0), [0.3], [0.4], None)
    assert loss_f == pytest.approx(0.045 - 0.08)
    assert loss_g == pytest.approx(-(0.16 - 0.08))


def test_loss_gradients_match_dual_losses():
    g, f = random_potential(1), random_potential(1)
    f = init_potential(g.config, 99)
    x, y, h = random_batch(Xoshiro256(2), 8, g.config.input_dim)
    lf, lg = dual_losses(g, f, x, y, h)
    assert loss_gradients(g, f, x, y, h, "loss_f")[0] == pytest.approx(lf, abs=1e-12)
    assert loss_gradients(g, f, x, y, h, "loss_g")[0] == pytest.approx(lg, abs=1e-12)
    with pytest.raises(ValueError):
        loss_gradients(g, f, x, y, h, "loss_x")


def test_small_net_gradients_match_finite_differences():
    checked = 0
    seed = 0
    while checked < 3:
        cfg = PicnnConfig(input_dim=3, hidden_dim_context=4, hidden_dim_convex=4,
                          num_layers=2, embed_dims=(4,))
        g, f = init_potential(cfg, 2 * seed), init_potential(cfg, 2 * seed + 1)
        x, y, h = random_batch(Xoshiro256(50 + seed), 6, 3)
        res = [check_loss_gradients(g, f, x, y, h, w) for w in ("loss_f", "loss_g")]
        seed += 1
        if any(r.kink_crossed for r in res):
            continue
        assert all(r.passed(1e-4) for r in res), res
        checked += 1


def test_project_nonnegative():
    pot = softplus_net()
    pot.params["cvx.1.wz"][:] = -0.2
    pot.params["cvx.0.u_weight"][:] = -0.3
    project_nonnegative(pot)
    assert pot.params["cvx.1.wz"][0, 0] == 0.0
    assert np.all(pot.params["cvx.0.u_weight"] == -0.3)
    pot.params["cvx.1.wz"][:] = 0.7
    before = pot.copy()
    project_nonnegative(pot)
    for k in pot.params:
        assert np.array_equal(pot.params[k], before.params[k])


def test_forward_batches_match_single_calls():
    pot = random_potential(5)
    x, _, h = random_batch(Xoshiro256(6), 4, pot.config.input_dim)
    v, d, _ = forward(pot, x, h)
    for i in range(4):
        assert potential_value(pot, x[i], h[i]) == pytest.approx(v[i], abs=1e-14)
        assert potential_dy(pot, x[i], h[i]) == pytest.approx(d[i], abs=1e-14)
