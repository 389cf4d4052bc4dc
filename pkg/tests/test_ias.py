import numpy as np
import pytest
from hypothesis import given, strategies as st

from otcalib.fixtures import brute_force_n
from otcalib.ias import (AllocationRequest, allocate_base, allocate_beta_point,
                         allocate_posterior, n_ias_closed_form, n_star, posterior_allocation)
from otcalib.quantile import ConstantQuantileModel, OtQuantileModel
from helpers import random_potential
from otcalib.rng import Xoshiro256


def test_n_star_examples():
    assert n_star(0.5, 0.99).n == 7
    assert n_star(0.99, 0.5).n == 1
    r = n_star(0.01, 0.999, 64)
    assert r.n == 64 and r.saturated


def test_closed_form_examples():
    assert n_ias_closed_form(0.5, 0.99).n == 7
    assert n_ias_closed_form(0.9, 0.9).n == 1


def test_closed_form_equals_brute_force_grid():
    for i in range(1, 100):
        for c in (0.5, 0.9, 0.99, 0.999):
            r = n_ias_closed_form(i / 100, c, 64)
            assert (r.n, r.saturated) == brute_force_n(i / 100, c, 64)
            assert (r.n, r.saturated) == (n_star(i / 100, c, 64).n, n_star(i / 100, c, 64).saturated)


def test_boundary_rules():
    assert n_star(1.0, 0.9).n == 1 and n_ias_closed_form(1 - 1e-13, 0.9).n == 1
    r = n_ias_closed_form(0.0, 0.9, 32)
    assert r.n == 32 and r.saturated
    assert n_star(-0.1, 0.9, 16).saturated


def test_allocate_base():
    req = AllocationRequest(0.9, 64)
    assert allocate_base(0.3, req).n == 7
    assert allocate_base(1.0, req).n == 1
    r = allocate_base(0.0, req)
    assert r.n == 64 and r.saturated


def test_posterior_hand_case():
    grid = np.array([0.2, 0.8])
    means = [np.mean(1 - (1 - grid) ** n) for n in range(1, 9)]
    oracle_n = 1 + next(i for i, m in enumerate(means) if m >= 0.9)
    assert posterior_allocation(grid, 0.9, 64).n == oracle_n == 8


@given(st.floats(0.01, 0.99), st.sampled_from([0.5, 0.9, 0.99]))
def test_degenerate_posterior_equals_point(p, c):
    assert posterior_allocation(np.full(5, p), c, 64).n == n_star(p, c, 64).n


def test_certain_branch():
    assert posterior_allocation(np.array([0.0, 0.1, 1.0]), 1 / 3, 64).n == 1


def test_beta_point_examples():
    req = AllocationRequest(0.99, 64)
    assert allocate_beta_point(ConstantQuantileModel(0.5), np.zeros(2), 0.3, req).n == 7
    r = allocate_beta_point(ConstantQuantileModel(0.0), np.zeros(2), 0.3, req)
    assert r.n == 64 and r.saturated


def test_beta_point_monotone_for_ot():
    rng = Xoshiro256(3)
    req = AllocationRequest(0.9, 64)
    for k in range(20):
        model = OtQuantileModel(random_potential(k))
        h = rng.normal_array(model.potential.config.input_dim)
        ns = [allocate_beta_point(model, h, b, req).n for b in np.linspace(0, 1, 11)]
        assert all(a >= b for a, b in zip(ns, ns[1:]))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=11), st.floats(0.05, 0.95),
       st.floats(0.05, 0.95))
def test_posterior_monotone_in_confidence(grid, c1, c2):
    lo, hi = sorted((c1, c2))
    a = posterior_allocation(np.array(grid), lo, 64).n
    b = posterior_allocation(np.array(grid), hi, 64).n
    assert 1 <= a <= b <= 64


def test_single_level_posterior_equals_beta_point():
    rng = Xoshiro256(8)
    for k in range(10):
        model = OtQuantileModel(random_potential(50 + k))
        h = rng.normal_array(model.potential.config.input_dim)
        for beta in (0.2, 0.5, 0.9):
            req = AllocationRequest(0.9, 64, (beta,))
            assert allocate_posterior(model, h, req).n == allocate_beta_point(model, h, beta, req).n


def test_request_validation():
    with pytest.raises(ValueError):
        AllocationRequest(1.0, 64)
    with pytest.raises(ValueError):
        AllocationRequest(0.5, 0)
