import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from compofed.prox import L1, Box, L2Ball, Zero, prox, reference_prox, regularizer_value, subgradient_bound
from compofed.streams import generic_stream


def random_regularizers(rng, d):
    yield Zero()
    yield L1(weight=float(rng.uniform(0.0, 2.0)))
    yield L2Ball(radius=float(rng.uniform(0.2, 3.0)), center=rng.normal(size=d))
    lo = rng.normal(size=d) - rng.uniform(0.1, 2.0, size=d)
    yield Box(lower=lo, upper=lo + rng.uniform(0.0, 3.0, size=d))


def test_zero_prox_is_identity():
    omega = np.array([1.5, -2.0])
    assert_allclose(prox(Zero(), 0.7, omega), omega, rtol=0, atol=0)


def test_l1_prox_soft_threshold_example():
    # Expected values from per-coordinate golden-section minimization of
    # 0.5*|u| + 0.5*(omega - u)^2 (reference_prox), frozen here.
    got = prox(L1(weight=1.0), 0.5, np.array([1.0, -0.3, 0.0]))
    assert_allclose(got, [0.5, 0.0, 0.0], atol=1e-12)
    oracle = reference_prox(L1(weight=1.0), 0.5, np.array([1.0, -0.3, 0.0]))
    assert_allclose(got, oracle, atol=1e-8)


def test_ball_projection_example():
    g = L2Ball(radius=1.0, center=np.zeros(2))
    assert_allclose(prox(g, 1.0, np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-15)


def test_box_reference_clamp():
    g = Box(lower=-np.ones(3), upper=np.ones(3))
    got = reference_prox(g, 2.0, np.array([2.0, -3.0, 0.5]))
    assert_allclose(got, [1.0, -1.0, 0.5], atol=1e-8)
    assert_allclose(prox(g, 2.0, np.array([2.0, -3.0, 0.5])), [1.0, -1.0, 0.5])


def test_l1_zero_weight_is_identity():
    rng = generic_stream(1)
    v = rng.normal(size=6)
    assert_allclose(reference_prox(L1(weight=0.0), 5.0, v), v, atol=1e-8)
    assert_allclose(prox(L1(weight=0.0), 5.0, v), v)


def test_prox_matches_reference_on_random_inputs():
    # 1000 random (g, theta, omega) triples across all variants.
    rng = generic_stream(42)
    checked = 0
    while checked < 1000:
        d = int(rng.integers(1, 8))
        for g in random_regularizers(rng, d):
            theta = float(rng.uniform(0.0, 3.0))
            omega = rng.normal(size=d) * float(rng.uniform(0.5, 4.0))
            assert_allclose(prox(g, theta, omega), reference_prox(g, theta, omega), atol=1e-6)
            checked += 1


def test_nonexpansiveness():
    rng = generic_stream(43)
    for _ in range(200):
        d = int(rng.integers(1, 9))
        for g in random_regularizers(rng, d):
            theta = float(rng.uniform(0.0, 2.0))
            a = rng.normal(size=d) * 3.0
            b = rng.normal(size=d) * 3.0
            lhs = np.linalg.norm(prox(g, theta, a) - prox(g, theta, b))
            rhs = np.linalg.norm(a - b)
            assert lhs <= rhs * (1.0 + 1e-12)


def test_output_minimizes_prox_objective():
    # 0 in theta*dg(u*) + (u* - omega), verified via objective comparison
    # against random perturbations of the minimizer.
    rng = generic_stream(44)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        for g in random_regularizers(rng, d):
            theta = float(rng.uniform(0.0, 2.0))
            omega = rng.normal(size=d) * 2.0
            u = prox(g, theta, omega)

            def objective(v):
                return theta * regularizer_value(g, v) + 0.5 * float((omega - v) @ (omega - v))

            base = objective(u)
            for _ in range(5):
                v = u + rng.normal(size=d) * float(rng.uniform(1e-4, 1.0))
                assert base <= objective(v) + 1e-9 * (1.0 + abs(base))


def test_indicator_outputs_feasible_and_fixed_points():
    rng = generic_stream(45)
    for _ in range(50):
        d = int(rng.integers(1, 7))
        center = rng.normal(size=d)
        ball = L2Ball(radius=0.7, center=center)
        lo = rng.normal(size=d)
        box = Box(lower=lo, upper=lo + 1.5)
        for g in (ball, box):
            omega = rng.normal(size=d) * 4.0
            u = prox(g, float(rng.uniform(0.0, 2.0)), omega)
            assert regularizer_value(g, u) == 0.0
            assert_allclose(prox(g, 1.0, u), u, atol=1e-12)


def test_theta_zero_with_indicator_projects():
    g = L2Ball(radius=1.0, center=np.zeros(2))
    assert_allclose(prox(g, 0.0, np.array([3.0, 4.0])), [0.6, 0.8])
    box = Box(lower=np.zeros(2), upper=np.ones(2))
    assert_allclose(prox(box, 0.0, np.array([-1.0, 2.0])), [0.0, 1.0])


def test_stacked_rows_match_per_row():
    rng = generic_stream(46)
    W = rng.normal(size=(5, 4)) * 2.0
    for g in random_regularizers(rng, 4):
        theta = 0.3
        stacked = prox(g, theta, W)
        rows = np.stack([prox(g, theta, W[i]) for i in range(5)])
        assert_allclose(stacked, rows, atol=0, rtol=0)


def test_subgradient_bounds():
    assert subgradient_bound(Zero(), 7) == 0.0
    w = 0.25
    assert subgradient_bound(L1(weight=w), 9) == pytest.approx(w * 3.0)
    assert math.isinf(subgradient_bound(L2Ball(radius=1.0, center=np.zeros(2)), 2))
    assert math.isinf(subgradient_bound(Box(lower=np.zeros(2), upper=np.ones(2)), 2))


def test_input_validation():
    with pytest.raises(ValueError):
        prox(Zero(), -0.1, np.array([1.0]))
    with pytest.raises(ValueError):
        prox(L1(weight=1.0), 1.0, np.array([np.nan]))
    with pytest.raises(ValueError):
        prox(Zero(), np.inf, np.array([1.0]))
    with pytest.raises(ValueError):
        L1(weight=-1.0)
    with pytest.raises(ValueError):
        L2Ball(radius=0.0, center=np.zeros(2))
    with pytest.raises(ValueError):
        Box(lower=np.ones(2), upper=np.zeros(2))
