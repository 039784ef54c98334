import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from compofed.objective import (
    SmoothSpec,
    WorkerDataset,
    constants,
    full_gradient,
    load_worker_csv,
    loss,
    minibatch_gradient,
    sample_batch,
    save_worker_csv,
)
from compofed.streams import generic_stream


def random_dataset(rng, m=12, d=5, scale=1.0):
    feats = rng.normal(size=(m, d)) * scale
    labels = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    return WorkerDataset(features=feats, labels=labels, worker_id=0)


def naive_loss(x, ds, spec):
    # Independent per-sample recomputation with plain Python floats.
    total = 0.0
    for a, b in zip(ds.features, ds.labels):
        t = float(b) * float(np.dot(a, x))
        total += math.log(1.0 + math.exp(-t)) if t > -30 else -t
    return total / ds.m + 0.5 * spec.l2_weight * float(np.dot(x, x))


def central_difference_gradient(x, ds, spec):
    h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    grad = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (loss(x + e, ds, spec) - loss(x - e, ds, spec)) / (2.0 * h)
    return grad


def test_loss_at_zero_is_log_two():
    rng = generic_stream(7)
    ds = random_dataset(rng)
    assert loss(np.zeros(5), ds, SmoothSpec(0.3)) == pytest.approx(math.log(2.0), abs=1e-15)


def test_single_sample_formula():
    ds = WorkerDataset(features=np.array([[1.0, 0.0]]), labels=np.array([1.0]))
    for t in (-3.0, 0.0, 2.5, 40.0):
        x = np.array([t, 0.0])
        assert loss(x, ds, SmoothSpec(0.0)) == pytest.approx(np.logaddexp(0.0, -t), rel=1e-15)


def test_loss_matches_naive_recomputation():
    rng = generic_stream(8)
    spec = SmoothSpec(0.2)
    for _ in range(20):
        ds = random_dataset(rng, m=int(rng.integers(1, 30)), d=6)
        x = rng.normal(size=6) * 2.0
        assert loss(x, ds, spec) == pytest.approx(naive_loss(x, ds, spec), rel=1e-12)


def test_loss_stable_for_large_margins():
    ds = WorkerDataset(features=np.array([[1000.0]]), labels=np.array([-1.0]))
    val = loss(np.array([1.0]), ds, SmoothSpec(0.0))
    assert val == pytest.approx(1000.0, rel=1e-12)
    assert np.isfinite(full_gradient(np.array([1.0]), ds, SmoothSpec(0.0))).all()


def test_gradient_at_zero_closed_form():
    rng = generic_stream(9)
    ds = random_dataset(rng, m=15, d=4)
    expected = -(ds.features * ds.labels[:, None]).sum(axis=0) / (2.0 * ds.m)
    assert_allclose(full_gradient(np.zeros(4), ds, SmoothSpec(0.5)), expected, atol=1e-15)


def test_gradient_matches_central_differences():
    rng = generic_stream(10)
    spec = SmoothSpec(0.1)
    for _ in range(100):
        ds = random_dataset(rng, m=8, d=4)
        x = rng.normal(size=4) * 2.0
        num = central_difference_gradient(x, ds, spec)
        ana = full_gradient(x, ds, spec)
        assert np.linalg.norm(ana - num) <= 1e-5 * (1.0 + np.linalg.norm(num))


def test_zero_features_gradient_is_ridge_only():
    ds = WorkerDataset(features=np.zeros((3, 4)), labels=np.array([1.0, -1.0, 1.0]))
    x = np.array([1.0, -2.0, 0.5, 0.0])
    assert_allclose(full_gradient(x, ds, SmoothSpec(0.7)), 0.7 * x)


def test_minibatch_full_batch_equals_full_gradient():
    rng = generic_stream(11)
    ds = random_dataset(rng, m=9, d=3)
    x = rng.normal(size=3)
    spec = SmoothSpec(0.2)
    assert_allclose(
        minibatch_gradient(x, ds, spec, np.arange(9)), full_gradient(x, ds, spec), atol=1e-15
    )


def test_minibatch_unbiased_by_enumeration():
    # Mean over all size-2 subsets of m=5 equals the full gradient.
    rng = generic_stream(12)
    ds = random_dataset(rng, m=5, d=4)
    x = rng.normal(size=4)
    spec = SmoothSpec(0.3)
    subsets = list(itertools.combinations(range(5), 2))
    mean = np.mean(
        [minibatch_gradient(x, ds, spec, np.array(s)) for s in subsets], axis=0
    )
    assert np.abs(mean - full_gradient(x, ds, spec)).max() <= 1e-12


def test_single_sample_batch_formula():
    rng = generic_stream(13)
    ds = random_dataset(rng, m=6, d=3)
    x = rng.normal(size=3)
    spec = SmoothSpec(0.4)
    l = 2
    a, b = ds.features[l], ds.labels[l]
    sig = 1.0 / (1.0 + math.exp(b * float(a @ x)))
    expected = -b * sig * a + spec.l2_weight * x
    assert_allclose(minibatch_gradient(x, ds, spec, np.array([l])), expected, atol=1e-14)


def test_minibatch_errors():
    rng = generic_stream(14)
    ds = random_dataset(rng, m=5, d=3)
    spec = SmoothSpec(0.1)
    with pytest.raises(ValueError):
        minibatch_gradient(np.zeros(3), ds, spec, np.array([], dtype=int))
    with pytest.raises(ValueError):
        minibatch_gradient(np.zeros(3), ds, spec, np.array([5]))
    with pytest.raises(ValueError):
        minibatch_gradient(np.zeros(2), ds, spec, np.array([0]))


def test_sample_batch_full_and_determinism():
    assert_allclose(sample_batch(generic_stream(0), 7, 7), np.arange(7))
    a = sample_batch(generic_stream(21, 5), 100, 10)
    b = sample_batch(generic_stream(21, 5), 100, 10)
    assert_allclose(a, b)
    assert np.all(np.diff(a) > 0)
    with pytest.raises(ValueError):
        sample_batch(generic_stream(0), 5, 6)
    with pytest.raises(ValueError):
        sample_batch(generic_stream(0), 5, 0)


def test_sample_batch_inclusion_frequency():
    # Per-index inclusion should be b/m within 3 sigma over 10^5 draws.
    m, b, draws = 10, 3, 100_000
    rng = generic_stream(99)
    counts = np.zeros(m)
    for _ in range(draws):
        counts[sample_batch(rng, m, b)] += 1
    p = b / m
    sigma = math.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(counts / draws - p) <= 3.0 * sigma + 1e-12)


def test_constants_zero_features():
    ds = WorkerDataset(features=np.zeros((4, 3)), labels=np.ones(4))
    mu, L = constants([ds], SmoothSpec(0.6))
    assert (mu, L) == (0.6, 0.6)


def test_constants_identity_features():
    d = 6
    ds = WorkerDataset(features=np.eye(d), labels=np.ones(d))
    mu, L = constants([ds], SmoothSpec(0.2))
    assert mu == 0.2
    assert L == pytest.approx(0.2 + 1.0 / (4.0 * d), rel=1e-9)


def test_constants_bound_hessian_quadratic_forms():
    # Random-direction Hessian quadratic forms must stay below L.
    rng = generic_stream(15)
    ds = random_dataset(rng, m=20, d=5, scale=1.5)
    spec = SmoothSpec(0.1)
    mu, L = constants([ds], spec)
    for _ in range(50):
        x = rng.normal(size=5)
        v = rng.normal(size=5)
        v /= np.linalg.norm(v)
        t = ds.labels * (ds.features @ x)
        sig = 1.0 / (1.0 + np.exp(np.abs(t)))
        weights = sig * (1.0 - sig)  # logistic curvature, <= 1/4
        quad = float(weights @ (ds.features @ v) ** 2) / ds.m + spec.l2_weight
        assert quad <= L * (1.0 + 1e-9)


def test_strong_convexity_and_smoothness():
    rng = generic_stream(16)
    spec = SmoothSpec(0.3)
    ds = random_dataset(rng, m=15, d=4)
    mu, L = constants([ds], spec)
    for _ in range(50):
        x = rng.normal(size=4) * 2.0
        y = rng.normal(size=4) * 2.0
        gap = loss(y, ds, spec) - loss(x, ds, spec) - full_gradient(x, ds, spec) @ (y - x)
        assert gap >= 0.5 * mu * float((y - x) @ (y - x)) - 1e-12
        grad_gap = np.linalg.norm(full_gradient(x, ds, spec) - full_gradient(y, ds, spec))
        assert grad_gap <= L * np.linalg.norm(x - y) * (1.0 + 1e-9) + 1e-12


def test_csv_round_trip(tmp_path):
    rng = generic_stream(17)
    ds = random_dataset(rng, m=7, d=3)
    path = tmp_path / "worker_000.csv"
    save_worker_csv(ds, path)
    back = load_worker_csv(path, worker_id=0)
    assert_allclose(back.features, ds.features, atol=0, rtol=0)
    assert_allclose(back.labels, ds.labels, atol=0, rtol=0)


def test_csv_rejects_bad_labels(tmp_path):
    path = tmp_path / "worker_bad.csv"
    path.write_text("f0,f1,label\n1.0,2.0,0.5\n")
    with pytest.raises(ValueError):
        load_worker_csv(path)


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "worker_bad.csv"
    path.write_text("a,b,label\n1.0,2.0,1\n")
    with pytest.raises(ValueError):
        load_worker_csv(path)


def test_dataset_validation():
    with pytest.raises(ValueError):
        WorkerDataset(features=np.ones((2, 2)), labels=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        WorkerDataset(features=np.array([[np.inf, 0.0]]), labels=np.array([1.0]))
    with pytest.raises(ValueError):
        WorkerDataset(features=np.ones((2, 2)), labels=np.ones(3))
