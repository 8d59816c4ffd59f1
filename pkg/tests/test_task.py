import math

import numpy as np
import pytest

from awfl.task import (
    ClassificationTask,
    Dataset,
    MlpModel,
    MlpSpec,
    ShardPlan,
    TaskConfigError,
    evaluate,
    generate_synthetic,
    global_grad_norm_sq,
    local_train,
    nearest_centroid_accuracy,
    partition_non_iid,
)


def _fd_grad(spec, theta, X, y, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (spec.loss_grad(theta + e, X, y)[0] - spec.loss_grad(theta - e, X, y)[0]) / (2 * h)
    return g


def test_synthetic_is_reproducible_and_balanced():
    a = generate_synthetic(4, 6, 30, seed=3)
    b = generate_synthetic(4, 6, 30, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    assert np.bincount(a.labels).tolist() == [30] * 4
    c = generate_synthetic(4, 6, 30, seed=3, draw=1)
    assert not np.array_equal(a.features, c.features)


def test_synthetic_has_unit_within_class_spread():
    ds = generate_synthetic(3, 8, 4000, seed=0)
    for c in range(3):
        x = ds.features[ds.labels == c]
        assert np.var(x - x.mean(axis=0)) == pytest.approx(1.0, rel=0.03)


def test_well_separated_binary_is_linearly_separable():
    train = generate_synthetic(2, 5, 200, seed=1, separation=50.0)
    test = generate_synthetic(2, 5, 200, seed=1, separation=50.0, draw=1)
    spec = MlpSpec(5, 0, 2)
    theta = spec.init(0)
    rng = np.random.default_rng(0)
    theta = local_train(spec, theta, train.features, train.labels, 200, 0.1, 20, rng)
    assert evaluate(spec, theta, test)[1] == 1.0


def test_centroid_classifier_accuracy():
    train = generate_synthetic(10, 20, 500, seed=0, separation=3.0)
    test = generate_synthetic(10, 20, 100, seed=0, separation=3.0, draw=1)
    assert nearest_centroid_accuracy(train, test) >= 0.90


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)


@pytest.mark.parametrize("K, d", [(10, 5), (10, 1), (10, 10), (20, 5), (5, 2)])
def test_partition_audit(K, d):
    ds = generate_synthetic(10, 3, 100, seed=2)
    plan = partition_non_iid(ds, K, d, seed=4)
    plan.audit(ds)
    for k in range(1, K + 1):
        labels = set(ds.labels[plan.client_indices(k)].tolist())
        assert len(labels) == d


def test_partition_exhaustive_for_reference_setting():
    ds = generate_synthetic(10, 3, 50, seed=0)
    plan = partition_non_iid(ds, 10, 5, seed=0)
    used = {}
    for k, shard_ids in plan.assignment.items():
        for s in shard_ids:
            used.setdefault(plan.shard_labels[s], []).append(k)
    # every label block is cut into 5 shards and all of them are dealt out
    assert sorted(used) == list(range(10))
    assert all(len(v) == 5 and len(set(v)) == 5 for v in used.values())


def test_partition_rejects_bad_divisibility():
    ds = generate_synthetic(10, 3, 50, seed=0)
    with pytest.raises(TaskConfigError):
        partition_non_iid(ds, 7, 3, seed=0)
    with pytest.raises(TaskConfigError):
        partition_non_iid(ds, 10, 11, seed=0)
    with pytest.raises(TaskConfigError):
        partition_non_iid(generate_synthetic(10, 3, 7, seed=0), 10, 5, seed=0)


def test_shard_plan_round_trip(tmp_path):
    ds = generate_synthetic(4, 3, 20, seed=0)
    plan = partition_non_iid(ds, 4, 2, seed=1)
    again = ShardPlan.from_json(plan.to_json())
    assert again.assignment == plan.assignment
    for a, b in zip(plan.shards, again.shards):
        np.testing.assert_array_equal(a, b)
    ds.save(tmp_path / "ds.npz")
    back = Dataset.load(tmp_path / "ds.npz")
    np.testing.assert_array_equal(back.features, ds.features)
    assert back.n_classes == 4


@pytest.mark.parametrize("hidden", [0, 7])
def test_backprop_matches_finite_differences(hidden):
    rng = np.random.default_rng(hidden)
    spec = MlpSpec(4, hidden, 3)
    theta = rng.normal(0, 0.5, spec.parameter_count)
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, 6)
    _, g = spec.loss_grad(theta, X, y)
    fd = _fd_grad(spec, theta, X, y)
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_model_size_and_wrapper():
    spec = MlpSpec(20, 32, 10)
    assert spec.parameter_count == 20 * 32 + 32 + 32 * 10 + 10
    m = MlpModel.initial(spec, 0)
    assert m.size_bits == 32 * spec.parameter_count
    assert [w.shape for w in m.layers()] == spec.shapes
    with pytest.raises(ValueError):
        MlpModel(spec, np.full(spec.parameter_count, np.nan))
    with pytest.raises(ValueError):
        MlpModel(spec, np.zeros(3))


def test_init_is_bounded_by_fan_in():
    spec = MlpSpec(16, 9, 3)
    W1, b1, W2, b2 = spec.unpack(spec.init(5))
    assert np.abs(W1).max() <= 1 / 4 and np.abs(b1).max() <= 1 / 4
    assert np.abs(W2).max() <= 1 / 3 and np.abs(b2).max() <= 1 / 3


def test_local_train_noops():
    spec = MlpSpec(3, 4, 2)
    theta = spec.init(0)
    X = np.random.default_rng(0).normal(size=(5, 3))
    y = np.array([0, 1, 0, 1, 1])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(local_train(spec, theta, X, y, 0, 0.1, 2, rng), theta)
    np.testing.assert_array_equal(local_train(spec, theta, X, y, 5, 0.0, 2, rng), theta)


def test_single_sample_step_is_scaled_gradient():
    spec = MlpSpec(3, 5, 2)
    rng = np.random.default_rng(4)
    theta = rng.normal(0, 0.5, spec.parameter_count)
    X = rng.normal(size=(1, 3))
    y = np.array([1])
    new = local_train(spec, theta, X, y, 1, 0.01, 1, np.random.default_rng(0))
    fd = _fd_grad(spec, theta, X, y)
    step = theta - new
    assert np.linalg.norm(step - 0.01 * fd) <= 1e-4 * np.linalg.norm(0.01 * fd)


def test_local_train_reproducible():
    task = ClassificationTask.synthetic(10, per_class=50, test_per_class=10, seed=1)
    x0 = task.initial_params()
    np.testing.assert_array_equal(task.local_update(x0, 3, 7), task.local_update(x0, 3, 7))
    assert not np.array_equal(task.local_update(x0, 3, 7), task.local_update(x0, 3, 8))


def test_convex_mode_loss_does_not_increase():
    ds = generate_synthetic(3, 4, 40, seed=0)
    spec = MlpSpec(4, 0, 3)
    theta = spec.init(0)
    prev = evaluate(spec, theta, ds)[0]
    for i in range(20):
        theta = local_train(spec, theta, ds.features, ds.labels, 1, 0.01, len(ds),
                            np.random.default_rng(i))
        cur = evaluate(spec, theta, ds)[0]
        assert cur <= prev + 1e-12
        prev = cur


def test_uniform_output_loss_is_log_classes():
    ds = generate_synthetic(10, 4, 5, seed=0)
    spec = MlpSpec(4, 6, 10)
    loss, _ = evaluate(spec, np.zeros(spec.parameter_count), ds)
    assert loss == pytest.approx(math.log(10), rel=1e-14)


def test_memorised_single_point():
    spec = MlpSpec(2, 0, 3)
    theta = np.zeros(spec.parameter_count)
    theta[-3:] = [0.0, 5.0, 0.0]
    ds = Dataset(np.array([[0.3, -0.2]]), np.array([1]), 3)
    assert evaluate(spec, theta, ds)[1] == 1.0


def test_forward_matches_scalar_loops():
    rng = np.random.default_rng(2)
    spec = MlpSpec(3, 4, 2)
    theta = spec.init(9)
    ds = Dataset(rng.normal(size=(5, 3)), rng.integers(0, 2, 5), 2)
    W1, b1, W2, b2 = spec.unpack(theta)
    total, correct = 0.0, 0
    for x, y in zip(ds.features, ds.labels):
        h = [max(0.0, sum(x[i] * W1[i, j] for i in range(3)) + b1[j]) for j in range(4)]
        z = [sum(h[j] * W2[j, c] for j in range(4)) + b2[c] for c in range(2)]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[y]
        correct += int(z.index(max(z)) == y)
    loss, acc = evaluate(spec, theta, ds)
    assert loss == pytest.approx(total / 5, rel=1e-13)
    assert acc == correct / 5


def test_grad_norm_zero_at_optimum_and_scaling():
    # two symmetric points: the zero model is optimal for logistic regression
    spec = MlpSpec(1, 0, 2)
    ds = Dataset(np.array([[1.0], [-1.0], [1.0], [-1.0]]), np.array([0, 0, 1, 1]), 2)
    assert global_grad_norm_sq(spec, np.zeros(spec.parameter_count), ds) <= 1e-30
    rng = np.random.default_rng(0)
    theta = rng.normal(size=spec.parameter_count)
    base = global_grad_norm_sq(spec, theta, ds)
    w = np.full(4, 0.25)
    assert global_grad_norm_sq(spec, theta, ds, 3 * w) == pytest.approx(9 * base, rel=1e-12)


def test_grad_norm_matches_finite_differences():
    rng = np.random.default_rng(5)
    spec = MlpSpec(3, 4, 3)
    theta = rng.normal(0, 0.5, spec.parameter_count)
    ds = Dataset(rng.normal(size=(12, 3)), rng.integers(0, 3, 12), 3)
    fd = _fd_grad(spec, theta, ds.features, ds.labels)
    assert global_grad_norm_sq(spec, theta, ds) == pytest.approx(fd @ fd, rel=1e-3)
