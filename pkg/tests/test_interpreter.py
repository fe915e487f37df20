import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import corpus
from prune2c import ir
from prune2c.errors import DatasetError, MetricError, ShapeError
from prune2c.interpreter import (Dataset, anomaly_scores, dataset_from_bytes,
                                 evaluate, forward, forward_batch,
                                 load_dataset, roc_auc, save_dataset)
from prune2c.ir import Node, Tensor


def test_identity_relu_passthrough():
    g = corpus.build((4,), [
        corpus.identity_fc().nodes[0],
        Node(id="r", op=ir.RELU),
    ])
    x = np.array([0.5, 0.0, 2.0, 1.25], np.float32)
    assert np.array_equal(forward(g, x), x)


def test_box_filter_conv():
    w = np.ones((1, 1, 3), np.float32)
    g = corpus.build((1, 4), [Node(id="c", op=ir.CONV1D,
                                   weights=Tensor("w", (1, 1, 3), w.ravel()))])
    y = forward(g, np.ones((1, 4), np.float32))
    assert y.shape == (1, 2)
    assert np.allclose(y, [[3.0, 3.0]])


def test_mlp_against_independent_matmul(rng):
    g = corpus.build((16,), [
        corpus.fc_node(rng, "fc0", 24, 16),
        Node(id="r0", op=ir.RELU),
        corpus.fc_node(rng, "fc1", 12, 24),
        Node(id="t1", op=ir.TANH),
        corpus.fc_node(rng, "fc2", 5, 12),
    ])
    for _ in range(5):
        x = rng.standard_normal(16).astype(np.float32)
        # independent brute-force forward pass in float64
        h = x.astype(np.float64)
        for node in g.nodes:
            if node.op == ir.FULLY_CONNECTED:
                h = node.weights.array().astype(np.float64) @ h \
                    + node.bias.array().astype(np.float64)
            elif node.op == ir.RELU:
                h = np.maximum(h, 0.0)
            elif node.op == ir.TANH:
                h = np.tanh(h)
        assert np.abs(forward(g, x) - h).max() <= 1e-6


def test_forward_bit_deterministic(rng):
    g = corpus.conv_classifier(rng)
    x = rng.standard_normal((4, 32)).astype(np.float32)
    a = forward(g, x)
    b = forward(g, x)
    assert a.tobytes() == b.tobytes()


def test_forward_shape_mismatch(rng):
    g = corpus.identity_fc()
    with pytest.raises(ShapeError):
        forward(g, np.zeros(5, np.float32))


def test_sigmoid_extreme_inputs_stay_finite(rng):
    g = corpus.build((4,), [
        corpus.fc_node(rng, "fc0", 4, 4,
                       weight=np.eye(4, dtype=np.float32) * 200.0),
        Node(id="s", op=ir.SIGMOID),
    ])
    y = forward(g, np.array([-10, -1, 1, 10], np.float32))
    assert np.isfinite(y).all()
    assert y[0] == pytest.approx(0.0, abs=1e-6)
    assert y[3] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("task", ["regression", "classification", "anomaly"])
def test_dataset_round_trip(tmp_path, rng, task):
    n, input_len = 6, 10
    inputs = rng.standard_normal((n, input_len)).astype(np.float32)
    if task == "regression":
        targets = rng.standard_normal((n, 3)).astype(np.float32)
    elif task == "classification":
        targets = rng.integers(0, 5, size=n).astype(np.uint32)
    else:
        targets = np.array([0, 1] * 3, np.uint32)
    d = Dataset(inputs=inputs, targets=targets, task=task)
    save_dataset(d, tmp_path / "d.bin")
    loaded = load_dataset(tmp_path / "d.bin")
    assert loaded.task == task
    assert np.array_equal(loaded.inputs, inputs)
    assert np.array_equal(loaded.targets, targets)


def test_dataset_bad_magic():
    with pytest.raises(DatasetError, match="magic"):
        dataset_from_bytes(b"NOTADATA" + b"\x00" * 32)


def test_dataset_truncated(tmp_path, rng):
    d = Dataset(inputs=rng.standard_normal((4, 8)).astype(np.float32),
                targets=np.zeros((4, 2), np.float32), task="regression")
    save_dataset(d, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    with pytest.raises(DatasetError, match="truncated"):
        dataset_from_bytes(raw[:-8])


def test_auc_perfect_separation():
    scores = np.array([0.9, 0.8, 0.7, 0.2, 0.1])
    labels = np.array([1, 1, 1, 0, 0])
    assert roc_auc(scores, labels) == 1.0


def test_auc_degenerate_labels():
    with pytest.raises(MetricError, match="both classes"):
        roc_auc(np.array([1.0, 2.0]), np.array([1, 1]))


def _mann_whitney(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting_fixture(rng):
    scores = rng.standard_normal(20)
    scores[3] = scores[11]  # force a tie across classes
    labels = (rng.random(20) < 0.4).astype(np.int64)
    labels[3], labels[11] = 1, 0
    assert roc_auc(scores, labels) == pytest.approx(
        _mann_whitney(scores, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(min_value=-5, max_value=5),
                          st.booleans()),
                min_size=2, max_size=40))
def test_auc_matches_pair_counting_property(pairs):
    scores = np.array([float(s) for s, _ in pairs])
    labels = np.array([int(l) for _, l in pairs])
    if labels.min() == labels.max():
        return  # degenerate, covered elsewhere
    assert roc_auc(scores, labels) == pytest.approx(
        _mann_whitney(scores, labels), abs=1e-12)


def test_error_rate_one_in_ten(rng):
    g = corpus.identity_fc()
    inputs = np.zeros((10, 4), np.float32)
    hot = rng.integers(0, 4, size=10)
    inputs[np.arange(10), hot] = 1.0
    labels = hot.astype(np.uint32)
    labels[0] = (labels[0] + 1) % 4  # exactly one wrong label
    d = Dataset(inputs=inputs, targets=labels, task="classification")
    assert evaluate(g, d, "error_rate").value == pytest.approx(0.1)


def test_mse_zero_iff_exact(rng):
    g = corpus.identity_fc()
    inputs = rng.standard_normal((5, 4)).astype(np.float32)
    exact = Dataset(inputs=inputs, targets=forward_batch(g, inputs), task="regression")
    assert evaluate(g, exact, "mse").value == 0.0
    off = Dataset(inputs=inputs,
                  targets=forward_batch(g, inputs) + np.float32(1e-4),
                  task="regression")
    assert evaluate(g, off, "mse").value > 0.0


def test_evaluate_kind_task_compat(rng):
    g = corpus.identity_fc()
    d = Dataset(inputs=np.ones((4, 4), np.float32),
                targets=np.zeros(4, np.uint32), task="classification")
    with pytest.raises(MetricError):
        evaluate(g, d, "auc")


def test_anomaly_scores_are_reconstruction_mse(rng):
    g = corpus.mini_ae(rng)
    d = corpus.anomaly_dataset(rng, g, n=8)
    scores = anomaly_scores(g, d)
    recon = forward_batch(g, d.inputs)
    manual = ((recon.astype(np.float64) - d.inputs.astype(np.float64)) ** 2).mean(axis=1)
    assert np.allclose(scores, manual)


def test_evaluate_does_not_mutate(rng):
    g = corpus.mini_ae(rng)
    d = corpus.anomaly_dataset(rng, g, n=8)
    before = d.inputs.tobytes()
    evaluate(g, d, "auc")
    assert d.inputs.tobytes() == before
