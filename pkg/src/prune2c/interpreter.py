"""Reference float32 forward pass, dataset container, and quality metrics.

This evaluator is the numerical oracle for sensitivity analysis and for
checking emitted C code. All per-node math runs in float32 like the
generated code; metric reductions run in float64 in a fixed order so
results are reproducible bit-for-bit across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ir
from .errors import DatasetError, MetricError, PredictionShapeError, ShapeError
from .ir import Graph

DATASET_MAGIC = b"OPTCDS1\x00"

TASK_KINDS = ("regression", "classification", "anomaly")
_TASK_CODE = {name: i for i, name in enumerate(TASK_KINDS)}

METRIC_DIRECTIONS = {
    "auc": "higher_better",
    "error_rate": "lower_better",
    "mse": "lower_better",
}

# Which metric fits which task.
TASK_METRIC = {"anomaly": "auc", "classification": "error_rate", "regression": "mse"}


@dataclass(frozen=True)
class QualityMetric:
    kind: str
    value: float
    direction: str

    def __post_init__(self):
        if self.kind not in METRIC_DIRECTIONS:
            raise MetricError(f"unknown metric kind '{self.kind}'")
        if self.direction not in ("higher_better", "lower_better"):
            raise MetricError(f"unknown direction '{self.direction}'")


@dataclass(frozen=True)
class Dataset:
    """N sample rows, each a flat float32 input vector, with targets.

    Targets are float32 rows for regression, integer class labels for
    classification, and 0/1 anomaly labels for anomaly detection.
    """

    inputs: np.ndarray
    targets: np.ndarray
    task: str

    def __post_init__(self):
        if self.task not in TASK_KINDS:
            raise DatasetError(f"unknown task kind '{self.task}'")
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise DatasetError(f"inputs must be [N, input_len], got {inputs.shape}")
        object.__setattr__(self, "inputs", inputs)
        if self.task == "regression":
            targets = np.ascontiguousarray(self.targets, dtype=np.float32)
            if targets.ndim != 2 or targets.shape[0] != inputs.shape[0]:
                raise DatasetError("regression targets must be [N, target_len]")
        else:
            targets = np.ascontiguousarray(self.targets, dtype=np.uint32).reshape(-1)
            if targets.shape[0] != inputs.shape[0]:
                raise DatasetError("one label per sample required")
            if self.task == "anomaly" and not np.isin(targets, (0, 1)).all():
                raise DatasetError("anomaly labels must be 0 or 1")
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    target_len = d.targets.shape[1] if d.task == "regression" else 1
    header = DATASET_MAGIC + struct.pack(
        "<4I", d.n, d.inputs.shape[1], target_len, _TASK_CODE[d.task]
    )
    body = d.inputs.astype("<f4").tobytes()
    if d.task == "regression":
        body += d.targets.astype("<f4").tobytes()
    else:
        body += d.targets.astype("<u4").tobytes()
    path.write_bytes(header + body)


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 24 or buf[:8] != DATASET_MAGIC:
        raise DatasetError("not a dataset file (bad magic)")
    n, input_len, target_len, task_code = struct.unpack("<4I", buf[8:24])
    if task_code >= len(TASK_KINDS):
        raise DatasetError(f"unknown task code {task_code}")
    task = TASK_KINDS[task_code]
    if n < 1 or input_len < 1 or target_len < 1:
        raise DatasetError(f"bad header counts N={n} input_len={input_len} target_len={target_len}")
    off = 24
    need = 4 * n * input_len
    if len(buf) < off + need:
        raise DatasetError("truncated input section")
    inputs = np.frombuffer(buf[off:off + need], dtype="<f4").reshape(n, input_len)
    off += need
    if task == "regression":
        need = 4 * n * target_len
        if len(buf) < off + need:
            raise DatasetError("truncated target section")
        targets = np.frombuffer(buf[off:off + need], dtype="<f4").reshape(n, target_len)
    else:
        if target_len != 1:
            raise DatasetError("label tasks require target_len == 1")
        need = 4 * n
        if len(buf) < off + need:
            raise DatasetError("truncated label section")
        targets = np.frombuffer(buf[off:off + need], dtype="<u4")
    return Dataset(inputs=inputs.copy(), targets=targets.copy(), task=task)


def load_dataset(path: str | Path) -> Dataset:
    try:
        return dataset_from_bytes(Path(path).read_bytes())
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}")


def _apply_activation(x: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, np.float32(0.0))
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        with np.errstate(over="ignore"):
            return (np.float32(1.0) / (np.float32(1.0) + np.exp(-x))).astype(np.float32)
    raise MetricError(f"unknown activation '{name}'")


def _conv1d_batch(x: np.ndarray, node) -> np.ndarray:
    w = node.weights.array()
    out_ch, in_ch, k = w.shape
    stride = node.attr("stride", 1)
    pl = node.attr("pad_left", 0)
    pr = node.attr("pad_right", 0)
    if pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    y = np.einsum("nctk,ock->not", win, w, dtype=np.float32, casting="same_kind")
    if node.bias is not None:
        y = y + node.bias.array()[None, :, None]
    return y.astype(np.float32)


def _pool_batch(x: np.ndarray, node) -> np.ndarray:
    width = node.attr("width")
    stride = node.attr("stride", width)
    win = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)[:, :, ::stride, :]
    if node.op == ir.MAXPOOL1D:
        return win.max(axis=3)
    return win.mean(axis=3, dtype=np.float32)


def forward_batch(g: Graph, inputs: np.ndarray) -> np.ndarray:
    """Run the chain over a batch; `inputs` is [N, *input_shape] float32."""
    if g.shapes is None:
        raise ShapeError("graph must be shape-inferred before evaluation")
    x = np.ascontiguousarray(inputs, dtype=np.float32)
    if tuple(x.shape[1:]) != g.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {g.input_shape}")
    for node in g.nodes:
        op = node.op
        if op in (ir.FULLY_CONNECTED, ir.MATMUL):
            x = x @ node.weights.array().T
            if node.bias is not None:
                x = x + node.bias.array()
            x = x.astype(np.float32)
        elif op == ir.CONV1D:
            x = _conv1d_batch(x, node)
        elif op == ir.ADD:
            b = node.bias.array()
            x = (x + (b if x.ndim == 2 else b[None, :, None])).astype(np.float32)
        elif op in (ir.MAXPOOL1D, ir.AVGPOOL1D):
            x = _pool_batch(x, node)
        elif op == ir.FLATTEN:
            x = x.reshape(x.shape[0], -1)
        elif op == ir.PAD:
            pads = (node.attr("pad_left"), node.attr("pad_right"))
            spec = [(0, 0)] * (x.ndim - 1) + [pads]
            x = np.pad(x, spec)
        elif op == ir.RELU:
            x = _apply_activation(x, "relu")
        elif op == ir.TANH:
            x = _apply_activation(x, "tanh")
        elif op == ir.SIGMOID:
            x = _apply_activation(x, "sigmoid")
        elif op == ir.SOFTMAX:
            e = np.exp(x - x.max(axis=1, keepdims=True), dtype=np.float32)
            x = (e / e.sum(axis=1, keepdims=True)).astype(np.float32)
        else:  # pragma: no cover - validate_graph rejects these
            raise ShapeError(f"cannot interpret op '{op}'", node.id)
        if node.fused_activation is not None:
            x = _apply_activation(x, node.fused_activation)
    return x


def forward(g: Graph, x: np.ndarray) -> np.ndarray:
    """Single-sample forward pass. Pure and deterministic: repeated calls on
    the same graph and input return bit-identical output."""
    x = np.asarray(x, dtype=np.float32)
    if tuple(x.shape) != g.input_shape:
        raise ShapeError(f"input shape {tuple(x.shape)} does not match {g.input_shape}")
    return forward_batch(g, x[None])[0]


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve by the trapezoidal rule over distinct-score
    thresholds. Tied scores contribute half a pair, so the result equals the
    Mann-Whitney pair-counting statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(
            f"AUC undefined: need both classes, got {n_pos} positive / {n_neg} negative"
        )
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    auc = 0.0
    tp = fp = 0
    prev_tpr = prev_fpr = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += int(y[j] == 1)
            fp += int(y[j] == 0)
            j += 1
        tpr = tp / n_pos
        fpr = fp / n_neg
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        prev_tpr, prev_fpr = tpr, fpr
        i = j
    return auc


def anomaly_scores(g: Graph, d: Dataset) -> np.ndarray:
    """Per-sample reconstruction error (mean squared difference between the
    network output and its own input)."""
    recon = forward_batch(g, d.inputs.reshape(d.n, *g.input_shape))
    recon = recon.reshape(d.n, -1)
    if recon.shape[1] != d.inputs.shape[1]:
        raise PredictionShapeError(
            f"reconstruction length {recon.shape[1]} does not match input length "
            f"{d.inputs.shape[1]}"
        )
    diff = recon.astype(np.float64) - d.inputs.astype(np.float64)
    return (diff * diff).mean(axis=1)


def evaluate(g: Graph, d: Dataset, kind: str) -> QualityMetric:
    """Prediction quality of `g` on `d`.

    auc pairs with anomaly datasets, error_rate with classification, mse
    with regression. Neither the graph nor the dataset is mutated; dataset
    rows are processed in file order so the reduction is reproducible.
    """
    if kind not in METRIC_DIRECTIONS:
        raise MetricError(f"unknown metric kind '{kind}'")
    if TASK_METRIC[d.task] != kind:
        raise MetricError(f"metric '{kind}' incompatible with task '{d.task}'")
    if d.inputs.shape[1] != int(np.prod(g.input_shape, dtype=np.int64)):
        raise ShapeError(
            f"dataset rows have {d.inputs.shape[1]} values but the model input "
            f"shape {g.input_shape} needs {int(np.prod(g.input_shape))}"
        )

    if kind == "auc":
        value = roc_auc(anomaly_scores(g, d), d.targets)
    elif kind == "error_rate":
        preds = forward_batch(g, d.inputs.reshape(d.n, *g.input_shape))
        preds = preds.reshape(d.n, -1)
        wrong = 0
        for i in range(d.n):
            label = int(d.targets[i])
            pred = int(np.argmax(preds[i]))
            wrong += int(pred != label)
        value = wrong / d.n
    else:
        preds = forward_batch(g, d.inputs.reshape(d.n, *g.input_shape))
        preds = preds.reshape(d.n, -1)
        if preds.shape[1] != d.targets.shape[1]:
            raise PredictionShapeError(
                f"model outputs {preds.shape[1]} values but targets have "
                f"{d.targets.shape[1]}"
            )
        diff = preds.astype(np.float64) - d.targets.astype(np.float64)
        value = float((diff * diff).mean())

    return QualityMetric(kind=kind, value=float(value), direction=METRIC_DIRECTIONS[kind])
