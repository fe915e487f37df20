"""Structural pruning: ℓ¹ output ranking, per-layer sensitivity probing,
and the global weighted schedule that yields the J pruned variants.

A pruned graph stays a dense network: dropped output neurons/filters take
their bias entries with them, and the matching input columns/channels of
the next trainable layer downstream are removed as well, with index sets
carried unchanged through shape-preserving nodes and expanded positionally
through Flatten.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import ir
from .errors import PredictionShapeError, PruneError
from .interpreter import Dataset, evaluate
from .ir import Graph, Node, Tensor, validate_graph

# ceil(M * (1 - p)) with a guard against binary-float noise: decimal rates
# can make the product land an ulp above an exact integer, which plain ceil
# would round up.
_CEIL_EPS = 1e-9


def surviving_outputs(width: int, rate: float) -> int:
    """Outputs kept when pruning a `width`-output layer at `rate`.

    ceil keeps the result >= 1 for every rate < 1, so a layer never
    vanishes entirely.
    """
    if not 0.0 <= rate < 1.0:
        raise PruneError(f"pruning rate must be in [0, 1), got {rate}")
    return max(1, math.ceil(width * (1.0 - rate) - _CEIL_EPS))


@dataclass(frozen=True)
class LayerSensitivity:
    """Per-layer outcome of the sensitivity sweep. `probe_curve` records the
    (rate, quality) pairs actually evaluated; quality is None when a probe
    produced a structurally unusable model."""

    layer_id: str
    s: float
    p_max: float
    probe_curve: tuple[tuple[float, float | None], ...]

    def as_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "s": self.s,
            "p_max": self.p_max,
            "probe_curve": [[p, q] for p, q in self.probe_curve],
        }


@dataclass(frozen=True)
class PruneSchedule:
    """Layer-wise rate increments: layer i is pruned at rate p_init_i * j
    in iteration j of 0..J."""

    layer_ids: tuple[str, ...]
    p_init: dict
    widths: dict
    J: int

    def __post_init__(self):
        if self.J < 1:
            raise PruneError(f"J must be >= 1, got {self.J}")
        for lid in self.layer_ids:
            p = self.p_init[lid]
            if not 0.0 <= p * self.J < 1.0:
                raise PruneError(
                    f"layer '{lid}': p_init {p} * J {self.J} must stay below 1"
                )

    def rates_at(self, j: int) -> dict:
        if not 0 <= j <= self.J:
            raise PruneError(f"iteration j={j} outside 0..{self.J}")
        return {lid: self.p_init[lid] * j for lid in self.layer_ids}

    def as_dict(self) -> dict:
        return {
            "J": self.J,
            "layers": [
                {"layer_id": lid, "p_init": self.p_init[lid], "width": self.widths[lid]}
                for lid in self.layer_ids
            ],
        }


@dataclass(frozen=True)
class PrunedVariant:
    graph: Graph
    kept_indices: dict
    m: dict
    rates: dict
    j: int | None = None


def l1_rank(layer: Node) -> list[int]:
    """Output indices sorted by descending ℓ¹ norm of each weight row/filter
    (bias excluded); ties keep the lower index first."""
    if layer.op not in ir.TRAINABLE_OPS:
        raise PruneError(f"node '{layer.id}' ({layer.op}) is not a trainable layer")
    w = layer.weights.array()
    norms = np.abs(w.astype(np.float64)).sum(axis=tuple(range(1, w.ndim)))
    return [int(i) for i in np.argsort(-norms, kind="stable")]


def _normalize_rates(g: Graph, rates) -> dict:
    trainable = g.trainable_nodes()
    if isinstance(rates, dict):
        unknown = set(rates) - {n.id for n in trainable}
        if unknown:
            raise PruneError(f"rates given for unknown layers {sorted(unknown)}")
        full = {n.id: float(rates.get(n.id, 0.0)) for n in trainable}
    else:
        rates = list(rates)
        if len(rates) != len(trainable):
            raise PruneError(
                f"{len(rates)} rates for {len(trainable)} trainable layers"
            )
        full = {n.id: float(p) for n, p in zip(trainable, rates)}
    for lid, p in full.items():
        if not 0.0 <= p < 1.0:
            raise PruneError(f"layer '{lid}': rate {p} outside [0, 1)")
    return full


def _shrink_tensor(t: Tensor, axis: int, keep: list[int]) -> Tensor:
    arr = np.take(t.array(), keep, axis=axis)
    return Tensor(name=t.name, shape=arr.shape, data=arr.reshape(-1))


def prune_structural(g: Graph, rates) -> PrunedVariant:
    """Remove the lowest-ℓ¹ outputs of each trainable layer at its rate.

    `rates` is either a mapping layer-id -> rate or a sequence aligned with
    the trainable layers in chain order. Ranking uses the original weights
    of each layer, so the kept set of one layer does not depend on how its
    upstream neighbours were pruned. The returned graph is re-validated,
    with shapes inferred.
    """
    if g.shapes is None:
        g = validate_graph(g, require_trainable=True)
    full_rates = _normalize_rates(g, rates)

    kept: dict = {}
    m: dict = {}
    for node in g.trainable_nodes():
        width = node.weights.shape[0]
        m_i = surviving_outputs(width, full_rates[node.id])
        order = l1_rank(node)
        kept[node.id] = tuple(sorted(order[:m_i]))
        m[node.id] = m_i

    new_nodes: list[Node] = []
    # Index set pruned out of the CURRENT edge tensor, to be applied to the
    # next trainable layer's input axis. None means the edge is untouched.
    pending: list[int] | None = None
    pending_is_channels = False

    for i, node in enumerate(g.nodes):
        op = node.op
        if op in ir.TRAINABLE_OPS:
            weights = node.weights
            bias = node.bias
            if pending is not None:
                weights = _shrink_tensor(weights, 1, pending)
            keep_rows = list(kept[node.id])
            if len(keep_rows) < weights.shape[0]:
                weights = _shrink_tensor(weights, 0, keep_rows)
                if bias is not None:
                    bias = _shrink_tensor(bias, 0, keep_rows)
            new_nodes.append(replace(node, weights=weights, bias=bias))
            if len(keep_rows) < node.weights.shape[0]:
                pending = keep_rows
                pending_is_channels = node.op == ir.CONV1D
            else:
                pending = None
        elif op == ir.ADD:
            bias = node.bias
            if pending is not None:
                bias = _shrink_tensor(bias, 0, pending)
            new_nodes.append(replace(node, bias=bias))
        elif op == ir.FLATTEN:
            if pending is not None and pending_is_channels:
                length = g.in_shape_of(i)[1]
                pending = [c * length + t for c in pending for t in range(length)]
                pending_is_channels = False
            new_nodes.append(node)
        elif op == ir.PAD:
            if pending is not None and not pending_is_channels:
                # Padding a 1-D edge inserts positions, so positional index
                # sets would shift; nothing in the supported model family
                # puts a Pad between fully connected layers.
                raise PruneError(
                    f"cannot propagate pruned indices through 1-D Pad node '{node.id}'"
                )
            new_nodes.append(node)
        elif op in (ir.RELU, ir.TANH, ir.SIGMOID, ir.MAXPOOL1D, ir.AVGPOOL1D,
                    ir.SOFTMAX):
            # Shape of the channel axis is untouched; index set passes
            # through position-wise. Note Softmax renormalizes over the
            # surviving entries, so zeroed-vs-removed equivalence does not
            # extend across it, but the index correspondence does.
            new_nodes.append(node)
        else:  # pragma: no cover - validate_graph rejects these
            raise PruneError(f"cannot propagate through op '{op}'")

    pruned = validate_graph(
        Graph(input_shape=g.input_shape, nodes=tuple(new_nodes)),
        require_trainable=True,
    )
    return PrunedVariant(graph=pruned, kept_indices=kept, m=m, rates=full_rates)


def sensitivity_analysis(
    g: Graph,
    d: Dataset,
    probe_rates,
    threshold: float,
    metric: str,
    direction: str | None = None,
) -> list[LayerSensitivity]:
    """Probe each trainable layer independently over ascending rates.

    For layer i the other layers stay unpruned; the first rate whose quality
    crosses the threshold (worse than T in the metric's direction) becomes
    p_max, and s_i = 1 - p_max. Without a crossing, p_max = max(probe_rates).
    A probe whose pruned model can no longer produce metric-compatible
    output counts as a crossing. No retraining happens anywhere.

    Probes are independent by construction (each works on a private pruned
    copy), so they may run concurrently; results are returned in layer
    order regardless.
    """
    probe_rates = [float(p) for p in probe_rates]
    if not probe_rates:
        raise PruneError("probe rate sequence is empty")
    if any(not 0.0 <= p < 1.0 for p in probe_rates):
        raise PruneError(f"probe rates must lie in [0, 1): {probe_rates}")
    if sorted(probe_rates) != probe_rates or len(set(probe_rates)) != len(probe_rates):
        raise PruneError("probe rates must be strictly ascending")
    if not math.isfinite(threshold):
        raise PruneError(f"threshold must be finite, got {threshold}")
    direction = direction or _metric_direction(metric)

    results = []
    for node in g.trainable_nodes():
        curve: list[tuple[float, float | None]] = []
        p_max = probe_rates[-1]
        for p in probe_rates:
            variant = prune_structural(g, {node.id: p})
            try:
                quality: float | None = evaluate(variant.graph, d, metric).value
            except PredictionShapeError:
                quality = None
            curve.append((p, quality))
            if quality is None or _crossed(quality, threshold, direction):
                p_max = p
                break
        results.append(LayerSensitivity(
            layer_id=node.id,
            s=1.0 - p_max,
            p_max=p_max,
            probe_curve=tuple(curve),
        ))
    return results


def _metric_direction(metric: str) -> str:
    from .interpreter import METRIC_DIRECTIONS

    try:
        return METRIC_DIRECTIONS[metric]
    except KeyError:
        raise PruneError(f"unknown metric kind '{metric}'")


def _crossed(quality: float, threshold: float, direction: str) -> bool:
    if direction == "higher_better":
        return quality < threshold
    return quality > threshold


def make_schedule(g: Graph, sensitivities: list[LayerSensitivity], J: int) -> PruneSchedule:
    """Turn layer sensitivities into per-layer rate increments p_max / J.
    A layer with s = 1 gets increment 0 and stays unpruned at every step."""
    trainable = g.trainable_nodes()
    by_id = {s.layer_id: s for s in sensitivities}
    missing = [n.id for n in trainable if n.id not in by_id]
    if missing:
        raise PruneError(f"sensitivities missing for layers {missing}")
    p_init = {n.id: (1.0 - by_id[n.id].s) / J for n in trainable}
    widths = {n.id: n.weights.shape[0] for n in trainable}
    return PruneSchedule(
        layer_ids=tuple(n.id for n in trainable),
        p_init=p_init,
        widths=widths,
        J=J,
    )


def gwp_variant(g: Graph, sched: PruneSchedule, j: int) -> PrunedVariant:
    """Variant j of the global weighted schedule: every layer pruned at
    p_init_i * j. j = 0 reproduces the unpruned model."""
    rates = sched.rates_at(j)
    variant = prune_structural(g, rates)
    return replace(variant, j=j)
