"""Graph rewrite passes run before code generation.

Pass order is fixed: padding elision first (it can expose fusion
opportunities), then weight-multiply/bias-add consolidation, then
activation fusion. Every pass preserves forward semantics, is idempotent,
and never increases the node count. All passes are pure functions on
immutable graphs and safe to run concurrently on independent graphs.
"""

from __future__ import annotations

import logging
from dataclasses import replace

from . import ir
from .ir import Graph, Node, validate_graph

log = logging.getLogger(__name__)


def _rebuild(g: Graph, nodes: list[Node]) -> Graph:
    return validate_graph(
        Graph(input_shape=g.input_shape, nodes=tuple(nodes)),
        require_trainable=False,
    )


def elide_padding(g: Graph) -> Graph:
    """Fold explicit Pad nodes into a following Conv1D's pad attributes;
    zero-amount pads are deleted outright. A non-zero Pad not followed by a
    convolution is left in place with a warning."""
    nodes = list(g.nodes)
    out: list[Node] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        if node.op != ir.PAD:
            out.append(node)
            i += 1
            continue
        # Collect a run of consecutive pads so repeated application cannot
        # uncover new folds.
        pl = pr = 0
        j = i
        while j < len(nodes) and nodes[j].op == ir.PAD:
            pl += nodes[j].attr("pad_left")
            pr += nodes[j].attr("pad_right")
            j += 1
        if pl == 0 and pr == 0:
            i = j
            continue
        if j < len(nodes) and nodes[j].op == ir.CONV1D:
            conv = nodes[j]
            attrs = dict(conv.attrs)
            attrs["pad_left"] = attrs.get("pad_left", 0) + pl
            attrs["pad_right"] = attrs.get("pad_right", 0) + pr
            out.append(replace(conv, attrs=attrs))
            i = j + 1
        else:
            log.warning(
                "pad node '%s' is not followed by a convolution; leaving it in place",
                node.id,
            )
            out.extend(nodes[i:j])
            i = j
    return _rebuild(g, out)


def fuse_matmul_add(g: Graph) -> Graph:
    """Consolidate a weight multiply followed by a constant vector add into
    a single biased node: (MatMul, Add) becomes FullyConnected, and a
    bias-less FullyConnected or Conv1D followed by Add absorbs the vector
    as its bias. Non-matching nodes are left untouched."""
    nodes = list(g.nodes)
    out: list[Node] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        nxt = nodes[i + 1] if i + 1 < len(nodes) else None
        if (
            nxt is not None
            and nxt.op == ir.ADD
            and node.op in ir.TRAINABLE_OPS
            and node.bias is None
            and node.fused_activation is None
            and nxt.bias.shape == (node.weights.shape[0],)
        ):
            op = ir.FULLY_CONNECTED if node.op == ir.MATMUL else node.op
            out.append(replace(node, op=op, bias=nxt.bias))
            i += 2
            continue
        out.append(node)
        i += 1
    return _rebuild(g, out)


def fuse_activation(g: Graph) -> Graph:
    """Merge an activation node into the preceding trainable op, recorded as
    a fused-activation flag realized inside the emitted loop epilogue.
    Softmax is never fused."""
    nodes = list(g.nodes)
    out: list[Node] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        nxt = nodes[i + 1] if i + 1 < len(nodes) else None
        if (
            nxt is not None
            and node.op in ir.TRAINABLE_OPS
            and node.fused_activation is None
            and nxt.op in ir.FUSABLE_ACTIVATIONS
        ):
            out.append(replace(node, fused_activation=ir.FUSABLE_ACTIVATIONS[nxt.op]))
            i += 2
            continue
        out.append(node)
        i += 1
    return _rebuild(g, out)


def optimize(g: Graph) -> Graph:
    """All rewrite passes in their fixed order."""
    return fuse_activation(fuse_matmul_add(elide_padding(g)))
