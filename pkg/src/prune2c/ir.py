"""Network intermediate representation: a single-path chain of operator nodes.

Graphs are validated once and treated as immutable afterwards (weight
arrays are frozen), so they can be shared freely across threads; every
transform in this package builds a new graph instead of mutating one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GraphError, ShapeError, TopologyError, UnsupportedOpError

FULLY_CONNECTED = "FullyConnected"
CONV1D = "Conv1D"
MATMUL = "MatMul"
ADD = "Add"
RELU = "ReLU"
TANH = "Tanh"
SIGMOID = "Sigmoid"
MAXPOOL1D = "MaxPool1D"
AVGPOOL1D = "AvgPool1D"
FLATTEN = "Flatten"
PAD = "Pad"
SOFTMAX = "Softmax"

SUPPORTED_OPS = frozenset({
    FULLY_CONNECTED, CONV1D, MATMUL, ADD, RELU, TANH, SIGMOID,
    MAXPOOL1D, AVGPOOL1D, FLATTEN, PAD, SOFTMAX,
})

# Ops carrying a prunable weight tensor whose leading axis is the output
# neuron/filter axis.
TRAINABLE_OPS = frozenset({FULLY_CONNECTED, CONV1D, MATMUL})

# Activations that graph-opt may fold into a preceding trainable op.
# Softmax is deliberately not fusable.
FUSABLE_ACTIVATIONS = {RELU: "relu", TANH: "tanh", SIGMOID: "sigmoid"}

BYTES_PER_FLOAT = 4


@dataclass(frozen=True)
class Tensor:
    """Named constant tensor (weights or bias), float32, row-major."""

    name: str
    shape: tuple[int, ...]
    data: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 1 for d in self.shape):
            raise GraphError(f"tensor '{self.name}' has non-positive dim in {self.shape}")
        if self.data is not None:
            # Always copy: the tensor owns its buffer, so freezing it in
            # validate_graph cannot be bypassed through an outside alias.
            arr = np.array(self.data, dtype=np.float32, copy=True).reshape(-1)
            if arr.size != self.size:
                raise GraphError(
                    f"tensor '{self.name}': {arr.size} values but shape {self.shape} "
                    f"needs {self.size}"
                )
            object.__setattr__(self, "data", arr)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def array(self) -> np.ndarray:
        """Data reshaped to `shape`. Requires data to be present."""
        if self.data is None:
            raise GraphError(f"tensor '{self.name}' has no data")
        return self.data.reshape(self.shape)


@dataclass(frozen=True)
class Node:
    """One operator in the chain.

    `attrs` holds op-specific integers (stride, pad_left, pad_right, width).
    `fused_activation` is set by graph-opt when an adjacent activation node
    has been folded into this one; it never appears on non-trainable ops.
    """

    id: str
    op: str
    attrs: dict = field(default_factory=dict)
    weights: Tensor | None = None
    bias: Tensor | None = None
    fused_activation: str | None = None

    def attr(self, name: str, default: int | None = None) -> int:
        v = self.attrs.get(name, default)
        if v is None:
            raise GraphError(f"missing attribute '{name}'", self.id)
        return int(v)


@dataclass(frozen=True)
class Graph:
    """Linear chain of nodes. `shapes[i]` is the output shape of node i
    once `infer_shapes` has run; `shapes` is None on raw graphs."""

    input_shape: tuple[int, ...]
    nodes: tuple[Node, ...]
    shapes: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def output_shape(self) -> tuple[int, ...]:
        if self.shapes is None:
            raise ShapeError("shapes not inferred yet; call infer_shapes()")
        return self.shapes[-1]

    def in_shape_of(self, index: int) -> tuple[int, ...]:
        """Input shape of node `index` (the preceding edge)."""
        if index == 0:
            return self.input_shape
        if self.shapes is None:
            raise ShapeError("shapes not inferred yet; call infer_shapes()")
        return self.shapes[index - 1]

    def trainable_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.op in TRAINABLE_OPS]

    def trainable_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.op in TRAINABLE_OPS]

    def node_by_id(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GraphError(f"no node with id '{node_id}'")

    def output_widths(self) -> list[int]:
        """Output neuron/filter count M_i of each trainable layer, in chain order."""
        return [n.weights.shape[0] for n in self.trainable_nodes()]


@dataclass(frozen=True)
class CostReport:
    param_count: int
    param_bytes: int
    flops: int
    intermediate_bytes_naive: int
    rom_estimate_bytes: int
    ram_estimate_bytes: int

    def as_dict(self) -> dict:
        return {
            "param_count": self.param_count,
            "param_bytes": self.param_bytes,
            "flops": self.flops,
            "intermediate_bytes_naive": self.intermediate_bytes_naive,
            "rom_estimate_bytes": self.rom_estimate_bytes,
            "ram_estimate_bytes": self.ram_estimate_bytes,
        }


def _pool_out_len(length: int, window: int, stride: int, node_id: str) -> int:
    out = (length - window) // stride + 1
    if out < 1:
        raise ShapeError(
            f"window {window} stride {stride} on length {length} gives empty output",
            node_id,
        )
    return out


def _node_output_shape(node: Node, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    op = node.op

    if op in (FULLY_CONNECTED, MATMUL):
        if node.weights is None or len(node.weights.shape) != 2:
            raise ShapeError("needs a 2-D [out, in] weight tensor", node.id)
        out_n, in_n = node.weights.shape
        if len(in_shape) != 1:
            raise ShapeError(
                f"expects a 1-D input, got {in_shape} (missing Flatten?)", node.id
            )
        if in_shape[0] != in_n:
            raise ShapeError(
                f"weight expects {in_n} inputs but incoming edge has {in_shape[0]}",
                node.id,
            )
        return (out_n,)

    if op == CONV1D:
        if node.weights is None or len(node.weights.shape) != 3:
            raise ShapeError("needs a 3-D [out_ch, in_ch, k] weight tensor", node.id)
        out_ch, in_ch, k = node.weights.shape
        if len(in_shape) != 2:
            raise ShapeError(f"expects a [channels, length] input, got {in_shape}", node.id)
        if in_shape[0] != in_ch:
            raise ShapeError(
                f"weight expects {in_ch} input channels but incoming edge has {in_shape[0]}",
                node.id,
            )
        stride = node.attr("stride", 1)
        pl = node.attr("pad_left", 0)
        pr = node.attr("pad_right", 0)
        out_len = (in_shape[1] + pl + pr - k) // stride + 1
        if out_len < 1:
            raise ShapeError(
                f"kernel {k} stride {stride} pads ({pl},{pr}) on length {in_shape[1]} "
                "gives empty output",
                node.id,
            )
        return (out_ch, out_len)

    if op == ADD:
        if node.bias is None or len(node.bias.shape) != 1:
            raise ShapeError("needs a 1-D constant vector in 'bias'", node.id)
        n = node.bias.shape[0]
        if len(in_shape) == 1:
            if in_shape[0] != n:
                raise ShapeError(f"vector length {n} vs input {in_shape[0]}", node.id)
        elif len(in_shape) == 2:
            # Per-channel add, broadcast along the length axis.
            if in_shape[0] != n:
                raise ShapeError(f"vector length {n} vs {in_shape[0]} channels", node.id)
        else:
            raise ShapeError(f"unsupported input rank {len(in_shape)}", node.id)
        return in_shape

    if op in (MAXPOOL1D, AVGPOOL1D):
        if len(in_shape) != 2:
            raise ShapeError(f"expects a [channels, length] input, got {in_shape}", node.id)
        width = node.attr("width")
        stride = node.attr("stride", width)
        return (in_shape[0], _pool_out_len(in_shape[1], width, stride, node.id))

    if op == FLATTEN:
        return (int(np.prod(in_shape, dtype=np.int64)),)

    if op == PAD:
        pl = node.attr("pad_left")
        pr = node.attr("pad_right")
        if len(in_shape) == 1:
            return (in_shape[0] + pl + pr,)
        if len(in_shape) == 2:
            return (in_shape[0], in_shape[1] + pl + pr)
        raise ShapeError(f"unsupported input rank {len(in_shape)}", node.id)

    if op in (RELU, TANH, SIGMOID):
        return in_shape

    if op == SOFTMAX:
        if len(in_shape) != 1:
            raise ShapeError("expects a 1-D input", node.id)
        return in_shape

    raise UnsupportedOpError(f"unsupported op kind '{op}'", node.id)


def infer_shapes(g: Graph) -> Graph:
    """Annotate every edge with its concrete shape.

    Deterministic and total on valid graphs; raises ShapeError naming the
    first offending node otherwise.
    """
    shapes: list[tuple[int, ...]] = []
    cur = g.input_shape
    if any(d < 1 for d in cur):
        raise ShapeError(f"input shape {cur} has non-positive dims")
    for node in g.nodes:
        cur = _node_output_shape(node, cur)
        shapes.append(cur)
    return replace(g, shapes=tuple(shapes))


def _validate_node(node: Node) -> None:
    if node.op not in SUPPORTED_OPS:
        raise UnsupportedOpError(f"unsupported op kind '{node.op}'", node.id)
    if not node.id:
        raise TopologyError("node with empty id")

    for key, v in node.attrs.items():
        if key == "fused_activation":
            continue
        if not isinstance(v, (int, np.integer)):
            raise GraphError(f"attribute '{key}' must be an integer, got {v!r}", node.id)
        if key in ("pad_left", "pad_right"):
            if v < 0:
                raise GraphError(f"attribute '{key}' must be >= 0, got {v}", node.id)
        elif v < 1:
            raise GraphError(f"attribute '{key}' must be >= 1, got {v}", node.id)

    if node.fused_activation is not None:
        if node.op not in TRAINABLE_OPS:
            raise GraphError("fused activation on a non-trainable op", node.id)
        if node.fused_activation not in FUSABLE_ACTIVATIONS.values():
            raise GraphError(
                f"unknown fused activation '{node.fused_activation}'", node.id
            )

    if node.op in TRAINABLE_OPS:
        if node.weights is None or node.weights.data is None:
            raise GraphError("trainable op needs a weight tensor with data", node.id)
        if not np.isfinite(node.weights.data).all():
            raise GraphError("weight tensor contains non-finite values", node.id)
        out_n = node.weights.shape[0]
        if node.op == MATMUL and node.bias is not None:
            raise GraphError("MatMul carries no bias; use Add or FullyConnected", node.id)
        if node.bias is not None:
            if node.bias.data is None:
                raise GraphError("bias tensor lacks data", node.id)
            if node.bias.shape != (out_n,):
                raise ShapeError(
                    f"bias shape {node.bias.shape} does not match {out_n} outputs",
                    node.id,
                )
            if not np.isfinite(node.bias.data).all():
                raise GraphError("bias tensor contains non-finite values", node.id)
    elif node.op == ADD:
        if node.bias is None or node.bias.data is None:
            raise GraphError("Add needs its constant vector in 'bias'", node.id)
    else:
        if node.weights is not None or node.bias is not None:
            raise GraphError(f"op '{node.op}' cannot carry weights", node.id)


def validate_graph(g: Graph, require_trainable: bool = True) -> Graph:
    """Validate the chain, infer shapes, and freeze weight arrays.

    Returns the annotated graph. All downstream stages assume their input
    went through this function.
    """
    if not g.nodes:
        raise TopologyError("graph has no nodes")
    seen: set[str] = set()
    for node in g.nodes:
        if node.id in seen:
            raise TopologyError("duplicate node id (graph is not a linear chain)", node.id)
        seen.add(node.id)
        _validate_node(node)
    if require_trainable and not any(n.op in TRAINABLE_OPS for n in g.nodes):
        raise TopologyError("graph contains no trainable layers")
    g = infer_shapes(g)
    for node in g.nodes:
        for t in (node.weights, node.bias):
            if t is not None and t.data is not None:
                t.data.flags.writeable = False
    return g


def _node_flops(node: Node, in_shape: tuple[int, ...], out_shape: tuple[int, ...]) -> int:
    """Multiply-accumulates count double (one mul + one add); pooling,
    activations and softmax cost one op per output element; Flatten and Pad
    are pure data movement and cost nothing."""
    out_elems = int(np.prod(out_shape, dtype=np.int64))
    if node.op in (FULLY_CONNECTED, MATMUL):
        out_n, in_n = node.weights.shape
        f = 2 * out_n * in_n
    elif node.op == CONV1D:
        out_ch, in_ch, k = node.weights.shape
        f = 2 * out_ch * in_ch * k * out_shape[1]
    elif node.op == ADD:
        f = out_elems
    elif node.op in (RELU, TANH, SIGMOID, SOFTMAX, MAXPOOL1D, AVGPOOL1D):
        f = out_elems
    elif node.op in (FLATTEN, PAD):
        f = 0
    else:  # pragma: no cover - validate_graph rejects these
        raise UnsupportedOpError(f"cannot cost op '{node.op}'", node.id)
    if node.fused_activation is not None:
        f += out_elems
    return f


def peak_intermediate_bytes(g: Graph) -> int:
    """Peak bytes of simultaneously live intermediate tensors.

    On a linear chain at most two edge tensors are live at once (a node's
    input and its output); the graph input and final output are caller-owned
    and excluded.
    """
    n = len(g.nodes)
    sizes = [int(np.prod(g.shapes[i], dtype=np.int64)) * BYTES_PER_FLOAT
             for i in range(n - 1)]
    peak = 0
    for step in range(n):
        live = 0
        if 0 <= step - 1 < len(sizes):
            live += sizes[step - 1]
        if step < len(sizes):
            live += sizes[step]
        peak = max(peak, live)
    return peak


def count_cost(g: Graph) -> CostReport:
    """Parameter, FLOP and memory accounting for a shape-inferred graph."""
    if g.shapes is None:
        g = infer_shapes(g)
    params = 0
    flops = 0
    for i, node in enumerate(g.nodes):
        if node.weights is not None:
            params += node.weights.size
        if node.bias is not None:
            params += node.bias.size
        flops += _node_flops(node, g.in_shape_of(i), g.shapes[i])
    inter = sum(
        int(np.prod(g.shapes[i], dtype=np.int64)) * BYTES_PER_FLOAT
        for i in range(len(g.nodes) - 1)
    )
    io_bytes = (
        int(np.prod(g.input_shape, dtype=np.int64))
        + int(np.prod(g.output_shape, dtype=np.int64))
    ) * BYTES_PER_FLOAT
    return CostReport(
        param_count=params,
        param_bytes=BYTES_PER_FLOAT * params,
        flops=flops,
        intermediate_bytes_naive=inter,
        rom_estimate_bytes=BYTES_PER_FLOAT * params,
        ram_estimate_bytes=peak_intermediate_bytes(g) + io_bytes,
    )


def design_space_size(g: Graph, mode: str = "layer_wise") -> int:
    """Number of pruning configurations: max_i M_i under a single global
    rate, prod_i M_i with an independent rate per layer (exact big integer)."""
    widths = g.output_widths()
    if not widths:
        raise GraphError("graph contains no trainable layers")
    if mode == "global":
        return max(widths)
    if mode == "layer_wise":
        return math.prod(widths)
    raise ValueError(f"unknown design-space mode '{mode}'")
