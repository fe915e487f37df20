import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import corpus
from prune2c import ir
from prune2c.errors import GraphError, ShapeError, TopologyError, UnsupportedOpError
from prune2c.ir import (Graph, Node, Tensor, count_cost, design_space_size,
                        infer_shapes, validate_graph)


def test_conv_shape_arithmetic(rng):
    g = corpus.build((10, 10), [corpus.conv_node(rng, "c0", 32, 10, 3)])
    assert g.shapes[0] == (32, 8)


def test_pool_and_flatten_shapes(rng):
    g = corpus.build((10, 10), [
        corpus.conv_node(rng, "c0", 32, 10, 3),
        Node(id="p0", op=ir.MAXPOOL1D, attrs={"width": 2, "stride": 2}),
        Node(id="f0", op=ir.FLATTEN),
    ])
    assert g.shapes[1] == (32, 4)
    assert g.shapes[2] == (128,)


def test_padded_conv_length(rng):
    g = corpus.build((4, 16), [corpus.conv_node(rng, "c0", 8, 4, 3,
                                                stride=2, pad_left=1, pad_right=1)])
    # floor((16 + 2 - 3) / 2) + 1
    assert g.shapes[0] == (8, 8)


def test_empty_pool_output_rejected(rng):
    with pytest.raises(ShapeError, match="p0"):
        corpus.build((4, 3), [
            corpus.conv_node(rng, "c0", 8, 4, 3),
            Node(id="p0", op=ir.MAXPOOL1D, attrs={"width": 2, "stride": 2}),
        ])


def test_channel_mismatch_names_node(rng):
    # weight says 10 input channels, the edge carries 16
    with pytest.raises(ShapeError, match="c0"):
        corpus.build((16, 10), [corpus.conv_node(rng, "c0", 32, 10, 3)])


def test_fc_needs_flat_input(rng):
    with pytest.raises(ShapeError, match="Flatten"):
        corpus.build((4, 8), [corpus.fc_node(rng, "fc0", 4, 32)])


def test_duplicate_ids_rejected(rng):
    n1 = corpus.fc_node(rng, "fc0", 4, 4)
    n2 = corpus.fc_node(rng, "fc0", 4, 4)
    with pytest.raises(TopologyError):
        validate_graph(Graph(input_shape=(4,), nodes=(n1, n2)))


def test_unknown_op_rejected():
    with pytest.raises(UnsupportedOpError):
        validate_graph(Graph(input_shape=(4,), nodes=(Node(id="x", op="LSTM"),)))


def test_no_trainable_layers_rejected():
    g = Graph(input_shape=(4,), nodes=(Node(id="r", op=ir.RELU),))
    with pytest.raises(TopologyError):
        validate_graph(g)
    # but allowed when explicitly relaxed (internal passthrough graphs)
    assert validate_graph(g, require_trainable=False).output_shape == (4,)


def test_bias_length_checked(rng):
    node = Node(
        id="fc0", op=ir.FULLY_CONNECTED,
        weights=Tensor("w", (4, 4), np.zeros(16, np.float32)),
        bias=Tensor("b", (3,), np.zeros(3, np.float32)),
    )
    with pytest.raises(ShapeError, match="fc0"):
        validate_graph(Graph(input_shape=(4,), nodes=(node,)))


def test_tensor_size_invariant():
    with pytest.raises(GraphError):
        Tensor("t", (2, 3), np.zeros(5, np.float32))
    with pytest.raises(GraphError):
        Tensor("t", (0, 3), np.zeros(0, np.float32))


def test_weights_frozen_after_validation(rng):
    g = corpus.build((4,), [corpus.fc_node(rng, "fc0", 4, 4)])
    with pytest.raises(ValueError):
        g.nodes[0].weights.data[0] = 1.0


def test_fc_cost_formula(rng):
    g = corpus.build((640,), [corpus.fc_node(rng, "fc0", 128, 640)])
    report = count_cost(g)
    assert report.param_count == 640 * 128 + 128 == 82048
    assert report.flops == 2 * 640 * 128 == 163840
    assert report.param_bytes == 4 * report.param_count


def test_biasless_fc_cost(rng):
    g = corpus.build((8,), [corpus.fc_node(rng, "fc0", 8, 8, bias=False)])
    assert count_cost(g).param_count == 64


def test_ae_param_bytes_near_paper_rom(rng):
    g = corpus.ae_shaped(rng)
    report = count_cost(g)
    # independent summation over the layer widths
    dims = (corpus.AE_INPUT_DIM,) + corpus.AE_WIDTHS
    expected = sum((dims[i] + 1) * dims[i + 1] for i in range(len(corpus.AE_WIDTHS)))
    assert report.param_count == expected
    assert abs(report.param_bytes - 1_100_000) / 1_100_000 < 0.10


def test_design_space_sizes(rng):
    g = corpus.ae_shaped(rng)
    layer_wise = design_space_size(g, "layer_wise")
    assert layer_wise == int(np.prod([int(w) for w in corpus.AE_WIDTHS], dtype=object))
    assert 10**20 <= layer_wise < 10**21
    assert design_space_size(g, "global") == 640


def test_design_space_single_layer(rng):
    g = corpus.build((8,), [corpus.fc_node(rng, "fc0", 8, 8)])
    assert design_space_size(g, "layer_wise") == 8
    assert design_space_size(g, "global") == 8


@settings(max_examples=50, deadline=None)
@given(widths=st.lists(st.integers(min_value=1, max_value=700), min_size=1, max_size=12))
def test_layer_wise_at_least_global(widths):
    rng = np.random.default_rng(0)
    nodes = []
    prev = 3
    for i, w in enumerate(widths):
        nodes.append(corpus.fc_node(rng, f"fc{i}", w, prev))
        prev = w
    g = corpus.build((3,), nodes)
    assert design_space_size(g, "layer_wise") >= design_space_size(g, "global")


def test_flops_strictly_decrease_with_width(rng):
    big = corpus.build((16,), [corpus.fc_node(rng, "fc0", 12, 16),
                               corpus.fc_node(rng, "fc1", 8, 12)])
    small = corpus.build((16,), [corpus.fc_node(rng, "fc0", 11, 16),
                                 corpus.fc_node(rng, "fc1", 8, 11)])
    assert count_cost(small).flops < count_cost(big).flops


def test_intermediate_and_ram_accounting(rng):
    g = corpus.build((640,), [
        corpus.fc_node(rng, "fc0", 128, 640),
        Node(id="r0", op=ir.RELU),
        corpus.fc_node(rng, "fc1", 32, 128),
    ])
    report = count_cost(g)
    assert report.intermediate_bytes_naive == (128 + 128) * 4
    # peak adjacent pair of intermediates plus the caller's buffers
    assert report.ram_estimate_bytes == (128 + 128) * 4 + (640 + 32) * 4


def test_infer_shapes_deterministic(rng):
    g = corpus.conv_classifier(rng)
    assert infer_shapes(g).shapes == infer_shapes(g).shapes == g.shapes
