"""Standalone C code emission for an optimized (possibly pruned) graph.

Each node becomes one parameterized loop nest; fused activations are
applied in the accumulation epilogue, so no buffer exists between a
trainable op and its activation. Weights become const float tables (the
ROM image), intermediates live in one static byte arena laid out by the
memory plan, and the only external dependency of the emitted sources is
the standard math library. Emission is deterministic: the same graph and
plan produce byte-identical sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ir
from .errors import CodegenError
from .ir import BYTES_PER_FLOAT, Graph
from .memplan import MemoryPlan

ENTRY_SIGNATURE = "int nn_inference(const float *input, float *output)"

SOURCE_FILES = ("nn.h", "nn.c", "weights.h", "weights.c")

# Rational approximation of tanh on [-8, 8]: x * P(x^2) / Q(x^2) with a
# clamp to +/-1 outside. Max abs error ~2.7e-6 in float32, well inside the
# 1e-4 budget; sigmoid is derived via the half-argument identity.
_TANH_P = (0.9999889642351922, 0.12167392275007043,
           0.002160331414196544, 3.4116431744611783e-06)
_TANH_Q = (1.0, 0.45497214523356855,
           0.020517564619483404, 0.00013001612928791777)
APPROX_CLAMP = 8.0
APPROX_MAX_ABS_ERROR = 1e-4


@dataclass
class EmittedProgram:
    """Generated sources plus the byte accounting behind the footprint
    estimates. `sources` maps file name to file text."""

    sources: dict
    input_len: int
    output_len: int
    weight_bytes: int
    arena_bytes: int
    op_kinds: tuple[str, ...]
    rom_allowance_per_op: dict = field(default_factory=dict)
    stack_allowance_bytes: int = 0
    rom_estimate_bytes: int = 0
    ram_estimate_bytes: int = 0

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in SOURCE_FILES:
            p = out_dir / name
            p.write_text(self.sources[name])
            written.append(p)
        return written


def estimate_footprint(p: EmittedProgram) -> tuple[int, int]:
    """(rom_bytes, ram_bytes) attributable to the model.

    ROM is the weight tables plus a per-op code-size allowance (default 0,
    so pure weight bytes); RAM is the arena plus caller input/output
    buffers plus a fixed stack allowance. Real binaries add framework and
    runtime overhead that cannot be derived from the model alone.
    """
    rom = p.weight_bytes
    for op in p.op_kinds:
        rom += int(p.rom_allowance_per_op.get(op, 0))
    ram = (
        p.arena_bytes
        + (p.input_len + p.output_len) * BYTES_PER_FLOAT
        + int(p.stack_allowance_bytes)
    )
    return rom, ram


def c_float(v: float) -> str:
    """Literal that round-trips the float32 value (9 significant digits)."""
    s = f"{float(np.float32(v)):.9g}"
    if not any(ch in s for ch in ".eE"):
        s += ".0"
    return s + "f"


def _poly_expr(coeffs: tuple[float, ...], var: str) -> str:
    # Horner form, emitted innermost-first.
    expr = c_float(coeffs[-1])
    for c in reversed(coeffs[:-1]):
        expr = f"({expr} * {var} + {c_float(c)})"
    return expr


def _activation_helpers(g: Graph, approx: bool) -> list[str]:
    used = set()
    for node in g.nodes:
        if node.op == ir.TANH or node.fused_activation == "tanh":
            used.add("tanh")
        if node.op == ir.SIGMOID or node.fused_activation == "sigmoid":
            used.add("sigmoid")
    if approx and "sigmoid" in used:
        used.add("tanh")  # sigmoid helper calls the tanh helper
    lines: list[str] = []
    if "tanh" in used:
        if approx:
            lines += [
                "static float nn_act_tanh(float x) {",
                f"    if (x >= {c_float(APPROX_CLAMP)}) {{",
                "        return 1.0f;",
                "    }",
                f"    if (x <= {c_float(-APPROX_CLAMP)}) {{",
                "        return -1.0f;",
                "    }",
                "    {",
                "        const float t = x * x;",
                f"        const float p = {_poly_expr(_TANH_P, 't')};",
                f"        const float q = {_poly_expr(_TANH_Q, 't')};",
                "        return x * (p / q);",
                "    }",
                "}",
                "",
            ]
        else:
            lines += [
                "static float nn_act_tanh(float x) {",
                "    return tanhf(x);",
                "}",
                "",
            ]
    if "sigmoid" in used:
        if approx:
            lines += [
                "static float nn_act_sigmoid(float x) {",
                "    return 0.5f * (1.0f + nn_act_tanh(0.5f * x));",
                "}",
                "",
            ]
        else:
            lines += [
                "static float nn_act_sigmoid(float x) {",
                "    return 1.0f / (1.0f + expf(-x));",
                "}",
                "",
            ]
    return lines


def _epilogue(expr: str, activation: str | None) -> str:
    if activation is None:
        return expr
    if activation == "relu":
        return f"fmaxf({expr}, 0.0f)"
    if activation == "tanh":
        return f"nn_act_tanh({expr})"
    if activation == "sigmoid":
        return f"nn_act_sigmoid({expr})"
    raise CodegenError(f"unknown fused activation '{activation}'")


def _numel(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape, dtype=np.int64))


class _Emitter:
    def __init__(self, g: Graph, plan: MemoryPlan, approx: bool):
        self.g = g
        self.plan = plan
        self.approx = approx
        self.weight_names: dict[int, str] = {}
        self.bias_names: dict[int, str] = {}
        for i, node in enumerate(g.nodes):
            if node.weights is not None:
                self.weight_names[i] = f"nn_w{i}"
            if node.bias is not None:
                self.bias_names[i] = f"nn_b{i}"

    def buf(self, edge: int) -> str:
        """C expression for the tensor on edge `edge` (output of node
        `edge`; -1 is the caller input)."""
        if edge == -1:
            return "input"
        if edge == len(self.g.nodes) - 1:
            return "output"
        return f"t{edge}"

    def emit_node(self, i: int) -> list[str]:
        node = self.g.nodes[i]
        src = self.buf(i - 1)
        dst = self.buf(i)
        in_shape = self.g.in_shape_of(i)
        out_shape = self.g.shapes[i]
        head = f"    /* {node.id}: {node.op}"
        if node.fused_activation:
            head += f" + {node.fused_activation}"
        head += f" {list(in_shape)} -> {list(out_shape)} */"
        body = getattr(self, f"_emit_{node.op.lower()}", None)
        if body is None:
            raise CodegenError(f"no emitter for op '{node.op}' (node '{node.id}')")
        return [head, "    {"] + body(i, node, src, dst, in_shape, out_shape) + ["    }"]

    def _emit_fullyconnected(self, i, node, src, dst, in_shape, out_shape):
        out_n, in_n = node.weights.shape
        acc0 = f"{self.bias_names[i]}[o]" if node.bias is not None else "0.0f"
        return [
            f"        for (int o = 0; o < {out_n}; ++o) {{",
            f"            float acc = {acc0};",
            f"            for (int i = 0; i < {in_n}; ++i) {{",
            f"                acc += {self.weight_names[i]}[o * {in_n} + i] * {src}[i];",
            "            }",
            f"            {dst}[o] = {_epilogue('acc', node.fused_activation)};",
            "        }",
        ]

    _emit_matmul = _emit_fullyconnected

    def _emit_conv1d(self, i, node, src, dst, in_shape, out_shape):
        out_ch, in_ch, k = node.weights.shape
        in_len = in_shape[1]
        out_len = out_shape[1]
        stride = node.attr("stride", 1)
        pl = node.attr("pad_left", 0)
        pr = node.attr("pad_right", 0)
        acc0 = f"{self.bias_names[i]}[oc]" if node.bias is not None else "0.0f"
        w = self.weight_names[i]
        lines = [
            f"        for (int oc = 0; oc < {out_ch}; ++oc) {{",
            f"            for (int t = 0; t < {out_len}; ++t) {{",
            f"                float acc = {acc0};",
            f"                for (int ic = 0; ic < {in_ch}; ++ic) {{",
            f"                    for (int k = 0; k < {k}; ++k) {{",
        ]
        if pl == 0 and pr == 0:
            lines += [
                f"                        acc += {w}[(oc * {in_ch} + ic) * {k} + k]"
                f" * {src}[ic * {in_len} + t * {stride} + k];",
            ]
        else:
            lines += [
                f"                        const int p = t * {stride} + k - {pl};",
                f"                        if (p >= 0 && p < {in_len}) {{",
                f"                            acc += {w}[(oc * {in_ch} + ic) * {k} + k]"
                f" * {src}[ic * {in_len} + p];",
                "                        }",
            ]
        lines += [
            "                    }",
            "                }",
            f"                {dst}[oc * {out_len} + t] = "
            f"{_epilogue('acc', node.fused_activation)};",
            "            }",
            "        }",
        ]
        return lines

    def _emit_add(self, i, node, src, dst, in_shape, out_shape):
        b = self.bias_names[i]
        if len(in_shape) == 1:
            n = in_shape[0]
            return [
                f"        for (int i = 0; i < {n}; ++i) {{",
                f"            {dst}[i] = {src}[i] + {b}[i];",
                "        }",
            ]
        ch, length = in_shape
        return [
            f"        for (int c = 0; c < {ch}; ++c) {{",
            f"            for (int t = 0; t < {length}; ++t) {{",
            f"                {dst}[c * {length} + t] = {src}[c * {length} + t] + {b}[c];",
            "            }",
            "        }",
        ]

    def _emit_pool(self, node, src, dst, in_shape, out_shape, is_max: bool):
        ch, in_len = in_shape
        out_len = out_shape[1]
        width = node.attr("width")
        stride = node.attr("stride", width)
        lines = [
            f"        for (int c = 0; c < {ch}; ++c) {{",
            f"            for (int t = 0; t < {out_len}; ++t) {{",
        ]
        if is_max:
            lines += [
                f"                float best = {src}[c * {in_len} + t * {stride}];",
                f"                for (int k = 1; k < {width}; ++k) {{",
                f"                    best = fmaxf(best, {src}[c * {in_len} + t * {stride} + k]);",
                "                }",
                f"                {dst}[c * {out_len} + t] = best;",
            ]
        else:
            lines += [
                "                float acc = 0.0f;",
                f"                for (int k = 0; k < {width}; ++k) {{",
                f"                    acc += {src}[c * {in_len} + t * {stride} + k];",
                "                }",
                f"                {dst}[c * {out_len} + t] = acc / {c_float(width)};",
            ]
        lines += [
            "            }",
            "        }",
        ]
        return lines

    def _emit_maxpool1d(self, i, node, src, dst, in_shape, out_shape):
        return self._emit_pool(node, src, dst, in_shape, out_shape, is_max=True)

    def _emit_avgpool1d(self, i, node, src, dst, in_shape, out_shape):
        return self._emit_pool(node, src, dst, in_shape, out_shape, is_max=False)

    def _emit_flatten(self, i, node, src, dst, in_shape, out_shape):
        # Row-major layout is already flat; a copy moves it into its slot.
        n = _numel(in_shape)
        return [
            f"        for (int i = 0; i < {n}; ++i) {{",
            f"            {dst}[i] = {src}[i];",
            "        }",
        ]

    def _emit_pad(self, i, node, src, dst, in_shape, out_shape):
        pl = node.attr("pad_left")
        ch, in_len = (1, in_shape[0]) if len(in_shape) == 1 else in_shape
        out_len = out_shape[-1]
        lines = [
            f"        for (int i = 0; i < {_numel(out_shape)}; ++i) {{",
            f"            {dst}[i] = 0.0f;",
            "        }",
            f"        for (int c = 0; c < {ch}; ++c) {{",
            f"            for (int t = 0; t < {in_len}; ++t) {{",
            f"                {dst}[c * {out_len} + {pl} + t] = {src}[c * {in_len} + t];",
            "            }",
            "        }",
        ]
        return lines

    def _emit_elementwise(self, expr_fn, src, dst, n):
        return [
            f"        for (int i = 0; i < {n}; ++i) {{",
            f"            {dst}[i] = {expr_fn(f'{src}[i]')};",
            "        }",
        ]

    def _emit_relu(self, i, node, src, dst, in_shape, out_shape):
        return self._emit_elementwise(
            lambda e: f"fmaxf({e}, 0.0f)", src, dst, _numel(in_shape))

    def _emit_tanh(self, i, node, src, dst, in_shape, out_shape):
        return self._emit_elementwise(
            lambda e: f"nn_act_tanh({e})", src, dst, _numel(in_shape))

    def _emit_sigmoid(self, i, node, src, dst, in_shape, out_shape):
        return self._emit_elementwise(
            lambda e: f"nn_act_sigmoid({e})", src, dst, _numel(in_shape))

    def _emit_softmax(self, i, node, src, dst, in_shape, out_shape):
        n = in_shape[0]
        return [
            f"        float maxv = {src}[0];",
            "        float sum = 0.0f;",
            f"        for (int i = 1; i < {n}; ++i) {{",
            f"            maxv = fmaxf(maxv, {src}[i]);",
            "        }",
            f"        for (int i = 0; i < {n}; ++i) {{",
            f"            const float e = expf({src}[i] - maxv);",
            f"            {dst}[i] = e;",
            "            sum += e;",
            "        }",
            f"        for (int i = 0; i < {n}; ++i) {{",
            f"            {dst}[i] /= sum;",
            "        }",
        ]


def _format_array(name: str, data: np.ndarray) -> list[str]:
    lines = [f"const float {name}[{data.size}] = {{"]
    vals = [c_float(v) for v in data.reshape(-1)]
    for start in range(0, len(vals), 8):
        lines.append("    " + ", ".join(vals[start:start + 8]) + ",")
    lines.append("};")
    return lines


def emit(
    g: Graph,
    plan: MemoryPlan,
    approx_activations: bool = False,
    rom_allowance_per_op: dict | None = None,
    stack_allowance_bytes: int = 0,
) -> EmittedProgram:
    """Generate nn.c/nn.h/weights.c/weights.h for a shape-inferred graph.

    The graph is normally optimized first (graph_opt.optimize), but any
    validated chain is emittable. `approx_activations` switches tanh and
    sigmoid from libm calls to a clamped rational approximation.
    """
    if g.shapes is None:
        raise CodegenError("graph must be shape-inferred before emission")
    if plan.n_steps != len(g.nodes):
        raise CodegenError(
            f"memory plan covers {plan.n_steps} steps but graph has {len(g.nodes)} nodes"
        )
    em = _Emitter(g, plan, approx_activations)
    input_len = _numel(g.input_shape)
    output_len = _numel(g.output_shape)
    arena_floats = plan.arena_total_bytes // BYTES_PER_FLOAT

    nn_h = [
        "/* Generated inference code. Do not edit. */",
        "#ifndef NN_H",
        "#define NN_H",
        "",
        "/* The scratch arena is static: at most one inference may run at a",
        " * time per process. The caller owns the input and output buffers. */",
        "",
        f"#define NN_INPUT_LEN {input_len}",
        f"#define NN_OUTPUT_LEN {output_len}",
        f"#define NN_ARENA_BYTES {plan.arena_total_bytes}",
        "",
        f"{ENTRY_SIGNATURE};",
        "",
        "#endif /* NN_H */",
        "",
    ]

    weights_h = [
        "/* Generated weight table declarations. Do not edit. */",
        "#ifndef NN_WEIGHTS_H",
        "#define NN_WEIGHTS_H",
        "",
    ]
    weights_c = [
        "/* Generated weight tables (ROM image). Do not edit. */",
        "#include \"weights.h\"",
        "",
    ]
    weight_bytes = 0
    any_table = False
    for i, node in enumerate(g.nodes):
        for t, name_map in ((node.weights, em.weight_names), (node.bias, em.bias_names)):
            if t is None:
                continue
            name = name_map[i]
            weights_h.append(f"extern const float {name}[{t.size}]; /* {node.id} */")
            weights_c.extend(_format_array(name, t.data))
            weights_c.append("")
            weight_bytes += t.size * BYTES_PER_FLOAT
            any_table = True
    if not any_table:
        # Keep the translation unit non-empty for pedantic compilers.
        weights_h.append("extern const int nn_no_weights;")
        weights_c.append("const int nn_no_weights = 0;")
        weights_c.append("")
    weights_h += ["", "#endif /* NN_WEIGHTS_H */", ""]

    nn_c = [
        "/* Generated inference code. Do not edit. */",
        "#include \"nn.h\"",
        "#include \"weights.h\"",
        "",
        "#include <math.h>",
        "",
    ]
    if arena_floats > 0:
        nn_c += [f"static float nn_arena[{arena_floats}];", ""]
    nn_c += _activation_helpers(g, approx_activations)
    nn_c.append(ENTRY_SIGNATURE + " {")
    for slot in plan.slots:
        idx = slot.lifetime[0]
        nn_c.append(
            f"    float *const t{idx} = nn_arena + {slot.arena_offset // BYTES_PER_FLOAT};"
        )
    nn_c += [
        "    if (input == 0 || output == 0) {",
        "        return 1;",
        "    }",
    ]
    for i in range(len(g.nodes)):
        nn_c.append("")
        nn_c.extend(em.emit_node(i))
    nn_c += [
        "",
        "    return 0;",
        "}",
        "",
    ]

    prog = EmittedProgram(
        sources={
            "nn.h": "\n".join(nn_h),
            "nn.c": "\n".join(nn_c),
            "weights.h": "\n".join(weights_h),
            "weights.c": "\n".join(weights_c),
        },
        input_len=input_len,
        output_len=output_len,
        weight_bytes=weight_bytes,
        arena_bytes=plan.arena_total_bytes,
        op_kinds=tuple(n.op for n in g.nodes),
        rom_allowance_per_op=dict(rom_allowance_per_op or {}),
        stack_allowance_bytes=stack_allowance_bytes,
    )
    prog.rom_estimate_bytes, prog.ram_estimate_bytes = estimate_footprint(prog)
    return prog
