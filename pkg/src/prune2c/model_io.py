"""Model file format: a JSON graph description plus a sibling weight blob.

`model.json` holds `input_shape`, the ordered node chain, and a `blobs`
manifest mapping blob names to byte offsets and shapes inside the sibling
`weights.bin`, which is the concatenation of all weight/bias tensors as
little-endian float32. Networks exported from other frameworks reach this
format through an external converter; this package never parses ONNX
protobufs itself.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .ir import Graph, Node, Tensor, validate_graph

WEIGHTS_FILENAME = "weights.bin"

_NODE_KEYS = {"id", "op", "attrs", "weights", "bias"}


def graph_to_obj(g: Graph) -> tuple[dict, bytes]:
    """Serialize to (model-json object, weight blob bytes)."""
    nodes_out = []
    manifest: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0

    def add_blob(name: str, t: Tensor) -> str:
        nonlocal offset
        raw = t.data.astype("<f4").tobytes()
        manifest[name] = {"offset": offset, "shape": list(t.shape)}
        chunks.append(raw)
        offset += len(raw)
        return name

    for node in g.nodes:
        entry: dict = {"id": node.id, "op": node.op}
        attrs = dict(node.attrs)
        if node.fused_activation is not None:
            attrs["fused_activation"] = node.fused_activation
        if attrs:
            entry["attrs"] = attrs
        if node.weights is not None:
            entry["weights"] = add_blob(f"{node.id}.w", node.weights)
        if node.bias is not None:
            entry["bias"] = add_blob(f"{node.id}.b", node.bias)
        nodes_out.append(entry)

    obj = {
        "input_shape": list(g.input_shape),
        "nodes": nodes_out,
        "blobs": manifest,
    }
    return obj, b"".join(chunks)


def graph_from_obj(obj: dict, blob: bytes, require_trainable: bool = True) -> Graph:
    """Build and validate a Graph from a model-json object and its blob."""
    if not isinstance(obj, dict):
        raise SchemaError("model document must be a JSON object")
    for key in ("input_shape", "nodes"):
        if key not in obj:
            raise SchemaError(f"model document missing '{key}'")
    manifest = obj.get("blobs", {})
    if not isinstance(manifest, dict):
        raise SchemaError("'blobs' must be an object")

    def read_blob(name: str, node_id: str) -> Tensor:
        if name not in manifest:
            raise SchemaError(f"references unknown blob '{name}'", node_id)
        meta = manifest[name]
        try:
            off = int(meta["offset"])
            shape = tuple(int(d) for d in meta["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed manifest entry for blob '{name}': {e}", node_id)
        count = int(np.prod(shape, dtype=np.int64))
        end = off + 4 * count
        if off < 0 or end > len(blob):
            raise SchemaError(
                f"blob '{name}' spans [{off}, {end}) outside the {len(blob)}-byte "
                "weight file",
                node_id,
            )
        data = np.frombuffer(blob[off:end], dtype="<f4").astype(np.float32)
        return Tensor(name=name, shape=shape, data=data)

    nodes = []
    for raw in obj["nodes"]:
        if not isinstance(raw, dict) or "id" not in raw or "op" not in raw:
            raise SchemaError(f"node entry must be an object with 'id' and 'op': {raw!r}")
        unknown = set(raw) - _NODE_KEYS
        if unknown:
            raise SchemaError(f"unknown node keys {sorted(unknown)}", raw["id"])
        attrs = dict(raw.get("attrs", {}))
        fused = attrs.pop("fused_activation", None)
        nodes.append(Node(
            id=str(raw["id"]),
            op=str(raw["op"]),
            attrs=attrs,
            weights=read_blob(raw["weights"], raw["id"]) if "weights" in raw else None,
            bias=read_blob(raw["bias"], raw["id"]) if "bias" in raw else None,
            fused_activation=fused,
        ))

    g = Graph(input_shape=tuple(obj["input_shape"]), nodes=tuple(nodes))
    return validate_graph(g, require_trainable=require_trainable)


def save_graph(g: Graph, model_path: str | Path) -> None:
    """Write `model.json` and its sibling weights.bin."""
    model_path = Path(model_path)
    obj, blob = graph_to_obj(g)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    model_path.write_text(json.dumps(obj, indent=2) + "\n")
    (model_path.parent / WEIGHTS_FILENAME).write_bytes(blob)


def load_graph(path: str | Path, require_trainable: bool = True) -> Graph:
    """Load and validate a model file; shapes are inferred on every edge."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read model file {path}: {e}")
    blob = b""
    weights_path = path.parent / WEIGHTS_FILENAME
    if weights_path.exists():
        blob = weights_path.read_bytes()
    elif obj.get("blobs"):
        raise SchemaError(f"model references blobs but {weights_path} does not exist")
    return graph_from_obj(obj, blob, require_trainable=require_trainable)
