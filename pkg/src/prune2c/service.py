"""HTTP service wrapping the core package for multi-client use.

Payloads are self-contained: the model travels as its JSON document plus a
base64 weight blob (the same bytes as model.json / weights.bin on disk),
datasets as the base64 of the binary dataset format. Exploration over the
service never measures host time (timings belong to the machine that will
be compared, so they are a CLI concern); records carry FLOPs as the time
proxy. Codegen returns the generated sources inline.
"""

from __future__ import annotations

import base64
import binascii
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .cemit import emit
from .errors import InputError, Prune2cError
from .exploration import (ConfigRecord, DEFAULT_PROBE_RATES, ExplorationConfig,
                      TargetSpec, explore, feasibility_report, pareto_front)
from .graph_opt import optimize
from .interpreter import TASK_METRIC, dataset_from_bytes, evaluate
from .ir import count_cost, design_space_size
from .memplan import plan_memory
from .model_io import graph_from_obj, graph_to_obj
from .pruning import (LayerSensitivity, gwp_variant, make_schedule,
                      prune_structural, sensitivity_analysis)

app = FastAPI(
    title="prune2c",
    version=__version__,
    description="Structural pruning, C code generation, and design-space "
                "exploration for small neural networks.",
)


class ModelPayload(BaseModel):
    model: dict = Field(description="model.json document")
    weights_b64: str = Field(default="", description="base64 of weights.bin")


class DatasetPayload(BaseModel):
    dataset_b64: str = Field(description="base64 of the binary dataset file")


def _decode_graph(payload: ModelPayload):
    try:
        blob = base64.b64decode(payload.weights_b64) if payload.weights_b64 else b""
    except (ValueError, binascii.Error) as e:
        raise HTTPException(status_code=400, detail=f"bad weights_b64: {e}")
    try:
        return graph_from_obj(payload.model, blob)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _decode_dataset(payload: DatasetPayload):
    try:
        return dataset_from_bytes(base64.b64decode(payload.dataset_b64))
    except (ValueError, binascii.Error, InputError) as e:
        raise HTTPException(status_code=400, detail=f"bad dataset: {e}")


def _encode_graph(g) -> ModelPayload:
    obj, blob = graph_to_obj(g)
    return ModelPayload(model=obj, weights_b64=base64.b64encode(blob).decode("ascii"))


class NodeInfo(BaseModel):
    id: str
    op: str
    output_shape: list[int]


class ValidateResponse(BaseModel):
    input_shape: list[int]
    output_shape: list[int]
    nodes: list[NodeInfo]
    trainable_layers: list[str]


class CostResponse(BaseModel):
    param_count: int
    param_bytes: int
    flops: int
    intermediate_bytes_naive: int
    rom_estimate_bytes: int
    ram_estimate_bytes: int
    design_space_global: int
    design_space_layer_wise: int


class SensitivityRequest(BaseModel):
    model: ModelPayload
    dataset: DatasetPayload
    probe_rates: Optional[list[float]] = None
    metric: Optional[str] = None
    direction: Optional[str] = None
    threshold: Optional[float] = None


class LayerSensitivityModel(BaseModel):
    layer_id: str
    s: float
    p_max: float
    probe_curve: list[list[Optional[float]]]


class SensitivityResponse(BaseModel):
    metric: str
    threshold: float
    layers: list[LayerSensitivityModel]


class PruneRequest(BaseModel):
    model: ModelPayload
    rates: Optional[list[float]] = None
    sensitivities: Optional[list[LayerSensitivityModel]] = None
    j: Optional[int] = None
    J: int = 10


class PruneResponse(BaseModel):
    model: ModelPayload
    m: dict[str, int]
    rates: dict[str, float]
    output_shape: list[int]


class CodegenRequest(BaseModel):
    model: ModelPayload
    approx_activations: bool = False
    skip_optimize: bool = False


class CodegenResponse(BaseModel):
    files: dict[str, str]
    rom_estimate_bytes: int
    ram_estimate_bytes: int
    arena_bytes: int


class RecordModel(BaseModel):
    j: int
    quality_kind: str
    quality: Optional[float]
    direction: str
    error: Optional[float]
    exec_time_us: Optional[float]
    rom_bytes: int
    ram_bytes: int
    flops: int
    params: int
    pareto: bool
    valid: bool
    note: str
    fits: dict[str, bool] = {}


class TargetModel(BaseModel):
    name: str
    rom_limit: Optional[int] = None
    ram_limit: Optional[int] = None


class ExploreRequest(BaseModel):
    model: ModelPayload
    dataset: DatasetPayload
    J: int = 10
    probe_rates: Optional[list[float]] = None
    metric: Optional[str] = None
    direction: Optional[str] = None
    threshold: Optional[float] = None
    seed: int = 0
    approx_activations: bool = False
    targets: list[TargetModel] = []


class ExploreResponse(BaseModel):
    records: list[RecordModel]
    sensitivity: SensitivityResponse


class ParetoRequest(BaseModel):
    records: list[RecordModel]


class FeasibilityRequest(BaseModel):
    records: list[RecordModel]
    targets: list[TargetModel]


class FeasibilityRow(BaseModel):
    j: int
    target: str
    fits: bool


def _record_to_model(r: ConfigRecord) -> RecordModel:
    d = r.as_dict()
    return RecordModel(**d)


def _record_from_model(m: RecordModel) -> ConfigRecord:
    return ConfigRecord(
        j=m.j, quality_kind=m.quality_kind, quality=m.quality,
        direction=m.direction, exec_time_us=m.exec_time_us,
        rom_bytes=m.rom_bytes, ram_bytes=m.ram_bytes, flops=m.flops,
        params=m.params, pareto=m.pareto, valid=m.valid, note=m.note,
        fits=dict(m.fits),
    )


def _sensitivity_response(metric: str, threshold: float, sens) -> SensitivityResponse:
    return SensitivityResponse(
        metric=metric,
        threshold=threshold,
        layers=[LayerSensitivityModel(**s.as_dict()) for s in sens],
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/model/validate", response_model=ValidateResponse)
def model_validate(payload: ModelPayload) -> ValidateResponse:
    g = _decode_graph(payload)
    return ValidateResponse(
        input_shape=list(g.input_shape),
        output_shape=list(g.output_shape),
        nodes=[
            NodeInfo(id=n.id, op=n.op, output_shape=list(g.shapes[i]))
            for i, n in enumerate(g.nodes)
        ],
        trainable_layers=[n.id for n in g.trainable_nodes()],
    )


@app.post("/model/cost", response_model=CostResponse)
def model_cost(payload: ModelPayload) -> CostResponse:
    g = _decode_graph(payload)
    report = count_cost(g)
    return CostResponse(
        **report.as_dict(),
        design_space_global=design_space_size(g, "global"),
        design_space_layer_wise=design_space_size(g, "layer_wise"),
    )


@app.post("/sensitivity", response_model=SensitivityResponse)
def sensitivity(req: SensitivityRequest) -> SensitivityResponse:
    g = _decode_graph(req.model)
    d = _decode_dataset(req.dataset)
    metric = req.metric or TASK_METRIC[d.task]
    rates = req.probe_rates or list(DEFAULT_PROBE_RATES)
    try:
        threshold = req.threshold if req.threshold is not None \
            else evaluate(g, d, metric).value
        sens = sensitivity_analysis(g, d, rates, threshold, metric, req.direction)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return _sensitivity_response(metric, threshold, sens)


@app.post("/prune", response_model=PruneResponse)
def prune(req: PruneRequest) -> PruneResponse:
    g = _decode_graph(req.model)
    try:
        if req.rates is not None:
            variant = prune_structural(g, req.rates)
        elif req.sensitivities is not None and req.j is not None:
            sens = [
                LayerSensitivity(
                    layer_id=s.layer_id, s=s.s, p_max=s.p_max,
                    probe_curve=tuple((p, q) for p, q in s.probe_curve),
                )
                for s in req.sensitivities
            ]
            variant = gwp_variant(g, make_schedule(g, sens, req.J), req.j)
        else:
            raise HTTPException(
                status_code=400,
                detail="give rates, or sensitivities together with j",
            )
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return PruneResponse(
        model=_encode_graph(variant.graph),
        m=dict(variant.m),
        rates=dict(variant.rates),
        output_shape=list(variant.graph.output_shape),
    )


@app.post("/optimize", response_model=ModelPayload)
def optimize_model(payload: ModelPayload) -> ModelPayload:
    return _encode_graph(optimize(_decode_graph(payload)))


@app.post("/codegen", response_model=CodegenResponse)
def codegen(req: CodegenRequest) -> CodegenResponse:
    g = _decode_graph(req.model)
    try:
        opt = g if req.skip_optimize else optimize(g)
        prog = emit(opt, plan_memory(opt), approx_activations=req.approx_activations)
    except Prune2cError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return CodegenResponse(
        files=prog.sources,
        rom_estimate_bytes=prog.rom_estimate_bytes,
        ram_estimate_bytes=prog.ram_estimate_bytes,
        arena_bytes=prog.arena_bytes,
    )


@app.post("/explore", response_model=ExploreResponse)
def explore_endpoint(req: ExploreRequest) -> ExploreResponse:
    g = _decode_graph(req.model)
    d = _decode_dataset(req.dataset)
    metric = req.metric or TASK_METRIC[d.task]
    cfg = ExplorationConfig(
        J=req.J,
        probe_rates=tuple(req.probe_rates) if req.probe_rates else DEFAULT_PROBE_RATES,
        threshold=req.threshold,
        metric=metric,
        direction=req.direction,
        seed=req.seed,
        approx_activations=req.approx_activations,
        targets=tuple(
            TargetSpec(name=t.name, rom_limit=t.rom_limit, ram_limit=t.ram_limit)
            for t in req.targets
        ),
    )
    try:
        records, sens, _ = explore(g, d, cfg)
        threshold = cfg.threshold if cfg.threshold is not None \
            else evaluate(g, d, metric).value
    except (InputError, Prune2cError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return ExploreResponse(
        records=[_record_to_model(r) for r in records],
        sensitivity=_sensitivity_response(metric, threshold, sens),
    )


@app.post("/pareto", response_model=list[RecordModel])
def pareto(req: ParetoRequest) -> list[RecordModel]:
    records = [_record_from_model(m) for m in req.records]
    try:
        pareto_front(records)
    except Prune2cError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return [_record_to_model(r) for r in records]


@app.post("/feasibility", response_model=list[FeasibilityRow])
def feasibility(req: FeasibilityRequest) -> list[FeasibilityRow]:
    records = [_record_from_model(m) for m in req.records]
    targets = [
        TargetSpec(name=t.name, rom_limit=t.rom_limit, ram_limit=t.ram_limit)
        for t in req.targets
    ]
    try:
        rows = feasibility_report(records, targets)
    except Prune2cError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return [FeasibilityRow(**row) for row in rows]
