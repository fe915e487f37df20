"""End-to-end design-space exploration.

Drives sensitivity analysis, the pruning schedule, the J+1 variants,
graph optimization, code generation, host compilation, timing and quality
measurement, and finally Pareto-front extraction over (error, execution
time, ROM). Host timing replaces on-target measurement; absolute numbers
are machine-specific, so only orderings and ratios are meaningful.
"""

from __future__ import annotations

import csv
import json
import platform
import statistics
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cemit import EmittedProgram, emit
from .errors import (CompileError, ExploreError, HarnessError, InputError,
                     MetricError)
from .graph_opt import optimize
from .harness import instantiate_harness
from .hostcc import CompiledModel, cc_command, compile_binary, write_and_compile_shared
from .interpreter import Dataset, evaluate, forward_batch
from .ir import Graph, count_cost
from .memplan import plan_memory
from .pruning import (LayerSensitivity, PruneSchedule, gwp_variant,
                      make_schedule, sensitivity_analysis)

DEFAULT_PROBE_RATES = tuple(round(0.1 * k, 10) for k in range(1, 10))

CONFORMANCE_REL_TOL = 1e-5
CONFORMANCE_ABS_TOL = 1e-6
# Approximated tanh/sigmoid legitimately deviate from libm by up to the
# approximation budget, amplified somewhat by later layers.
APPROX_CONFORMANCE_REL_TOL = 5e-3

# Host timing aims for at least this much wall time per timed repetition so
# clock granularity is amortized away.
MIN_REP_MICROS = 50_000
_ASSUMED_HOST_FLOPS_PER_US = 1000.0  # ~1 GFLOP/s, only a seed for autoscaling
_MAX_INNER_ITERS = 2_000_000


@dataclass(frozen=True)
class TargetSpec:
    """Deployment target memory budget; None means unlimited."""

    name: str
    rom_limit: int | None = None
    ram_limit: int | None = None

    def fits(self, rom_bytes: int, ram_bytes: int) -> bool:
        if self.rom_limit is not None and rom_bytes > self.rom_limit:
            return False
        if self.ram_limit is not None and ram_bytes > self.ram_limit:
            return False
        return True


@dataclass
class ExplorationConfig:
    J: int = 10
    probe_rates: tuple = DEFAULT_PROBE_RATES
    threshold: float | None = None  # None: use the unpruned model's quality
    metric: str = "auc"
    direction: str | None = None
    cc: str | None = None
    timing_reps: int = 5
    timing: bool = False
    verify_emitted: bool = False
    jobs: int = 1
    seed: int = 0
    approx_activations: bool = False
    targets: tuple = ()
    # External command run once per variant (e.g. a retraining script),
    # disabled by default. It receives the variant's model.json path and j
    # as arguments and may rewrite the model file in place; the rewritten
    # model is reloaded before measurement.
    variant_hook: str | None = None

    def __post_init__(self):
        if self.J < 1:
            raise ExploreError(f"J must be >= 1, got {self.J}")
        if self.timing_reps < 3:
            raise ExploreError(f"timing repetitions must be >= 3, got {self.timing_reps}")
        if self.jobs < 1:
            raise ExploreError(f"jobs must be >= 1, got {self.jobs}")

    def as_dict(self) -> dict:
        return {
            "J": self.J,
            "probe_rates": list(self.probe_rates),
            "threshold": self.threshold,
            "metric": self.metric,
            "direction": self.direction,
            "cc": self.cc,
            "timing_reps": self.timing_reps,
            "timing": self.timing,
            "verify_emitted": self.verify_emitted,
            "jobs": self.jobs,
            "seed": self.seed,
            "approx_activations": self.approx_activations,
            "variant_hook": self.variant_hook,
            "targets": [
                {"name": t.name, "rom_limit": t.rom_limit, "ram_limit": t.ram_limit}
                for t in self.targets
            ],
        }


@dataclass
class ConfigRecord:
    """One explored design point."""

    j: int
    quality_kind: str
    quality: float | None
    direction: str
    exec_time_us: float | None
    rom_bytes: int
    ram_bytes: int
    flops: int
    params: int
    pareto: bool = False
    valid: bool = True
    note: str = ""
    fits: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        """Lower-is-better error axis: 1 - value for higher-better metrics."""
        if self.quality is None:
            return float("inf")
        if self.direction == "higher_better":
            return 1.0 - self.quality
        return self.quality

    def time_objective(self) -> float:
        """Measured time when available, FLOPs as a stand-in otherwise."""
        return float(self.exec_time_us) if self.exec_time_us is not None else float(self.flops)

    def as_dict(self) -> dict:
        return {
            "j": self.j,
            "quality_kind": self.quality_kind,
            "quality": self.quality,
            "direction": self.direction,
            "error": None if self.quality is None else self.error,
            "exec_time_us": self.exec_time_us,
            "rom_bytes": self.rom_bytes,
            "ram_bytes": self.ram_bytes,
            "flops": self.flops,
            "params": self.params,
            "pareto": self.pareto,
            "valid": self.valid,
            "note": self.note,
            "fits": dict(self.fits),
        }


def _dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_front(records: list[ConfigRecord]) -> list[ConfigRecord]:
    """Flag non-dominated records, minimizing (error, time, ROM).

    A record is dominated iff another is no worse in all three objectives
    and strictly better in at least one; records identical in all
    objectives are mutually non-dominated and all flagged. Invalid records
    never receive the flag and never dominate. The result is independent of
    record order. Flags are set in place and the list is returned.
    """
    if not records:
        raise ExploreError("pareto_front needs at least one record")
    valid = [r for r in records if r.valid]
    keyed = sorted(valid, key=lambda r: (r.error, r.time_objective(), r.rom_bytes))
    front: list[tuple] = []
    flags: dict[int, bool] = {}
    for r in keyed:
        key = (r.error, r.time_objective(), r.rom_bytes)
        dominated = any(_dominates(f, key) for f in front)
        flags[id(r)] = not dominated
        if not dominated:
            front.append(key)
    for r in records:
        r.pareto = flags.get(id(r), False)
    return records


def feasibility_report(records: list[ConfigRecord], targets) -> list[dict]:
    """Per (record, target) memory fit: ROM and RAM both within budget.
    Also fills each record's `fits` map."""
    targets = list(targets)
    if not targets:
        raise ExploreError("feasibility_report needs at least one target")
    rows = []
    for r in records:
        for t in targets:
            ok = t.fits(r.rom_bytes, r.ram_bytes)
            r.fits[t.name] = ok
            rows.append({"j": r.j, "target": t.name, "fits": ok})
    return rows


def _seeded_inputs(g: Graph, seed: int, count: int = 10) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, *g.input_shape), dtype=np.float32)


def check_conformance(
    g: Graph, compiled: CompiledModel, seed: int, count: int = 10
) -> float:
    """Max relative deviation (with absolute floor) between the compiled
    program and the interpreter on seeded random inputs."""
    inputs = _seeded_inputs(g, seed, count)
    want = forward_batch(g, inputs).reshape(count, -1)
    worst = 0.0
    for i in range(count):
        got = compiled(inputs[i])
        denom = np.maximum(np.abs(want[i]), CONFORMANCE_ABS_TOL / CONFORMANCE_REL_TOL)
        worst = max(worst, float((np.abs(got - want[i]) / denom).max()))
    return worst


def _autoscale_inner_iters(flops: int) -> int:
    est_us = max(float(flops), 1.0) / _ASSUMED_HOST_FLOPS_PER_US
    inner = int(np.ceil(MIN_REP_MICROS / max(est_us, 1e-3)))
    return max(1, min(inner, _MAX_INNER_ITERS))


def measure_time_us(
    prog: EmittedProgram,
    work_dir: Path,
    cc: str | None,
    reps: int,
    flops: int,
    template_dir=None,
) -> float:
    """Median microseconds per inference from the bench harness.

    The inner iteration count is autoscaled so each timed repetition runs
    at least ~50 ms; if the estimate was off, the bench is rebuilt with a
    larger count (at most twice).
    """
    prog.write(work_dir)
    inner = _autoscale_inner_iters(flops)
    for _ in range(3):
        bench_src = instantiate_harness(
            "bench",
            {
                "INPUT_LEN": prog.input_len,
                "OUTPUT_LEN": prog.output_len,
                "REPS": reps,
                "INNER_ITERS": inner,
            },
            template_dir=template_dir,
        )
        (work_dir / "bench.c").write_text(bench_src)
        exe = compile_binary(work_dir, ["nn.c", "weights.c", "bench.c"], "bench", cc=cc)
        proc = subprocess.run([str(exe)], capture_output=True, text=True, cwd=work_dir)
        if proc.returncode != 0:
            raise CompileError(f"bench run failed: exit {proc.returncode}",
                               stderr=proc.stderr)
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != reps:
            raise ExploreError(
                f"bench printed {len(lines)} lines, expected {reps}: {proc.stdout!r}"
            )
        per_inference = [float(ln) for ln in lines]
        rep_elapsed_us = min(per_inference) * inner
        if rep_elapsed_us >= 0.4 * MIN_REP_MICROS or inner >= _MAX_INNER_ITERS:
            return float(statistics.median(per_inference))
        scale = MIN_REP_MICROS / max(rep_elapsed_us, 1.0)
        inner = max(inner + 1, min(int(inner * scale * 1.5), _MAX_INNER_ITERS))
    return float(statistics.median(per_inference))


def _run_variant_hook(command: str, graph: Graph, j: int, vdir: Path) -> Graph:
    """Save the variant, hand it to the external command, reload the
    (possibly rewritten) model. The hook gets the model path and j as its
    last two arguments."""
    import shlex

    from .model_io import load_graph, save_graph

    vdir.mkdir(parents=True, exist_ok=True)
    model_path = vdir / "model.json"
    save_graph(graph, model_path)
    argv = shlex.split(command) + [str(model_path), str(j)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExploreError(
            f"hook exited {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
        )
    return load_graph(model_path)


def explore(
    g: Graph,
    d: Dataset,
    cfg: ExplorationConfig,
    sensitivities: list[LayerSensitivity] | None = None,
    work_dir: str | Path | None = None,
) -> tuple[list[ConfigRecord], list[LayerSensitivity], PruneSchedule]:
    """Produce records for j = 0..J; j = 0 is the unpruned baseline.

    Quality always comes from the interpreter. With `verify_emitted`, each
    variant's compiled code is checked against the interpreter and flagged
    invalid on divergence; with `timing`, the bench harness measures the
    median of R runs. Compilation failures abort that j with a note and the
    exploration continues. Variant builds may run in parallel (`jobs`);
    timing runs are serialized to avoid contention skew, and the record
    list is assembled in j order regardless of completion order.
    """
    if g.shapes is None:
        raise ExploreError("graph must be validated before exploration")

    baseline = evaluate(g, d, cfg.metric)
    direction = cfg.direction or baseline.direction
    threshold = baseline.value if cfg.threshold is None else cfg.threshold

    if sensitivities is None:
        sensitivities = sensitivity_analysis(
            g, d, cfg.probe_rates, threshold, cfg.metric, direction
        )
    schedule = make_schedule(g, sensitivities, cfg.J)

    needs_workdir = cfg.verify_emitted or cfg.timing or cfg.variant_hook
    base = Path(work_dir) if work_dir else None
    if base is None and needs_workdir:
        base = Path(tempfile.mkdtemp(prefix="prune2c-"))
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)

    records: list[ConfigRecord] = []
    variants: list[Graph] = []
    programs: list[EmittedProgram] = []
    for j in range(cfg.J + 1):
        variant = gwp_variant(g, schedule, j)
        graph_j = variant.graph
        note = ""
        if cfg.variant_hook:
            try:
                graph_j = _run_variant_hook(cfg.variant_hook, graph_j, j,
                                            base / f"j{j}")
            except (ExploreError, InputError) as e:
                note = f"variant hook failed: {e}"
        cost = count_cost(graph_j)
        quality: float | None
        try:
            quality = evaluate(graph_j, d, cfg.metric).value
        except MetricError as e:
            quality = None
            note = (note + "; " if note else "") + f"quality not computable: {e}"
        opt = optimize(graph_j)
        plan = plan_memory(opt)
        prog = emit(opt, plan, approx_activations=cfg.approx_activations)
        records.append(ConfigRecord(
            j=j,
            quality_kind=cfg.metric,
            quality=quality,
            direction=direction,
            exec_time_us=None,
            rom_bytes=prog.rom_estimate_bytes,
            ram_bytes=prog.ram_estimate_bytes,
            flops=cost.flops,
            params=cost.param_count,
            valid=quality is not None and not note,
            note=note,
        ))
        variants.append(opt)
        programs.append(prog)

    if cfg.verify_emitted or cfg.timing:

        def build_and_verify(j: int):
            vdir = base / f"j{j}"
            vdir.mkdir(parents=True, exist_ok=True)
            try:
                lib = write_and_compile_shared(programs[j], vdir, cc=cfg.cc)
            except CompileError as e:
                records[j].valid = False
                records[j].note = (records[j].note + "; " if records[j].note else "") + \
                    f"host compilation failed: {e}"
                return
            if cfg.verify_emitted:
                compiled = CompiledModel(lib, programs[j].input_len, programs[j].output_len)
                dev = check_conformance(variants[j], compiled, cfg.seed)
                tol = APPROX_CONFORMANCE_REL_TOL if cfg.approx_activations \
                    else CONFORMANCE_REL_TOL
                if dev > tol:
                    records[j].valid = False
                    records[j].note = (records[j].note + "; " if records[j].note else "") + \
                        f"emitted code diverges from interpreter ({dev:.3e} rel)"

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            list(pool.map(build_and_verify, range(cfg.J + 1)))

        if cfg.timing:
            for j in range(cfg.J + 1):
                if "host compilation failed" in records[j].note:
                    continue
                try:
                    records[j].exec_time_us = measure_time_us(
                        programs[j], base / f"j{j}", cfg.cc, cfg.timing_reps,
                        records[j].flops,
                    )
                except (CompileError, HarnessError, ExploreError) as e:
                    records[j].valid = False
                    records[j].note = (records[j].note + "; " if records[j].note else "") + \
                        f"timing failed: {e}"

    pareto_front(records)
    if cfg.targets:
        feasibility_report(records, cfg.targets)
    return records, sensitivities, schedule


def write_report_csv(records: list[ConfigRecord], path: str | Path) -> None:
    """CSV report, one row per explored configuration."""
    path = Path(path)
    target_names: list[str] = []
    for r in records:
        for name in r.fits:
            if name not in target_names:
                target_names.append(name)
    cols = ["j", "quality", "error", "exec_time_us", "rom_bytes", "ram_bytes",
            "flops", "params", "pareto"]
    cols += [f"fits_{n}" for n in target_names]
    cols += ["valid", "note"]
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in records:
            row = [
                r.j,
                "" if r.quality is None else repr(r.quality),
                "" if r.quality is None else repr(r.error),
                "" if r.exec_time_us is None else repr(r.exec_time_us),
                r.rom_bytes, r.ram_bytes, r.flops, r.params,
                int(r.pareto),
            ]
            row += [int(r.fits[n]) for n in target_names]
            row += [int(r.valid), r.note]
            w.writerow(row)


def write_manifest(
    cfg: ExplorationConfig, path: str | Path, extra: dict | None = None
) -> None:
    """JSON run manifest: configuration, seed, and tool versions."""
    cc_version = ""
    try:
        cmd = cc_command(cfg.cc)
        proc = subprocess.run([cmd[0], "--version"], capture_output=True, text=True)
        cc_version = proc.stdout.splitlines()[0] if proc.stdout else ""
    except (OSError, IndexError):
        pass
    manifest = {
        "tool": {"name": "prune2c", "version": __version__},
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "cc_version": cc_version,
        "config": cfg.as_dict(),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def load_targets(path: str | Path) -> tuple[TargetSpec, ...]:
    """Targets file: JSON list of {name, rom_limit, ram_limit}."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read targets file {path}: {e}")
    if not isinstance(raw, list):
        raise InputError("targets file must hold a JSON list")
    targets = []
    for entry in raw:
        try:
            targets.append(TargetSpec(
                name=str(entry["name"]),
                rom_limit=entry.get("rom_limit"),
                ram_limit=entry.get("ram_limit"),
            ))
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed target entry {entry!r}: {e}")
    return tuple(targets)


def load_sensitivities(path: str | Path) -> list[LayerSensitivity]:
    """Read a sensitivity report produced by `sensitivity_report_json`."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read sensitivity file {path}: {e}")
    layers = raw["layers"] if isinstance(raw, dict) else raw
    out = []
    try:
        for entry in layers:
            out.append(LayerSensitivity(
                layer_id=entry["layer_id"],
                s=float(entry["s"]),
                p_max=float(entry["p_max"]),
                probe_curve=tuple(
                    (float(p), None if q is None else float(q))
                    for p, q in entry.get("probe_curve", [])
                ),
            ))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed sensitivity file {path}: {e}")
    return out


def sensitivity_report_json(sensitivities: list[LayerSensitivity]) -> dict:
    return {"layers": [s.as_dict() for s in sensitivities]}
