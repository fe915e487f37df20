"""Command-line frontend. Each subcommand is a thin adapter over one module
operation chain and produces the same results as calling the library
directly with equal parameters.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .cemit import emit
from .errors import InputError, PipelineError
from .exploration import (ConfigRecord, DEFAULT_PROBE_RATES, ExplorationConfig,
                      explore, feasibility_report, load_sensitivities,
                      load_targets, pareto_front, sensitivity_report_json,
                      write_manifest, write_report_csv)
from .graph_opt import optimize
from .harness import instantiate_harness
from .interpreter import TASK_METRIC, evaluate, load_dataset
from .ir import count_cost, design_space_size
from .memplan import plan_memory
from .model_io import load_graph, save_graph
from .pruning import gwp_variant, make_schedule, prune_structural, sensitivity_analysis


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; this tool reserves 2 for
    # input validation, so remap usage errors to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit_json(payload, args) -> None:
    print(json.dumps(payload, indent=2))


def _parse_rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise InputError(f"cannot parse rate list '{text}'")


def _apply_config_file(args: argparse.Namespace) -> None:
    """A JSON config file may supply any flag; explicit flags win.

    Flags left at their parser default (None) are filled from the file.
    """
    if not getattr(args, "config", None):
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read config file {args.config}: {e}")
    if not isinstance(overrides, dict):
        raise InputError("config file must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)


def cmd_validate(args) -> int:
    g = load_graph(args.model)
    info = {
        "input_shape": list(g.input_shape),
        "nodes": [
            {"id": n.id, "op": n.op, "output_shape": list(g.shapes[i])}
            for i, n in enumerate(g.nodes)
        ],
        "output_shape": list(g.output_shape),
        "trainable_layers": [n.id for n in g.trainable_nodes()],
    }
    if args.json:
        _emit_json(info, args)
    else:
        print(f"model ok: {len(g.nodes)} nodes, "
              f"{len(info['trainable_layers'])} trainable layers")
        print(f"  input  {info['input_shape']}")
        for entry in info["nodes"]:
            print(f"  {entry['id']:<16} {entry['op']:<16} -> {entry['output_shape']}")
    return 0


def cmd_cost(args) -> int:
    g = load_graph(args.model)
    report = count_cost(g)
    payload = report.as_dict()
    payload["design_space_global"] = design_space_size(g, "global")
    payload["design_space_layer_wise"] = design_space_size(g, "layer_wise")
    if args.json:
        _emit_json(payload, args)
    else:
        for key, value in payload.items():
            print(f"{key:>28}: {value}")
    return 0


def cmd_sensitivity(args) -> int:
    g = load_graph(args.model)
    d = load_dataset(args.dataset)
    metric = args.metric or TASK_METRIC[d.task]
    rates = _parse_rates(args.rates) if args.rates else list(DEFAULT_PROBE_RATES)
    if args.threshold is None or args.threshold == "baseline":
        threshold = evaluate(g, d, metric).value
    else:
        threshold = float(args.threshold)
    sens = sensitivity_analysis(g, d, rates, threshold, metric, args.direction)
    payload = sensitivity_report_json(sens)
    payload["metric"] = metric
    payload["threshold"] = threshold
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sensitivity.json").write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {out / 'sensitivity.json'}")
    if args.json or not args.out_dir:
        _emit_json(payload, args)
    return 0


def cmd_prune(args) -> int:
    g = load_graph(args.model)
    J = args.J if args.J is not None else 10
    if args.rates and args.sensitivities:
        raise InputError("give either --rates or --sensitivities, not both")
    if args.rates:
        variant = prune_structural(g, _parse_rates(args.rates))
    elif args.sensitivities:
        if args.j is None:
            raise InputError("--sensitivities requires --j")
        sched = make_schedule(g, load_sensitivities(args.sensitivities), J)
        variant = gwp_variant(g, sched, args.j)
    else:
        raise InputError("give --rates or --sensitivities")
    summary = {
        "m": dict(variant.m),
        "rates": dict(variant.rates),
        "output_shape": list(variant.graph.output_shape),
    }
    if args.out_dir:
        out = Path(args.out_dir)
        save_graph(variant.graph, out / "model.json")
        print(f"wrote {out / 'model.json'}")
    if args.json or not args.out_dir:
        _emit_json(summary, args)
    return 0


def cmd_optimize(args) -> int:
    g = load_graph(args.model)
    opt = optimize(g)
    if args.out_dir:
        out = Path(args.out_dir)
        save_graph(opt, out / "model.json")
        print(f"wrote {out / 'model.json'} ({len(g.nodes)} -> {len(opt.nodes)} nodes)")
    if args.json or not args.out_dir:
        _emit_json({
            "nodes_before": len(g.nodes),
            "nodes_after": len(opt.nodes),
            "ops": [n.op for n in opt.nodes],
        }, args)
    return 0


def cmd_codegen(args) -> int:
    g = load_graph(args.model)
    opt = optimize(g) if not args.no_optimize else g
    plan = plan_memory(opt)
    prog = emit(opt, plan, approx_activations=bool(args.approx_activations))
    out = Path(args.out_dir or ".")
    prog.write(out)
    if args.bench_reps:
        bench = instantiate_harness("bench", {
            "INPUT_LEN": prog.input_len,
            "OUTPUT_LEN": prog.output_len,
            "REPS": args.bench_reps,
            "INNER_ITERS": args.bench_inner_iters or 1000,
        })
        (out / "bench.c").write_text(bench)
    if args.conform:
        conform = instantiate_harness("conform", {
            "INPUT_LEN": prog.input_len,
            "OUTPUT_LEN": prog.output_len,
        })
        (out / "conform.c").write_text(conform)
    payload = {
        "files": sorted(p.name for p in out.iterdir() if p.suffix in (".c", ".h")),
        "rom_estimate_bytes": prog.rom_estimate_bytes,
        "ram_estimate_bytes": prog.ram_estimate_bytes,
        "arena_bytes": prog.arena_bytes,
    }
    if args.json:
        _emit_json(payload, args)
    else:
        print(f"wrote {', '.join(payload['files'])} to {out}")
        print(f"rom estimate: {prog.rom_estimate_bytes} bytes, "
              f"ram estimate: {prog.ram_estimate_bytes} bytes "
              f"(arena {prog.arena_bytes})")
    return 0


def _records_payload(records: list[ConfigRecord]) -> list[dict]:
    return [r.as_dict() for r in records]


def cmd_explore(args) -> int:
    g = load_graph(args.model)
    d = load_dataset(args.dataset)
    metric = args.metric or TASK_METRIC[d.task]
    cfg = ExplorationConfig(
        J=args.J if args.J is not None else 10,
        probe_rates=tuple(_parse_rates(args.rates)) if args.rates else DEFAULT_PROBE_RATES,
        threshold=None if args.threshold in (None, "baseline") else float(args.threshold),
        metric=metric,
        direction=args.direction,
        cc=args.cc,
        timing_reps=args.reps if args.reps is not None else 5,
        timing=bool(args.timing),
        verify_emitted=bool(args.verify),
        jobs=args.jobs if args.jobs is not None else 1,
        seed=args.seed or 0,
        approx_activations=bool(args.approx_activations),
        targets=load_targets(args.targets) if args.targets else (),
        variant_hook=args.variant_hook,
    )
    sens = load_sensitivities(args.sensitivities) if args.sensitivities else None
    records, sens, schedule = explore(g, d, cfg, sensitivities=sens)

    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(records, out / "report.csv")
        (out / "records.json").write_text(
            json.dumps(_records_payload(records), indent=2) + "\n")
        (out / "sensitivity.json").write_text(
            json.dumps(sensitivity_report_json(sens), indent=2) + "\n")
        write_manifest(cfg, out / "manifest.json",
                       extra={"schedule": schedule.as_dict()})
        print(f"wrote report.csv, records.json, sensitivity.json, manifest.json to {out}")
    if args.json or not args.out_dir:
        _emit_json(_records_payload(records), args)
    if not args.json:
        pareto = [r.j for r in records if r.pareto]
        print(f"{len(records)} configurations explored; pareto-optimal j: {pareto}")
    return 0


def cmd_report(args) -> int:
    try:
        raw = json.loads(Path(args.records).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read records file {args.records}: {e}")
    records = []
    try:
        for entry in raw:
            records.append(ConfigRecord(
                j=int(entry["j"]),
                quality_kind=entry.get("quality_kind", "mse"),
                quality=entry.get("quality"),
                direction=entry.get("direction", "lower_better"),
                exec_time_us=entry.get("exec_time_us"),
                rom_bytes=int(entry["rom_bytes"]),
                ram_bytes=int(entry["ram_bytes"]),
                flops=int(entry["flops"]),
                params=int(entry["params"]),
                valid=bool(entry.get("valid", True)),
                note=entry.get("note", ""),
            ))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed records file: {e}")
    pareto_front(records)
    rows = None
    if args.targets:
        rows = feasibility_report(records, load_targets(args.targets))
    if args.json:
        payload = {"records": _records_payload(records)}
        if rows is not None:
            payload["feasibility"] = rows
        _emit_json(payload, args)
    else:
        print(" j     error  exec_time_us    rom_bytes    ram_bytes  pareto")
        for r in records:
            err = "-" if r.quality is None else f"{r.error:.6f}"
            t = "-" if r.exec_time_us is None else f"{r.exec_time_us:.2f}"
            print(f"{r.j:>2} {err:>9} {t:>13} {r.rom_bytes:>12} {r.ram_bytes:>12}"
                  f"  {'*' if r.pareto else ''}")
        if rows is not None:
            for row in rows:
                print(f"  j={row['j']:<3} {row['target']:<12} "
                      f"{'fits' if row['fits'] else 'does not fit'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_common(p: argparse.ArgumentParser, dataset: bool = False) -> None:
    p.add_argument("--model", required=False, help="model.json path")
    if dataset:
        p.add_argument("--dataset", required=False, help="dataset file path")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    p.add_argument("--config", default=None,
                   help="JSON file supplying any flag; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prune2c", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="validate a model file and print shapes")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cost", help="parameter/FLOP/memory accounting")
    _add_common(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sensitivity", help="per-layer pruning sensitivity sweep")
    _add_common(p, dataset=True)
    p.add_argument("--rates", default=None, help="comma-separated probe rates")
    p.add_argument("--metric", choices=["auc", "error_rate", "mse"], default=None)
    p.add_argument("--direction", choices=["higher_better", "lower_better"], default=None)
    p.add_argument("--threshold", default=None,
                   help="quality threshold; 'baseline' (default) uses the unpruned model")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("prune", help="structurally prune a model")
    _add_common(p)
    p.add_argument("--rates", default=None, help="comma-separated per-layer rates")
    p.add_argument("--sensitivities", default=None, help="sensitivity.json path")
    p.add_argument("--j", type=int, default=None, help="schedule iteration")
    p.add_argument("--J", type=int, default=None, help="schedule steps (default 10)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("optimize", help="run the graph rewrite passes")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("codegen", help="emit standalone C sources")
    _add_common(p)
    p.add_argument("--approx-activations", action="store_true", default=None)
    p.add_argument("--no-optimize", action="store_true", default=None,
                   help="emit the graph as-is, skipping rewrite passes")
    p.add_argument("--bench-reps", type=int, default=None,
                   help="also emit an instantiated bench.c with this many reps")
    p.add_argument("--bench-inner-iters", type=int, default=None)
    p.add_argument("--conform", action="store_true", default=None,
                   help="also emit an instantiated conform.c")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("explore", help="full exploration loop over j = 0..J")
    _add_common(p, dataset=True)
    p.add_argument("--J", type=int, default=None, help="steps (default 10)")
    p.add_argument("--rates", default=None, help="comma-separated probe rates")
    p.add_argument("--metric", choices=["auc", "error_rate", "mse"], default=None)
    p.add_argument("--direction", choices=["higher_better", "lower_better"], default=None)
    p.add_argument("--threshold", default=None)
    p.add_argument("--sensitivities", default=None,
                   help="reuse a sensitivity.json instead of re-probing")
    p.add_argument("--timing", action="store_true", default=None,
                   help="measure host execution time via the bench harness")
    p.add_argument("--verify", action="store_true", default=None,
                   help="check compiled output against the interpreter")
    p.add_argument("--cc", default=None, help="host compiler command (default 'cc -O3')")
    p.add_argument("--reps", type=int, default=None, help="timing repetitions (default 5)")
    p.add_argument("--jobs", type=int, default=None, help="parallel variant builds (default 1)")
    p.add_argument("--targets", default=None, help="targets JSON for feasibility")
    p.add_argument("--approx-activations", action="store_true", default=None)
    p.add_argument("--variant-hook", default=None,
                   help="external command run per variant (gets model path and j); "
                        "e.g. a retraining script")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("report", help="pareto/feasibility tables from records.json")
    _add_common(p)
    p.add_argument("--records", required=True, help="records.json from explore")
    p.add_argument("--targets", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        _apply_config_file(args)
        _require_flags(args)
        return args.func(args)
    except InputError as e:
        print(f"prune2c: invalid input: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"prune2c: pipeline failure: {e}", file=sys.stderr)
        detail = getattr(e, "stderr", "")
        if detail:
            print(detail, file=sys.stderr)
        return 3


def _require_flags(args) -> None:
    needs_model = args.func in (cmd_validate, cmd_cost, cmd_sensitivity, cmd_prune,
                                cmd_optimize, cmd_codegen, cmd_explore)
    if needs_model and not getattr(args, "model", None):
        raise InputError("--model is required (flag or config file)")
    needs_dataset = args.func in (cmd_sensitivity, cmd_explore)
    if needs_dataset and not getattr(args, "dataset", None):
        raise InputError("--dataset is required (flag or config file)")


if __name__ == "__main__":
    sys.exit(main())
