import json
import math

import numpy as np
import pytest

import corpus
from prune2c.cli import main
from prune2c.interpreter import save_dataset
from prune2c.model_io import load_graph, save_graph


@pytest.fixture
def model_file(tmp_path, rng):
    g = corpus.build((12,), [
        corpus.fc_node(rng, "fc0", 16, 12),
        corpus.fc_node(rng, "fc1", 8, 16),
        corpus.fc_node(rng, "fc2", 4, 8),
    ])
    path = tmp_path / "model.json"
    save_graph(g, path)
    return g, path


@pytest.fixture
def dataset_file(tmp_path, rng, model_file):
    g, _ = model_file
    d = corpus.teacher_regression_dataset(rng, g, n=10)
    path = tmp_path / "d.bin"
    save_dataset(d, path)
    return d, path


def test_validate_ok(model_file, capsys):
    _, path = model_file
    assert main(["validate", "--model", str(path)]) == 0
    out = capsys.readouterr().out
    assert "3 trainable layers" in out
    assert "fc1" in out


def test_validate_json(model_file, capsys):
    _, path = model_file
    assert main(["validate", "--model", str(path), "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["output_shape"] == [4]


def test_validate_invalid_model_exit_2(tmp_path, capsys):
    bad = tmp_path / "model.json"
    bad.write_text("{}")
    assert main(["validate", "--model", str(bad)]) == 2
    assert "invalid input" in capsys.readouterr().err


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_missing_model_flag_exit_2(capsys):
    assert main(["validate"]) == 2


def test_cost_json(model_file, capsys):
    _, path = model_file
    assert main(["cost", "--model", str(path), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["param_count"] == (12 + 1) * 16 + (16 + 1) * 8 + (8 + 1) * 4
    assert payload["design_space_layer_wise"] == 16 * 8 * 4


def test_prune_rates_writes_model(model_file, tmp_path, capsys):
    g, path = model_file
    out = tmp_path / "pruned"
    assert main(["prune", "--model", str(path), "--rates", "0.5,0,0",
                 "--out-dir", str(out)]) == 0
    pruned = load_graph(out / "model.json")
    assert pruned.trainable_nodes()[0].weights.shape[0] == math.ceil(16 * 0.5)
    assert pruned.trainable_nodes()[1].weights.shape == (8, 8)


def test_prune_needs_rates_or_sensitivities(model_file):
    _, path = model_file
    assert main(["prune", "--model", str(path)]) == 2


def test_sensitivity_then_gwp_prune(model_file, dataset_file, tmp_path, capsys):
    _, mpath = model_file
    _, dpath = dataset_file
    out = tmp_path / "sens"
    assert main(["sensitivity", "--model", str(mpath), "--dataset", str(dpath),
                 "--out-dir", str(out), "--metric", "mse"]) == 0
    sens_file = out / "sensitivity.json"
    assert sens_file.exists()
    payload = json.loads(sens_file.read_text())
    assert len(payload["layers"]) == 3

    pruned_dir = tmp_path / "gwp"
    assert main(["prune", "--model", str(mpath), "--sensitivities", str(sens_file),
                 "--j", "1", "--J", "10", "--out-dir", str(pruned_dir)]) == 0
    assert (pruned_dir / "model.json").exists()


def test_optimize_command(tmp_path, rng, capsys):
    g = corpus.mlp_unfused(rng)
    path = tmp_path / "model.json"
    save_graph(g, path)
    out = tmp_path / "opt"
    assert main(["optimize", "--model", str(path), "--out-dir", str(out)]) == 0
    opt = load_graph(out / "model.json")
    assert len(opt.nodes) < len(g.nodes)


def test_codegen_writes_sources_and_harnesses(model_file, tmp_path, capsys):
    _, path = model_file
    out = tmp_path / "gen"
    assert main(["codegen", "--model", str(path), "--out-dir", str(out),
                 "--bench-reps", "3", "--conform", "--json"]) == 0
    files = set(json.loads(capsys.readouterr().out)["files"])
    assert {"nn.c", "nn.h", "weights.c", "weights.h"} <= files
    assert (out / "bench.c").exists()
    assert (out / "conform.c").exists()
    assert "@" not in (out / "bench.c").read_text().split("at-sign")[-1]


def test_explore_writes_reports(model_file, dataset_file, tmp_path, capsys):
    _, mpath = model_file
    _, dpath = dataset_file
    out = tmp_path / "run"
    assert main(["explore", "--model", str(mpath), "--dataset", str(dpath),
                 "--J", "3", "--metric", "mse", "--out-dir", str(out)]) == 0
    lines = (out / "report.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 4
    records = json.loads((out / "records.json").read_text())
    assert [r["j"] for r in records] == [0, 1, 2, 3]
    assert (out / "manifest.json").exists()
    assert (out / "sensitivity.json").exists()


def test_explore_j10_gives_11_rows(model_file, dataset_file, tmp_path):
    _, mpath = model_file
    _, dpath = dataset_file
    out = tmp_path / "run10"
    assert main(["explore", "--model", str(mpath), "--dataset", str(dpath),
                 "--J", "10", "--out-dir", str(out)]) == 0
    lines = (out / "report.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 11


def test_report_command(model_file, dataset_file, tmp_path, capsys):
    _, mpath = model_file
    _, dpath = dataset_file
    out = tmp_path / "run"
    main(["explore", "--model", str(mpath), "--dataset", str(dpath),
          "--J", "2", "--out-dir", str(out)])
    capsys.readouterr()
    targets = tmp_path / "targets.json"
    targets.write_text(json.dumps([
        {"name": "tiny", "rom_limit": 100},
        {"name": "huge", "rom_limit": 10**9, "ram_limit": 10**9},
    ]))
    assert main(["report", "--records", str(out / "records.json"),
                 "--targets", str(targets)]) == 0
    text = capsys.readouterr().out
    assert "pareto" in text
    assert "does not fit" in text
    assert "huge" in text


def test_config_file_supplies_flags(model_file, tmp_path, capsys):
    _, path = model_file
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"model": str(path), "json": True}))
    assert main(["cost", "--config", str(cfg), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "param_count" in payload


def test_flags_override_config(model_file, tmp_path, capsys):
    g, path = model_file
    other = tmp_path / "other" / "model.json"
    save_graph(corpus.identity_fc(), other)
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"model": str(other)}))
    assert main(["validate", "--config", str(cfg), "--model", str(path)]) == 0
    assert "3 trainable layers" in capsys.readouterr().out


def test_explore_reruns_are_identical(model_file, dataset_file, tmp_path, capsys):
    _, mpath = model_file
    _, dpath = dataset_file
    outputs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["explore", "--model", str(mpath), "--dataset", str(dpath),
                     "--J", "3", "--seed", "42", "--out-dir", str(out)]) == 0
        outputs.append((out / "records.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_cli_matches_library_results(model_file, dataset_file, tmp_path, capsys):
    from prune2c.exploration import ExplorationConfig, explore
    from prune2c.interpreter import load_dataset

    g, mpath = model_file
    d, dpath = dataset_file
    out = tmp_path / "run"
    main(["explore", "--model", str(mpath), "--dataset", str(dpath),
          "--J", "2", "--metric", "mse", "--out-dir", str(out)])
    from_cli = json.loads((out / "records.json").read_text())
    records, _, _ = explore(load_graph(mpath), load_dataset(dpath),
                            ExplorationConfig(J=2, metric="mse"))
    for cli_rec, lib_rec in zip(from_cli, records):
        assert cli_rec["flops"] == lib_rec.flops
        assert cli_rec["quality"] == lib_rec.quality
        assert cli_rec["rom_bytes"] == lib_rec.rom_bytes
