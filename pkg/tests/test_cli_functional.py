from __future__ import annotations

import json
from pathlib import Path

import yaml
from typer.testing import CliRunner

from cli import app
from gmi_tool.graph import load_graph_cache

TOY_DIR = Path(__file__).resolve().parents[1] / "data" / "toy"

runner = CliRunner()


def _args(tmp_path: Path) -> list[str]:
    return ["--dataset", str(TOY_DIR), "--out", str(tmp_path), "--max-epochs", "5", "--seed", "2"]


def test_train_command_writes_outputs(tmp_path) -> None:
    result = runner.invoke(app, ["train", *_args(tmp_path), "--weight-mode", "adaptive", "--depth", "1"])

    assert result.exit_code == 0, result.output
    assert "Trained" in result.output
    resolved = yaml.safe_load((tmp_path / "resolved_config.yaml").read_text(encoding="utf-8"))
    assert resolved["gmi"]["weight_mode"] == "adaptive"
    assert resolved["gmi"]["depth"] == 1
    assert resolved["seed"] == 2
    assert resolved["train"]["seed"] == 2
    for name in ("checkpoint.gmic", "encoder.gmip", "embeddings.tsv", "embeddings.gmie", "loss_history.tsv"):
        assert (tmp_path / name).exists()


def test_classify_command_prints_report(tmp_path) -> None:
    result = runner.invoke(app, ["classify", *_args(tmp_path), "--runs", "2", "--standardize"])

    assert result.exit_code == 0, result.output
    assert "classification accuracy" in result.output
    assert "standardize = True" in result.output
    records = [json.loads(line) for line in (tmp_path / "classification_report.jsonl").read_text().splitlines()]
    assert records[-1]["type"] == "aggregate"
    assert records[-1]["runs"] == 2


def test_classify_reuses_embeddings(tmp_path) -> None:
    trained = runner.invoke(app, ["train", *_args(tmp_path / "train")])
    assert trained.exit_code == 0, trained.output

    result = runner.invoke(
        app,
        ["classify", *_args(tmp_path / "eval"), "--runs", "1", "--embeddings", str(tmp_path / "train" / "embeddings.gmie")],
    )

    assert result.exit_code == 0, result.output
    assert not (tmp_path / "eval" / "checkpoint.gmic").exists()


def test_linkpred_command(tmp_path) -> None:
    result = runner.invoke(app, ["linkpred", *_args(tmp_path), "--ratio", "0.2", "--runs", "2"])

    assert result.exit_code == 0, result.output
    assert "linkpred auc" in result.output
    assert (tmp_path / "removed_edges.tsv").exists()
    assert (tmp_path / "linkpred_report.txt").exists()


def test_verify_command_passes(tmp_path) -> None:
    result = runner.invoke(app, ["verify", "--tables", "5", "--lemma-tables", "5", "--out", str(tmp_path)])

    assert result.exit_code == 0, result.output
    assert "FAIL" not in result.output
    lines = (tmp_path / "verify_report.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[-1])["passed"] is True


def test_verify_with_zero_tables_warns(tmp_path) -> None:
    result = runner.invoke(
        app, ["verify", "--tables", "0", "--lemma-tables", "0", "--no-grad-check", "--out", str(tmp_path)]
    )

    assert result.exit_code == 0
    assert "skipped" in result.output


def test_export_cache_command(tmp_path) -> None:
    target = tmp_path / "cache" / "toy.gmig"

    result = runner.invoke(app, ["export-cache", "--dataset", str(TOY_DIR), "--output", str(target)])

    assert result.exit_code == 0, result.output
    graph = load_graph_cache(target)
    assert graph.n_nodes == 12
    assert graph.classes == ("theory", "systems")


def test_trains_from_exported_cache(tmp_path) -> None:
    target = tmp_path / "toy.gmig"
    runner.invoke(app, ["export-cache", "--dataset", str(TOY_DIR), "--output", str(target)])

    result = runner.invoke(app, ["train", "--dataset", str(target), "--out", str(tmp_path / "run"), "--max-epochs", "3"])

    assert result.exit_code == 0, result.output
