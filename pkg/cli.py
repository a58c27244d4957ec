from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Dict, Optional

import typer
from dotenv import load_dotenv

from gmi_tool import GmiPipeline
from gmi_tool.config import RunConfig, load_config
from gmi_tool.errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    GmiError,
    NumericalError,
    PropertyFailure,
)

app = typer.Typer(help="Graphical mutual information node embeddings")

EXIT_CODES = (
    (PropertyFailure, 4),
    ((NumericalError, DomainError), 3),
    (DataError, 2),
    ((ConfigError, DimensionError), 1),
)

DATASET = typer.Option(None, "--dataset", "-d", help="Dataset name under GMI_DATA_DIR, a directory, or a .gmig cache")
CONFIG = typer.Option(None, "--config", "-c", help="YAML run configuration")
SEED = typer.Option(None, "--seed", help="Root seed for every random stream")
OUT = typer.Option(None, "--out", "-o", help="Output directory")
WEIGHT_MODE = typer.Option(None, "--weight-mode", help="mean or adaptive local MI weights")
ALPHA = typer.Option(None, "--alpha", help="Weight of the feature MI term")
BETA = typer.Option(None, "--beta", help="Weight of the topology term")
NEGATIVES = typer.Option(None, "--negatives", help="Row shuffles per training step")
DEPTH = typer.Option(None, "--depth", help="Number of GCN layers")
RESIDUAL = typer.Option(None, "--residual/--no-residual", help="Identity shortcuts between hidden layers")
DENSE_GMI = typer.Option(None, "--dense-gmi/--no-dense-gmi", help="Average the FMI term over every layer output")
COMPRESSED = typer.Option(None, "--compressed-input/--raw-input", help="Score features after the first projection")
MAX_EPOCHS = typer.Option(None, "--max-epochs", help="Epoch limit with early stopping")


def _resolve(config: Optional[str], dataset: Optional[str], overrides: Dict[str, Dict[str, Any]]) -> RunConfig:
    if config:
        _ensure_local_path(config)
    if dataset:
        _ensure_local_path(dataset)
    cfg = load_config(config)
    sections = {key: dict(values) for key, values in overrides.items()}
    sections.setdefault("data", {})
    if dataset:
        sections["data"].update({"dataset": dataset, "cache_path": None, "content_path": None, "cites_path": None})
        merged = cfg.to_dict()
        merged["data"].update(sections.pop("data"))
        cfg = RunConfig.from_dict(merged)
    else:
        sections.pop("data")
    return cfg.with_overrides(sections)


def _gmi_overrides(
    weight_mode, alpha, beta, negatives, depth, residual, dense_gmi, compressed_input
) -> Dict[str, Any]:
    return {
        "weight_mode": weight_mode,
        "alpha": alpha,
        "beta": beta,
        "negatives": negatives,
        "depth": depth,
        "residual": residual,
        "dense_gmi": dense_gmi,
        "compressed_input": compressed_input,
    }


def _run(action: Callable[[], None]) -> None:
    """Run a command body, mapping library errors onto exit codes."""
    try:
        action()
    except GmiError as exc:
        for kinds, code in EXIT_CODES:
            if isinstance(exc, kinds):
                typer.echo(f"error: {exc}", err=True)
                raise typer.Exit(code=code) from exc
        raise


@app.command()
def train(
    dataset: Optional[str] = DATASET,
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    out: Optional[str] = OUT,
    weight_mode: Optional[str] = WEIGHT_MODE,
    alpha: Optional[float] = ALPHA,
    beta: Optional[float] = BETA,
    negatives: Optional[int] = NEGATIVES,
    depth: Optional[int] = DEPTH,
    residual: Optional[bool] = RESIDUAL,
    dense_gmi: Optional[bool] = DENSE_GMI,
    compressed_input: Optional[bool] = COMPRESSED,
    max_epochs: Optional[int] = MAX_EPOCHS,
    resume: Optional[str] = typer.Option(None, "--resume", help="Continue from a checkpoint.gmic"),
) -> None:
    """Train an encoder and write checkpoint, embeddings, loss history and resolved config."""
    load_dotenv()

    def body() -> None:
        if resume:
            _ensure_local_path(resume)
        cfg = _resolve(
            config,
            dataset,
            {
                "gmi": _gmi_overrides(weight_mode, alpha, beta, negatives, depth, residual, dense_gmi, compressed_input),
                "train": {"max_epochs": max_epochs},
                "run": {"seed": seed, "out": out},
            },
        )
        outputs = GmiPipeline(cfg).train(resume=resume)
        result = outputs.result
        typer.echo(
            f"Trained {len(result.history)} epochs (best epoch {result.best_epoch}, {result.stop_reason}); "
            f"outputs written to {cfg.out}"
        )

    _run(body)


@app.command()
def classify(
    dataset: Optional[str] = DATASET,
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    out: Optional[str] = OUT,
    weight_mode: Optional[str] = WEIGHT_MODE,
    alpha: Optional[float] = ALPHA,
    beta: Optional[float] = BETA,
    negatives: Optional[int] = NEGATIVES,
    depth: Optional[int] = DEPTH,
    residual: Optional[bool] = RESIDUAL,
    dense_gmi: Optional[bool] = DENSE_GMI,
    compressed_input: Optional[bool] = COMPRESSED,
    max_epochs: Optional[int] = MAX_EPOCHS,
    runs: Optional[int] = typer.Option(None, "--runs", help="Classifier repetitions (default 50)"),
    standardize: Optional[bool] = typer.Option(None, "--standardize/--no-standardize", help="Standardize embeddings first"),
    embeddings: Optional[str] = typer.Option(None, "--embeddings", help="Existing embeddings.tsv or .gmie; skips training"),
) -> None:
    """Logistic-regression node classification on frozen embeddings."""
    load_dotenv()

    def body() -> None:
        if embeddings:
            _ensure_local_path(embeddings)
        cfg = _resolve(
            config,
            dataset,
            {
                "gmi": _gmi_overrides(weight_mode, alpha, beta, negatives, depth, residual, dense_gmi, compressed_input),
                "train": {"max_epochs": max_epochs},
                "eval": {"runs": runs, "standardize": standardize},
                "run": {"seed": seed, "out": out},
            },
        )
        report = GmiPipeline(cfg).classify(embeddings_path=embeddings)
        typer.echo(report.to_table())
        typer.echo(f"standardize = {report.config['standardize']}")

    _run(body)


@app.command()
def linkpred(
    dataset: Optional[str] = DATASET,
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    out: Optional[str] = OUT,
    weight_mode: Optional[str] = WEIGHT_MODE,
    alpha: Optional[float] = ALPHA,
    beta: Optional[float] = BETA,
    negatives: Optional[int] = NEGATIVES,
    depth: Optional[int] = DEPTH,
    residual: Optional[bool] = RESIDUAL,
    dense_gmi: Optional[bool] = DENSE_GMI,
    compressed_input: Optional[bool] = COMPRESSED,
    max_epochs: Optional[int] = MAX_EPOCHS,
    ratio: Optional[float] = typer.Option(None, "--ratio", help="Share of edges to remove"),
    runs: Optional[int] = typer.Option(None, "--runs", help="Negative resamplings (default 10)"),
) -> None:
    """Remove edges, train on the damaged graph and report link-prediction AUC."""
    load_dotenv()

    def body() -> None:
        cfg = _resolve(
            config,
            dataset,
            {
                "gmi": _gmi_overrides(weight_mode, alpha, beta, negatives, depth, residual, dense_gmi, compressed_input),
                "train": {"max_epochs": max_epochs},
                "eval": {"ratio": ratio, "link_runs": runs},
                "run": {"seed": seed, "out": out},
            },
        )
        report = GmiPipeline(cfg).linkpred()
        typer.echo(report.to_table())

    _run(body)


@app.command()
def verify(
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    out: Optional[str] = OUT,
    tables: int = typer.Option(500, "--tables", help="Multiplicative tables for the bound sweep"),
    lemma_tables: int = typer.Option(1000, "--lemma-tables", help="Random tables for the monotonicity sweep"),
    grad_check: bool = typer.Option(True, "--grad-check/--no-grad-check", help="Finite-difference check of the loss"),
) -> None:
    """Exact-MI property sweeps and loss gradient checks; exit 4 on any failure."""
    load_dotenv()

    def body() -> None:
        cfg = _resolve(config, None, {"run": {"seed": seed, "out": out}})
        if tables == 0 or lemma_tables == 0:
            typer.echo("warning: a sweep with zero tables is skipped", err=True)
        report = GmiPipeline(cfg).verify(tables=tables, lemma_tables=lemma_tables, grad_checks=grad_check)
        target = Path(cfg.out)
        target.mkdir(parents=True, exist_ok=True)
        cfg.dump(target / "resolved_config.yaml")
        (target / "verify_report.jsonl").write_text(report.to_json_lines(), encoding="utf-8")
        typer.echo(report.to_table())
        failures = report.failures()
        if failures:
            first = failures[0]
            raise PropertyFailure(first.name, first.seed, first.detail)

    _run(body)


@app.command("export-cache")
def export_cache(
    dataset: Optional[str] = DATASET,
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    out: Optional[str] = OUT,
    output: Optional[str] = typer.Option(None, "--output", help="Cache path (default <out>/graph.gmig)"),
) -> None:
    """Parse a dataset once and write the binary graph cache."""
    load_dotenv()

    def body() -> None:
        cfg = _resolve(config, dataset, {"run": {"seed": seed, "out": out}})
        target = output or str(Path(cfg.out) / "graph.gmig")
        _ensure_local_path(target)
        path = GmiPipeline(cfg).export_cache(target)
        cfg.dump(path.parent / "resolved_config.yaml")
        typer.echo(f"Graph cache written to {path}")

    _run(body)


def _ensure_local_path(path: str) -> None:
    """
    Dataset, config and checkpoint arguments must be local filesystem paths;
    remote URLs are rejected.
    """
    if "://" in path:
        raise typer.BadParameter(
            "Remote URLs are not supported. Please provide a local file path."
        )


if __name__ == "__main__":
    app()
