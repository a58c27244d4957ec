from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import diffmath as dm
from .config import GmiConfig, RunConfig
from .encoder import EncoderParams, encode, save_encoder
from .errors import DataError
from .evaluation import link_auc, logistic_eval
from .graph import (
    Graph,
    build_support_index,
    load_citation_dataset,
    load_graph_cache,
    load_split_masks,
    planetoid_split,
    remove_edges,
    row_normalize_features,
    save_graph_cache,
    toy_graph,
)
from .logging_utils import get_logger
from .objective import forward_loss, initialize_discriminators, sample_negatives
from .oracle import run_sweep
from .report import EvalReport, PropertyResult, VerifyReport
from .trainer import TrainResult, init_state, load_checkpoint, save_checkpoint, train
from .utils import (
    derive_rng,
    read_embeddings,
    read_embeddings_binary,
    resolve_dataset,
    write_embeddings,
    write_embeddings_binary,
    write_loss_history,
)

GRAD_CHECK_THRESHOLD = 1e-4


@dataclass
class TrainOutputs:
    result: TrainResult
    embeddings: np.ndarray
    paths: Dict[str, Path] = field(default_factory=dict)


class GmiPipeline:
    """Load data, train, evaluate and verify for one resolved RunConfig."""

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        self._logger = get_logger("gmi.pipeline")

    @property
    def out_dir(self) -> Path:
        return Path(self.config.out)

    def _prepare_out(self) -> Path:
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        self.config.dump(out / "resolved_config.yaml")
        return out

    def load_graph(self) -> Graph:
        data = self.config.data
        data.validate()
        split_path: Optional[Path] = Path(data.split_path) if data.split_path else None
        if data.cache_path:
            graph = load_graph_cache(data.cache_path)
        elif data.content_path and data.cites_path:
            graph = load_citation_dataset(data.content_path, data.cites_path)
        else:
            assert data.dataset is not None
            paths = resolve_dataset(data.dataset)
            if paths["cache"] is not None:
                graph = load_graph_cache(paths["cache"])
            else:
                graph = load_citation_dataset(paths["content"], paths["cites"])
                split_path = split_path or paths["split"]
        if split_path is not None:
            graph = graph.with_masks(load_split_masks(split_path, graph.n_nodes))
        elif graph.masks is None and graph.labels is not None:
            graph = graph.with_masks(planetoid_split(graph.labels, derive_rng(self.config.seed, "split")))
        if data.normalize_features:
            graph = row_normalize_features(graph)
        return graph

    def embed(self, graph: Graph, params: EncoderParams) -> np.ndarray:
        with dm.suspended():
            embeddings, _ = encode(graph, params)
        return embeddings.values

    def train(self, graph: Optional[Graph] = None, resume: Optional[str] = None) -> TrainOutputs:
        """Train on ``graph`` and write checkpoint, encoder, embeddings, history and config."""
        graph = self.load_graph() if graph is None else graph
        out = self._prepare_out()
        state = None
        if resume:
            expected = init_state(graph, self.config.gmi, self.config.train)
            state = load_checkpoint(resume, expected=expected)
        result = train(graph, self.config.gmi, self.config.train, state=state)
        embeddings = self.embed(graph, result.params)
        paths = {
            "checkpoint": out / "checkpoint.gmic",
            "encoder": out / "encoder.gmip",
            "embeddings": out / "embeddings.tsv",
            "embeddings_binary": out / "embeddings.gmie",
            "history": out / "loss_history.tsv",
        }
        save_checkpoint(paths["checkpoint"], result.state)
        save_encoder(paths["encoder"], result.params)
        write_embeddings(paths["embeddings"], graph.ids(), embeddings)
        write_embeddings_binary(paths["embeddings_binary"], graph.ids(), embeddings)
        write_loss_history(paths["history"], result.history)
        self._logger.info(
            "training outputs written",
            extra={"out": str(out), "epochs": len(result.history), "best_epoch": result.best_epoch},
        )
        return TrainOutputs(result=result, embeddings=embeddings, paths=paths)

    def _aligned_embeddings(self, graph: Graph, path: str) -> np.ndarray:
        if path.endswith(".gmie"):
            ids, values = read_embeddings_binary(path)
        else:
            ids, values = read_embeddings(path)
        position = {node_id: row for row, node_id in enumerate(ids)}
        missing = [node_id for node_id in graph.ids() if node_id not in position]
        if missing:
            raise DataError(f"{path}: no embedding for {len(missing)} nodes, e.g. {missing[0]!r}")
        return values[[position[node_id] for node_id in graph.ids()]]

    def classify(self, embeddings_path: Optional[str] = None) -> EvalReport:
        """Classification report over ``eval.runs`` classifier seeds; trains first without embeddings."""
        graph = self.load_graph()
        if graph.labels is None or graph.masks is None:
            raise DataError("classification needs node labels and split masks")
        if embeddings_path:
            self._prepare_out()
            embeddings = self._aligned_embeddings(graph, embeddings_path)
        else:
            embeddings = self.train(graph).embeddings
        settings = self.config.eval
        report = logistic_eval(
            embeddings,
            graph.labels,
            graph.masks.train,
            graph.masks.test,
            runs=settings.runs,
            seed=self.config.seed,
            l2=settings.l2,
            iterations=settings.iterations,
            lr=settings.learning_rate,
            standardize_inputs=settings.standardize,
            classifier=settings.classifier,
        )
        report.config["weight_mode"] = self.config.gmi.weight_mode
        report.write(self.out_dir)
        return report

    def linkpred(self) -> EvalReport:
        """Remove ``eval.ratio`` of the edges, train on the rest, score the removed edges."""
        graph = self.load_graph()
        split = remove_edges(graph, self.config.eval.ratio, derive_rng(self.config.seed, "edge-removal"))
        if split.removed_edges.shape[0] == 0:
            raise DataError(f"ratio {self.config.eval.ratio} removes no edge from {graph.n_edges}")
        outputs = self.train(split.damaged)
        np.savetxt(self.out_dir / "removed_edges.tsv", split.removed_edges, fmt="%d", delimiter="\t")
        report = link_auc(
            outputs.embeddings,
            split.removed_edges,
            graph,
            seed=self.config.seed,
            runs=self.config.eval.link_runs,
            config={
                "ratio": self.config.eval.ratio,
                "beta": self.config.gmi.beta,
                "weight_mode": self.config.gmi.weight_mode,
            },
        )
        report.write(self.out_dir)
        return report

    def export_cache(self, path: str) -> Path:
        graph = self.load_graph()
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        save_graph_cache(graph, target)
        self._logger.info("graph cache written", extra={"path": str(target), "nodes": graph.n_nodes})
        return target

    def verify(self, tables: int = 500, lemma_tables: int = 1000, grad_checks: bool = True) -> VerifyReport:
        report = run_sweep(tables=tables, lemma_tables=lemma_tables, seed=self.config.seed)
        if grad_checks:
            for result in loss_grad_checks(self.config.seed):
                report.add(result)
        if report.failures():
            for failure in report.failures():
                self._logger.error("property failed", extra={"property": failure.name, "seed": failure.seed})
        return report


def loss_grad_checks(seed: int = 0) -> List[PropertyResult]:
    """Finite-difference check of the full loss on the toy graph, both weight modes, dense off and on."""
    graph = toy_graph(seed)
    support = build_support_index(graph)
    results = []
    for weight_mode in ("mean", "adaptive"):
        for dense in (False, True):
            config = replace(
                GmiConfig(),
                weight_mode=weight_mode,
                dense_gmi=dense,
                hidden_dim=3,
                depth=2,
                negatives=2,
            )
            rng = derive_rng(seed, "verify")
            params = EncoderParams.initialize(graph.n_features, config.hidden_dim, config.depth, rng, dense_gmi=dense)
            discriminators = initialize_discriminators(config, config.hidden_dim, rng)
            negatives = sample_negatives(graph, support, config.negatives, 1, rng, seed=seed)
            tensors = params.parameters() + [d.theta for d in discriminators]
            check = dm.grad_check(
                lambda: forward_loss(graph, params, discriminators, config, negatives, support=support).total,
                tensors,
            )
            name = f"grad_check[{weight_mode}{',dense' if dense else ''}]"
            passed = check.max_relative_error < GRAD_CHECK_THRESHOLD
            detail = f"max rel err {check.max_relative_error:.2e}"
            if not passed and check.parameter is not None:
                detail += f" at {tensors[check.parameter].name}{check.coordinate}"
            results.append(PropertyResult(name, passed, len(tensors), seed, detail))
    return results
