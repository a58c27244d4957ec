from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import diffmath as dm
from .config import GmiConfig, TrainConfig
from .diffmath import ComputationRecord, Tensor
from .encoder import EncoderParams, check_shapes, encode, params_from_arrays
from .errors import CheckpointError, DataError, DimensionError, NumericalError
from .graph import (
    Graph,
    SupportGraphIndex,
    build_support_index,
    induced_subgraph,
    normalized_adjacency,
)
from .logging_utils import get_logger
from .objective import (
    Discriminator,
    effective_features,
    gmi_loss,
    initialize_discriminators,
    sample_negatives,
)
from .utils import HISTORY_COLUMNS, derive_rng, read_arrays, write_arrays

_logger = get_logger("gmi.trainer")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """
    One bias-corrected Adam update applied in place to ``params``.

    ``state.m`` / ``state.v`` are created lazily with the parameter shapes.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise DimensionError(f"{name}: gradient {grad.shape} does not match parameter {value.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


@dataclass
class NeighborhoodSample:
    graph: Graph
    nodes: np.ndarray
    index_map: Dict[int, int]


def subsample_neighborhood(
    graph: Graph,
    roots: Sequence[int],
    fanouts: Tuple[int, int],
    seed: int | np.random.Generator,
) -> NeighborhoodSample:
    """
    Uniform two-level neighbor sampling without replacement.

    Per root, up to ``fanouts[0]`` neighbors are drawn; per drawn neighbor,
    up to ``fanouts[1]`` of its own neighbors. Returns the induced graph over
    every selected node (sorted by original index) and the old -> new map.
    """
    roots = np.asarray(roots, dtype=np.int64)
    if roots.size == 0:
        raise DataError("subsample_neighborhood needs at least one root")
    if min(fanouts) < 1:
        raise DataError(f"fanouts must be >= 1, got {fanouts}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def draw(node: int, fanout: int) -> np.ndarray:
        neighbors = graph.neighbors(node)
        if neighbors.size <= fanout:
            return neighbors
        return rng.choice(neighbors, size=fanout, replace=False)

    selected = set(int(r) for r in roots)
    for root in roots:
        first = draw(int(root), fanouts[0])
        selected.update(int(u) for u in first)
        for node in first:
            selected.update(int(w) for w in draw(int(node), fanouts[1]))
    nodes = np.asarray(sorted(selected), dtype=np.int64)
    index_map = {int(old): new for new, old in enumerate(nodes)}
    return NeighborhoodSample(induced_subgraph(graph, nodes), nodes, index_map)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: EncoderParams
    discriminators: List[Discriminator]
    adam: AdamState
    rngs: Dict[str, np.random.Generator]
    epoch: int = 0
    best_score: float = math.inf
    best_epoch: int = -1
    wait: int = 0
    best_params: Optional[EncoderParams] = None
    best_discriminators: Optional[List[Discriminator]] = None
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)

    def named_parameters(self) -> Dict[str, Tensor]:
        named = self.params.named_parameters()
        for index, disc in enumerate(self.discriminators):
            named[f"disc.{index}.theta"] = disc.theta
        return named


@dataclass
class TrainResult:
    params: EncoderParams
    discriminators: List[Discriminator]
    history: pd.DataFrame
    best_epoch: int
    stop_reason: str
    state: TrainState


def init_state(graph: Graph, gmi_config: GmiConfig, train_config: TrainConfig) -> TrainState:
    init_rng = derive_rng(train_config.seed, "init")
    params = EncoderParams.initialize(
        graph.n_features,
        gmi_config.hidden_dim,
        gmi_config.depth,
        init_rng,
        residual=gmi_config.residual,
        dense_gmi=gmi_config.dense_gmi,
    )
    d_x = gmi_config.hidden_dim if gmi_config.compressed_input else graph.n_features
    discriminators = initialize_discriminators(gmi_config, d_x, init_rng)
    return TrainState(
        params=params,
        discriminators=discriminators,
        adam=AdamState(),
        rngs={
            "negatives": derive_rng(train_config.seed, "negatives"),
            "subsample": derive_rng(train_config.seed, "subsample"),
        },
    )


def history_frame(history: Sequence[Tuple[int, float, float, float]]) -> pd.DataFrame:
    frame = pd.DataFrame(list(history), columns=HISTORY_COLUMNS)
    return frame.astype({"epoch": "int64", "loss": "float64", "fmi": "float64", "topology": "float64"})


def train(
    graph: Graph,
    gmi_config: GmiConfig,
    train_config: TrainConfig,
    state: Optional[TrainState] = None,
) -> TrainResult:
    """
    Optimize encoder and discriminators with Adam.

    Every epoch redraws negatives, encodes, evaluates the loss, back-propagates
    and steps. Training runs ``fixed_epochs`` when set; otherwise it stops at
    ``max_epochs`` or once the monitored score has not improved for
    ``early_stop_window`` epochs. The best-scoring parameters are returned.
    """
    gmi_config.validate()
    train_config.validate()
    state = init_state(graph, gmi_config, train_config) if state is None else state
    fixed = train_config.fixed_epochs is not None
    limit = train_config.fixed_epochs if fixed else train_config.max_epochs
    assert limit is not None

    full_adjacency = normalized_adjacency(graph)
    full_support = build_support_index(graph)
    validation = _validation_monitor(graph, train_config)
    stop_reason = "max_epochs" if not fixed else "fixed_epochs"

    _logger.info(
        "training started",
        extra={
            "nodes": graph.n_nodes,
            "edges": graph.n_edges,
            "weight_mode": gmi_config.weight_mode,
            "depth": gmi_config.depth,
            "start_epoch": state.epoch,
            "limit": limit,
        },
    )
    while state.epoch < limit:
        epoch = state.epoch
        step_graph, adjacency, support = _epoch_graph(graph, full_adjacency, full_support, train_config, state)
        negatives = sample_negatives(
            step_graph,
            support,
            gmi_config.negatives,
            gmi_config.topology_negatives_per_edge,
            state.rngs["negatives"],
            seed=train_config.seed,
        )
        named = state.named_parameters()
        for tensor in named.values():
            tensor.zero_grad()
        try:
            with ComputationRecord() as record:
                embeddings, per_layer = encode(step_graph, state.params, adjacency)
                features = effective_features(step_graph, state.params, gmi_config)
                loss = gmi_loss(
                    step_graph, embeddings, per_layer, state.discriminators, gmi_config, negatives, features, support
                )
            value = loss.total.item()
            if not math.isfinite(value):
                raise NumericalError("loss is not finite", term="total")
            dm.backward(record, loss.total)
        except NumericalError as exc:
            _logger.error("numerical abort", extra={"epoch": epoch, "term": exc.term})
            raise NumericalError(f"training aborted: {exc}", epoch=epoch, term=exc.term) from exc

        state.history.append((epoch, value, loss.fmi, loss.topology))
        score = value if validation is None else -validation(embeddings.values)
        if score < state.best_score:
            state.best_score = score
            state.best_epoch = epoch
            state.wait = 0
            state.best_params = state.params.copy()
            state.best_discriminators = [d.copy() for d in state.discriminators]
        else:
            state.wait += 1

        grads = {
            name: np.zeros_like(t.values) if t.grad is None else t.grad for name, t in named.items()
        }
        adam_step({name: t.values for name, t in named.items()}, grads, state.adam, train_config.learning_rate)
        state.epoch += 1

        progress = {"epoch": epoch, "loss": value, "fmi": loss.fmi, "topology": loss.topology}
        if train_config.log_every and epoch % train_config.log_every == 0:
            _logger.info("epoch %d loss %.6f", epoch, value, extra=progress)
        else:
            _logger.debug("epoch %d loss %.6f", epoch, value, extra=progress)
        if not fixed and state.wait >= train_config.early_stop_window:
            stop_reason = "early_stop"
            _logger.info("early stopping", extra={"epoch": epoch, "best_epoch": state.best_epoch})
            break

    best_params = state.best_params or state.params.copy()
    best_discriminators = state.best_discriminators or [d.copy() for d in state.discriminators]
    _logger.info(
        "training finished",
        extra={"epochs": len(state.history), "best_epoch": state.best_epoch, "stop_reason": stop_reason},
    )
    return TrainResult(
        params=best_params,
        discriminators=best_discriminators,
        history=history_frame(state.history),
        best_epoch=state.best_epoch,
        stop_reason=stop_reason,
        state=state,
    )


def _epoch_graph(
    graph: Graph,
    adjacency,
    support: SupportGraphIndex,
    train_config: TrainConfig,
    state: TrainState,
):
    if train_config.subsample is None:
        return graph, adjacency, support
    rng = state.rngs["subsample"]
    batch = min(train_config.subsample.batch_size, graph.n_nodes)
    roots = np.sort(rng.choice(graph.n_nodes, size=batch, replace=False))
    sample = subsample_neighborhood(graph, roots, train_config.subsample.fanouts, rng)
    return sample.graph, normalized_adjacency(sample.graph), build_support_index(sample.graph)


def _validation_monitor(graph: Graph, train_config: TrainConfig):
    if train_config.monitor != "val_accuracy":
        return None
    if graph.labels is None or graph.masks is None or not graph.masks.val.any():
        raise DataError("val_accuracy monitoring needs labels and a validation mask")
    if train_config.subsample is not None:
        raise DataError("val_accuracy monitoring is not available with neighbor subsampling")
    from .evaluation import logistic_accuracy

    masks = graph.masks
    labels = graph.labels

    def score(embeddings: np.ndarray) -> float:
        return logistic_accuracy(embeddings, labels, masks.train, masks.val, seed=train_config.seed)

    return score


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    """Encoder, discriminators, Adam moments, best snapshot, RNG states and history."""
    arrays: Dict[str, np.ndarray] = {}
    for name, tensor in state.named_parameters().items():
        arrays[name] = tensor.values
        if name in state.adam.m:
            arrays[f"adam.m.{name}"] = state.adam.m[name]
            arrays[f"adam.v.{name}"] = state.adam.v[name]
    if state.best_params is not None and state.best_discriminators is not None:
        for name, tensor in state.best_params.named_parameters().items():
            arrays[f"best.{name}"] = tensor.values
        for index, disc in enumerate(state.best_discriminators):
            arrays[f"best.disc.{index}.theta"] = disc.theta.values
    params = state.params
    metadata = {
        "depth": params.depth,
        "hidden_dim": params.hidden_dim,
        "residual": params.residual,
        "dense_gmi": params.dense_gmi,
        "discriminators": len(state.discriminators),
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "best_score": state.best_score if math.isfinite(state.best_score) else None,
        "best_epoch": state.best_epoch,
        "wait": state.wait,
        "rngs": {name: gen.bit_generator.state for name, gen in state.rngs.items()},
        "history": [list(row) for row in state.history],
    }
    write_arrays(path, b"GMIC", arrays, metadata)
    _logger.info("checkpoint saved", extra={"path": str(path), "epoch": state.epoch})


def load_checkpoint(path: str | Path, expected: Optional[TrainState] = None) -> TrainState:
    """Restore a TrainState; with ``expected`` every parameter shape must match."""
    arrays, metadata = read_arrays(path, b"GMIC")
    try:
        params = params_from_arrays(arrays, metadata)
        discriminators = [
            Discriminator(dm.parameter(arrays[f"disc.{i}.theta"], name=f"disc.{i}.theta"))
            for i in range(int(metadata["discriminators"]))
        ]
        best_params = None
        best_discriminators = None
        if "best.encoder.0.weight" in arrays:
            best_params = params_from_arrays(arrays, metadata, prefix="best.")
            best_discriminators = [
                Discriminator(dm.parameter(arrays[f"best.disc.{i}.theta"], name=f"disc.{i}.theta"))
                for i in range(len(discriminators))
            ]
        adam = AdamState(t=int(metadata["adam_t"]))
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                adam.m[key[len("adam.m."):]] = value
            elif key.startswith("adam.v."):
                adam.v[key[len("adam.v."):]] = value
        rngs = {}
        for name, rng_state in metadata["rngs"].items():
            generator = np.random.default_rng()
            generator.bit_generator.state = rng_state
            rngs[name] = generator
        best_score = metadata["best_score"]
        state = TrainState(
            params=params,
            discriminators=discriminators,
            adam=adam,
            rngs=rngs,
            epoch=int(metadata["epoch"]),
            best_score=math.inf if best_score is None else float(best_score),
            best_epoch=int(metadata["best_epoch"]),
            wait=int(metadata["wait"]),
            best_params=best_params,
            best_discriminators=best_discriminators,
            history=[(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in metadata["history"]],
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing checkpoint entry {exc}") from exc
    if expected is not None:
        check_shapes(state.named_parameters(), expected.named_parameters())
    _logger.info("checkpoint loaded", extra={"path": str(path), "epoch": state.epoch})
    return state
