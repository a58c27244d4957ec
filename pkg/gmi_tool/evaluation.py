"""
Downstream heads for frozen embeddings: logistic-regression node
classification, micro-F1, and link-prediction AUC.
"""

from __future__ import annotations

import time
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, softmax
from scipy.stats import rankdata

from .diffmath import Tensor
from .errors import DataError, DimensionError
from .graph import Graph, sample_non_edges
from .logging_utils import get_logger
from .report import EvalReport
from .utils import derive_rng

_logger = get_logger("gmi.evaluation")

INIT_SCALE = 0.01


def _as_array(embeddings: Tensor | np.ndarray) -> np.ndarray:
    values = embeddings.values if isinstance(embeddings, Tensor) else embeddings
    return np.asarray(values, dtype=np.float64)


def standardize(embeddings: Tensor | np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance columns; constant columns become 0."""
    values = _as_array(embeddings)
    centered = values - values.mean(axis=0, keepdims=True)
    std = values.std(axis=0, keepdims=True)
    return np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)


def _step_size(features: np.ndarray, l2: float, lr: float, multilabel: bool) -> float:
    # Smoothness of mean cross-entropy: ||X||_2^2 / n scaled by the largest
    # Hessian eigenvalue of the link (1/2 for softmax, 1/4 for sigmoid).
    n = features.shape[0]
    spectral = np.linalg.norm(features, ord=2) ** 2 if features.size else 0.0
    smoothness = (0.25 if multilabel else 0.5) * spectral / max(n, 1) + l2
    return min(lr, 1.0 / smoothness) if smoothness > 0 else lr


def fit_logistic(
    features: np.ndarray,
    targets: np.ndarray,
    n_classes: int,
    l2: float = 0.01,
    iterations: int = 300,
    lr: float = 0.1,
    seed: int | np.random.Generator = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Full-batch gradient descent on L2-regularized logistic loss.

    Integer ``targets`` fit a multinomial model; a multi-hot matrix fits one
    independent sigmoid per label. Returns (weights, bias).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    multilabel = targets.ndim == 2
    n, d = features.shape
    onehot = targets.astype(np.float64) if multilabel else np.eye(n_classes)[targets]
    weights = rng.normal(0.0, INIT_SCALE, size=(d, n_classes))
    bias = np.zeros(n_classes)
    augmented = np.hstack([features, np.ones((n, 1))])
    step = _step_size(augmented, l2, lr, multilabel)
    for _ in range(iterations):
        logits = features @ weights + bias
        probs = expit(logits) if multilabel else softmax(logits, axis=1)
        residual = (probs - onehot) / n
        weights -= step * (features.T @ residual + l2 * weights)
        bias -= step * residual.sum(axis=0)
    return weights, bias


def predict(features: np.ndarray, weights: np.ndarray, bias: np.ndarray, multilabel: bool = False) -> np.ndarray:
    logits = features @ weights + bias
    if multilabel:
        return (logits > 0).astype(np.int64)
    return np.argmax(logits, axis=1)


def _check_inputs(
    values: np.ndarray, labels: np.ndarray, train_mask: np.ndarray, test_mask: np.ndarray
) -> int:
    n = values.shape[0]
    if labels.shape[0] != n or train_mask.shape != (n,) or test_mask.shape != (n,):
        raise DimensionError(
            f"embeddings have {n} rows; labels {labels.shape}, masks {train_mask.shape}/{test_mask.shape}"
        )
    if (train_mask & test_mask).any():
        raise DataError(f"train and test masks overlap on {int((train_mask & test_mask).sum())} nodes")
    if not train_mask.any() or not test_mask.any():
        raise DataError("train and test masks must both select at least one node")
    if labels.ndim == 2:
        return labels.shape[1]
    n_classes = int(labels.max()) + 1
    present = np.bincount(labels[train_mask], minlength=n_classes)
    missing = [int(c) for c in np.flatnonzero(present == 0) if (labels == c).any()]
    if missing:
        raise DataError(f"classes {missing} have no training node")
    return n_classes


def _fit_sklearn(features: np.ndarray, targets: np.ndarray, l2: float, iterations: int, seed: int):
    from sklearn.linear_model import LogisticRegression

    # sklearn minimizes C * sum(loss) + ||w||^2 / 2, i.e. C = 1 / (l2 * n).
    c = 1.0 / (l2 * features.shape[0]) if l2 > 0 else 1e12
    model = LogisticRegression(C=c, max_iter=iterations, random_state=seed)
    return model.fit(features, targets)


def logistic_accuracy(
    embeddings: Tensor | np.ndarray,
    labels: np.ndarray,
    train_mask: np.ndarray,
    test_mask: np.ndarray,
    seed: int = 0,
    l2: float = 0.01,
    iterations: int = 300,
    lr: float = 0.1,
) -> float:
    """Single-run test accuracy of the in-house classifier."""
    values = _as_array(embeddings)
    n_classes = _check_inputs(values, labels, train_mask, test_mask)
    weights, bias = fit_logistic(values[train_mask], labels[train_mask], n_classes, l2, iterations, lr, seed)
    return float(np.mean(predict(values[test_mask], weights, bias) == labels[test_mask]))


def logistic_eval(
    embeddings: Tensor | np.ndarray,
    labels: np.ndarray,
    train_mask: np.ndarray,
    test_mask: np.ndarray,
    runs: int = 50,
    seed: int = 0,
    l2: float = 0.01,
    iterations: int = 300,
    lr: float = 0.1,
    standardize_inputs: bool = False,
    classifier: str = "gd",
) -> EvalReport:
    """
    Train a logistic classifier on the train-mask embeddings ``runs`` times
    (one derived seed per run) and score the test mask.

    Single-label data reports accuracy; multi-hot labels report micro-F1.
    """
    started = time.perf_counter()
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    test_mask = np.asarray(test_mask, dtype=bool)
    values = _as_array(embeddings)
    if standardize_inputs:
        values = standardize(values)
    n_classes = _check_inputs(values, labels, train_mask, test_mask)
    multilabel = labels.ndim == 2
    if multilabel and classifier == "sklearn":
        raise DataError("the sklearn classifier backend handles single-label data only")
    stream = derive_rng(seed, "eval")
    run_seeds = [int(s) for s in stream.integers(0, 2**31 - 1, size=runs)]
    x_train, x_test = values[train_mask], values[test_mask]
    y_train, y_test = labels[train_mask], labels[test_mask]
    scores = []
    for run_seed in run_seeds:
        if classifier == "sklearn":
            predictions = _fit_sklearn(x_train, y_train, l2, iterations, run_seed).predict(x_test)
        else:
            weights, bias = fit_logistic(x_train, y_train, n_classes, l2, iterations, lr, run_seed)
            predictions = predict(x_test, weights, bias, multilabel)
        if multilabel:
            scores.append(micro_f1(predictions, y_test))
        else:
            scores.append(float(np.mean(predictions == y_test)))
    report = EvalReport.from_values(
        task="classification",
        metric="micro_f1" if multilabel else "accuracy",
        values=scores,
        config={
            "runs": runs,
            "seed": seed,
            "l2": l2,
            "iterations": iterations,
            "learning_rate": lr,
            "standardize": standardize_inputs,
            "classifier": classifier,
        },
        seconds=time.perf_counter() - started,
        seeds=run_seeds,
    )
    _logger.info(
        "classification finished",
        extra={"runs": runs, "mean": report.mean, "std": report.std, "metric": report.metric},
    )
    return report


def _multi_hot(values: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes, dtype=bool)[values]


def micro_f1(predictions: np.ndarray, labels: np.ndarray) -> float:
    """
    2TP / (2TP + FP + FN) pooled over every (node, label) decision.

    Integer vectors are treated as single-label classes; 2-D inputs as
    multi-hot label matrices. An empty denominator scores 0.0.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DimensionError(f"predictions {predictions.shape} and labels {labels.shape} are not aligned")
    if labels.ndim == 1:
        n_classes = int(max(predictions.max(initial=0), labels.max(initial=0))) + 1
        predictions = _multi_hot(predictions.astype(np.int64), n_classes)
        labels = _multi_hot(labels.astype(np.int64), n_classes)
    else:
        predictions = predictions.astype(bool)
        labels = labels.astype(bool)
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        return 0.0
    return 2.0 * tp / denominator


def auc_score(positive: np.ndarray, negative: np.ndarray) -> float:
    """Mann-Whitney AUC from average ranks; ties earn half credit."""
    positive = np.asarray(positive, dtype=np.float64).ravel()
    negative = np.asarray(negative, dtype=np.float64).ravel()
    if positive.size == 0 or negative.size == 0:
        raise DataError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([positive, negative]))
    n_pos = positive.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * negative.size))


def pair_scores(values: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Pair logits h_i^T h_j, left unsquashed so large logits do not tie at 1.0."""
    return np.einsum("ij,ij->i", values[pairs[:, 0]], values[pairs[:, 1]])


def link_auc(
    embeddings: Tensor | np.ndarray,
    removed_edges: np.ndarray,
    graph: Graph,
    seed: int = 0,
    runs: int = 10,
    config: Optional[dict] = None,
) -> EvalReport:
    """
    AUC of h_i^T h_j on the removed edges against an equal number of pairs
    unconnected in ``graph`` (the original, undamaged graph), averaged over
    ``runs`` negative resamplings. The ranking matches sigmoid scores.
    """
    started = time.perf_counter()
    values = _as_array(embeddings)
    removed_edges = np.asarray(removed_edges, dtype=np.int64).reshape(-1, 2)
    if removed_edges.shape[0] == 0:
        raise DataError("link prediction needs at least one removed edge")
    if values.shape[0] != graph.n_nodes:
        raise DimensionError(f"embeddings have {values.shape[0]} rows, graph has {graph.n_nodes} nodes")
    positive = pair_scores(values, removed_edges)
    rng = derive_rng(seed, "eval")
    aucs = []
    for _ in range(runs):
        negatives = sample_non_edges(graph, removed_edges.shape[0], rng, unique=True)
        aucs.append(auc_score(positive, pair_scores(values, negatives)))
    echo = {"runs": runs, "seed": seed, "removed_edges": int(removed_edges.shape[0])}
    echo.update(config or {})
    report = EvalReport.from_values(
        task="linkpred",
        metric="auc",
        values=aucs,
        config=echo,
        seconds=time.perf_counter() - started,
        seeds=[seed] * runs,
    )
    _logger.info("link prediction finished", extra={"runs": runs, "mean": report.mean, "std": report.std})
    return report
