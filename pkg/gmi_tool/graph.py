"""
Sparse attributed graphs: loading, validation, normalization and
connectivity-preserving edge removal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import DataError, ParseError, QuotaError
from .logging_utils import get_logger
from .utils import read_arrays, write_arrays

_logger = get_logger("gmi.graph")

SPLIT_TOKENS = ("train", "val", "test", "none")


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n_nodes: int) -> None:
        for name in ("train", "val", "test"):
            mask = getattr(self, name)
            if mask.shape != (n_nodes,):
                raise DataError(f"{name} mask has shape {mask.shape}, expected ({n_nodes},)")
        overlap = (self.train & self.val) | (self.train & self.test) | (self.val & self.test)
        if overlap.any():
            raise DataError(f"split masks overlap on {int(overlap.sum())} nodes")

    def permuted(self, perm: np.ndarray) -> "SplitMasks":
        return SplitMasks(*(_permute_rows(getattr(self, n), perm) for n in ("train", "val", "test")))


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Immutable undirected attributed graph.

    ``adjacency`` is a symmetric CSR matrix without self-loops and with
    sorted column indices; ``features`` is a dense N x D float64 matrix.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    masks: Optional[SplitMasks] = None
    node_ids: Tuple[str, ...] = ()
    classes: Tuple[str, ...] = ()
    dropped_edges: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        start, stop = self.adjacency.indptr[node], self.adjacency.indptr[node + 1]
        return self.adjacency.indices[start:stop]

    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with i < j, in CSR order."""
        upper = sp.triu(self.adjacency, k=1, format="csr")
        rows = np.repeat(np.arange(self.n_nodes), np.diff(upper.indptr))
        return np.stack([rows, upper.indices], axis=1).astype(np.int64)

    def validate(self) -> None:
        adj = self.adjacency
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise DataError(f"adjacency must be square, got {adj.shape}")
        indptr = adj.indptr
        if indptr[0] != 0 or indptr[-1] != adj.nnz or np.any(np.diff(indptr) < 0):
            raise DataError("adjacency offsets are not a valid CSR row pointer")
        if adj.nnz:
            rows = np.repeat(np.arange(n), np.diff(indptr))
            if np.any(rows == adj.indices):
                raise DataError("adjacency stores self-loops")
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (np.diff(adj.indices) <= 0)):
                raise DataError("adjacency column indices are not strictly increasing per row")
            if (adj != adj.T).nnz:
                raise DataError("adjacency is not symmetric")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataError(
                f"features must have {n} rows, got shape {self.features.shape}"
            )
        if self.labels is not None and self.labels.shape[0] != n:
            raise DataError(f"labels must have {n} rows, got {self.labels.shape[0]}")
        if self.masks is not None:
            self.masks.validate(n)
        if self.node_ids and len(self.node_ids) != n:
            raise DataError(f"node_ids has {len(self.node_ids)} entries for {n} nodes")

    def ids(self) -> Tuple[str, ...]:
        return self.node_ids or tuple(str(i) for i in range(self.n_nodes))

    def with_features(self, features: np.ndarray) -> "Graph":
        return replace(self, features=np.asarray(features, dtype=np.float64))

    def with_masks(self, masks: Optional[SplitMasks]) -> "Graph":
        return replace(self, masks=masks)

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes so that old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        adj = self.adjacency[inverse][:, inverse].tocsr()
        adj.sort_indices()
        node_ids = tuple(self.ids()[k] for k in inverse) if self.node_ids else ()
        return Graph(
            adjacency=adj,
            features=self.features[inverse],
            labels=None if self.labels is None else self.labels[inverse],
            masks=None if self.masks is None else self.masks.permuted(perm),
            node_ids=node_ids,
            classes=self.classes,
            dropped_edges=self.dropped_edges,
        )

    def equals(self, other: "Graph") -> bool:
        def same(a, b) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        masks_equal = (self.masks is None and other.masks is None) or (
            self.masks is not None
            and other.masks is not None
            and all(same(getattr(self.masks, n), getattr(other.masks, n)) for n in ("train", "val", "test"))
        )
        return (
            np.array_equal(self.adjacency.indptr, other.adjacency.indptr)
            and np.array_equal(self.adjacency.indices, other.adjacency.indices)
            and np.array_equal(self.adjacency.data, other.adjacency.data)
            and same(self.features, other.features)
            and same(self.labels, other.labels)
            and masks_equal
            and self.node_ids == other.node_ids
            and self.classes == other.classes
        )


@dataclass(frozen=True)
class SupportGraphIndex:
    """One-hop neighbor lists including the node itself, in CSR form."""

    offsets: np.ndarray
    members: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def support(self, node: int) -> np.ndarray:
        return self.members[self.offsets[node] : self.offsets[node + 1]]

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """(anchor, member) index arrays for every support-graph pair."""
        anchors = np.repeat(np.arange(self.offsets.size - 1), self.counts)
        return anchors, self.members.copy()


@dataclass(frozen=True)
class EdgeSplit:
    damaged: Graph
    removed_edges: np.ndarray
    removal_ratio: float
    protected_edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))


def from_edges(
    n_nodes: int,
    edges: Iterable[Tuple[int, int]] | np.ndarray,
    features: np.ndarray,
    labels: Optional[np.ndarray] = None,
    masks: Optional[SplitMasks] = None,
    node_ids: Sequence[str] = (),
    classes: Sequence[str] = (),
    dropped_edges: int = 0,
) -> Graph:
    """Build a Graph from an edge list: symmetrize, collapse duplicates, drop self-loops."""
    pairs = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    pairs = pairs.reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.sort_indices()
    return Graph(
        adjacency=adj,
        features=np.asarray(features, dtype=np.float64).reshape(n_nodes, -1),
        labels=labels,
        masks=masks,
        node_ids=tuple(node_ids),
        classes=tuple(classes),
        dropped_edges=dropped_edges,
    )


def load_citation_dataset(content_path: str | Path, cites_path: str | Path) -> Graph:
    """
    Parse a ``.content`` / ``.cites`` pair.

    Content lines are ``<id> <f_1> ... <f_D> <label>``; cites lines are
    ``<src> <dst>``. Citations are symmetrized, duplicates collapsed, and
    edges naming unknown ids or citing themselves are dropped and counted.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    for path in (content_path, cites_path):
        if not path.is_file():
            raise DataError(f"dataset file not found: {path}")

    index: Dict[str, int] = {}
    node_ids: List[str] = []
    rows: List[List[float]] = []
    class_index: Dict[str, int] = {}
    labels: List[int] = []
    width: Optional[int] = None
    with content_path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise ParseError(str(content_path), line_number, f"expected id, features and label, got {len(fields)} fields")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(str(content_path), line_number, f"expected {width} fields, got {len(fields)}")
            node_id = fields[0]
            if node_id in index:
                raise DataError(f"{content_path}:{line_number}: duplicate node id {node_id!r}")
            try:
                values = [float(v) for v in fields[1:-1]]
            except ValueError as exc:
                raise ParseError(str(content_path), line_number, f"non-numeric feature ({exc})") from exc
            index[node_id] = len(node_ids)
            node_ids.append(node_id)
            rows.append(values)
            labels.append(class_index.setdefault(fields[-1], len(class_index)))

    if not node_ids:
        raise DataError(f"no nodes in {content_path}")

    edges: List[Tuple[int, int]] = []
    unknown = 0
    self_citations = 0
    with cites_path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ParseError(str(cites_path), line_number, f"expected 2 node ids, got {len(fields)} fields")
            src, dst = index.get(fields[0]), index.get(fields[1])
            if src is None or dst is None:
                unknown += 1
                continue
            if src == dst:
                self_citations += 1
                continue
            edges.append((src, dst))
    dropped = unknown + self_citations

    n = len(node_ids)
    features = np.asarray(rows, dtype=np.float64).reshape(n, (width - 2) if width else 0)
    graph = from_edges(
        n,
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features,
        labels=np.asarray(labels, dtype=np.int64),
        node_ids=node_ids,
        classes=list(class_index),
        dropped_edges=dropped,
    )
    if dropped:
        _logger.warning(
            "dropped citations naming unknown node ids or citing themselves",
            extra={
                "cites_path": str(cites_path),
                "dropped_edges": dropped,
                "unknown_ids": unknown,
                "self_citations": self_citations,
            },
        )
    _logger.info(
        "loaded citation dataset",
        extra={"nodes": graph.n_nodes, "edges": graph.n_edges, "features": graph.n_features, "classes": len(class_index)},
    )
    return graph


def load_split_masks(path: str | Path, n_nodes: int) -> SplitMasks:
    """One token per line from {train, val, test, none}, in node order."""
    tokens: List[str] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            token = line.strip()
            if not token:
                continue
            if token not in SPLIT_TOKENS:
                raise ParseError(str(path), line_number, f"unknown split token {token!r}")
            tokens.append(token)
    if len(tokens) != n_nodes:
        raise DataError(f"{path}: {len(tokens)} split entries for {n_nodes} nodes")
    arr = np.asarray(tokens)
    masks = SplitMasks(train=arr == "train", val=arr == "val", test=arr == "test")
    masks.validate(n_nodes)
    return masks


def write_split_masks(path: str | Path, masks: SplitMasks) -> None:
    tokens = np.full(masks.train.shape, "none", dtype=object)
    tokens[masks.train] = "train"
    tokens[masks.val] = "val"
    tokens[masks.test] = "test"
    Path(path).write_text("".join(f"{t}\n" for t in tokens), encoding="utf-8")


def planetoid_split(
    labels: np.ndarray,
    rng: np.random.Generator,
    per_class: int = 20,
    n_val: int = 500,
    n_test: int = 1000,
) -> SplitMasks:
    """Seeded public-style split: ``per_class`` train nodes per class, then val and test."""
    n = labels.shape[0]
    order = rng.permutation(n)
    train = np.zeros(n, dtype=bool)
    for cls in np.unique(labels):
        members = order[labels[order] == cls][:per_class]
        train[members] = True
    rest = order[~train[order]]
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:n_val]] = True
    test[rest[n_val : n_val + n_test]] = True
    return SplitMasks(train=train, val=val, test=test)


def row_normalize_features(graph: Graph) -> Graph:
    features = graph.features
    sums = features.sum(axis=1, keepdims=True)
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return graph.with_features(features * scale)


def normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of the self-looped adjacency."""
    looped = (graph.adjacency + sp.identity(graph.n_nodes, format="csr")).tocsr()
    looped.sort_indices()
    degrees = np.asarray(looped.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    rows = np.repeat(np.arange(graph.n_nodes), np.diff(looped.indptr))
    data = looped.data * inv_sqrt[rows] * inv_sqrt[looped.indices]
    return sp.csr_matrix((data, looped.indices.copy(), looped.indptr.copy()), shape=looped.shape)


def build_support_index(graph: Graph) -> SupportGraphIndex:
    looped = (graph.adjacency + sp.identity(graph.n_nodes, format="csr")).tocsr()
    looped.sort_indices()
    return SupportGraphIndex(
        offsets=looped.indptr.astype(np.int64),
        members=looped.indices.astype(np.int64),
    )


def count_components(graph: Graph) -> int:
    n_components, _ = csgraph.connected_components(graph.adjacency, directed=False)
    return int(n_components)


def remove_edges(graph: Graph, ratio: float, seed: int | np.random.Generator) -> EdgeSplit:
    """
    Remove ``round(ratio * E)`` undirected edges without disconnecting any component.

    A spanning forest under seeded random edge weights is protected; the
    removed edges are a uniform sample of the remaining (non-forest) edges.
    """
    if not 0.0 <= ratio < 1.0:
        raise DataError(f"removal ratio must lie in [0, 1), got {ratio}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    edges = graph.edges()
    n_edges = edges.shape[0]
    quota = int(round(ratio * n_edges))
    if quota == 0:
        return EdgeSplit(damaged=graph, removed_edges=np.empty((0, 2), dtype=np.int64), removal_ratio=0.0)

    weights = rng.random(n_edges) + 1e-3
    upper = sp.coo_matrix((weights, (edges[:, 0], edges[:, 1])), shape=graph.adjacency.shape).tocsr()
    forest = csgraph.minimum_spanning_tree(upper).tocoo()
    forest_keys = np.minimum(forest.row, forest.col).astype(np.int64) * graph.n_nodes + np.maximum(forest.row, forest.col)
    edge_keys = edges[:, 0] * graph.n_nodes + edges[:, 1]
    protected = np.isin(edge_keys, forest_keys)
    candidates = np.flatnonzero(~protected)
    if quota > candidates.size:
        raise QuotaError(ratio, candidates.size / n_edges)

    chosen = np.sort(rng.permutation(candidates)[:quota])
    keep = np.ones(n_edges, dtype=bool)
    keep[chosen] = False
    damaged = from_edges(
        graph.n_nodes,
        edges[keep],
        graph.features,
        labels=graph.labels,
        masks=graph.masks,
        node_ids=graph.node_ids,
        classes=graph.classes,
        dropped_edges=graph.dropped_edges,
    )
    _logger.info(
        "removed edges",
        extra={"ratio": ratio, "removed": int(quota), "edges": n_edges, "protected": int(protected.sum())},
    )
    return EdgeSplit(
        damaged=damaged,
        removed_edges=edges[chosen],
        removal_ratio=quota / n_edges,
        protected_edges=edges[protected],
    )


def induced_subgraph(graph: Graph, nodes: np.ndarray) -> Graph:
    nodes = np.asarray(nodes, dtype=np.int64)
    adj = graph.adjacency[nodes][:, nodes].tocsr()
    adj.sort_indices()
    return Graph(
        adjacency=adj,
        features=graph.features[nodes],
        labels=None if graph.labels is None else graph.labels[nodes],
        node_ids=tuple(graph.ids()[k] for k in nodes) if graph.node_ids else (),
        classes=graph.classes,
    )


def save_graph_cache(graph: Graph, path: str | Path) -> None:
    arrays = {
        "offsets": graph.adjacency.indptr.astype(np.int64),
        "columns": graph.adjacency.indices.astype(np.int64),
        "values": graph.adjacency.data.astype(np.float64),
        "features": graph.features,
    }
    if graph.labels is not None:
        arrays["labels"] = graph.labels.astype(np.int64)
    if graph.masks is not None:
        for name in ("train", "val", "test"):
            arrays[f"mask_{name}"] = getattr(graph.masks, name).astype(np.uint8)
    metadata = {
        "n_nodes": graph.n_nodes,
        "node_ids": list(graph.node_ids),
        "classes": list(graph.classes),
        "dropped_edges": graph.dropped_edges,
    }
    write_arrays(path, b"GMIG", arrays, metadata)


def load_graph_cache(path: str | Path) -> Graph:
    arrays, metadata = read_arrays(path, b"GMIG")
    n = int(metadata["n_nodes"])
    adjacency = sp.csr_matrix((arrays["values"], arrays["columns"], arrays["offsets"]), shape=(n, n))
    masks = None
    if "mask_train" in arrays:
        masks = SplitMasks(*(arrays[f"mask_{name}"].astype(bool) for name in ("train", "val", "test")))
    return Graph(
        adjacency=adjacency,
        features=arrays["features"],
        labels=arrays.get("labels"),
        masks=masks,
        node_ids=tuple(metadata.get("node_ids", ())),
        classes=tuple(metadata.get("classes", ())),
        dropped_edges=int(metadata.get("dropped_edges", 0)),
    )


def _permute_rows(array: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.empty_like(array)
    out[perm] = array
    return out


ENUMERATION_LIMIT = 2_000_000


def sample_non_edges(
    graph: Graph,
    count: int,
    rng: np.random.Generator,
    unique: bool = False,
) -> np.ndarray:
    """
    Draw ``count`` node pairs (i < j) that are not edges of ``graph``.

    Small graphs enumerate every non-edge; larger ones use rejection
    sampling. With ``unique`` no pair is drawn twice.
    """
    n = graph.n_nodes
    if count <= 0:
        return np.empty((0, 2), dtype=np.int64)
    available = n * (n - 1) // 2 - graph.n_edges
    if available <= 0 or (unique and count > available):
        raise DataError(f"graph has {max(available, 0)} non-adjacent pairs, {count} requested")
    edges = graph.edges()
    existing = edges[:, 0] * n + edges[:, 1]

    if n * (n - 1) // 2 <= ENUMERATION_LIMIT:
        lo, hi = np.triu_indices(n, k=1)
        keys = lo.astype(np.int64) * n + hi
        free = keys[~np.isin(keys, existing)]
        picked = rng.choice(free, size=count, replace=not unique)
        return np.stack([picked // n, picked % n], axis=1).astype(np.int64)

    collected = np.empty(0, dtype=np.int64)
    while collected.size < count:
        draw = max(2 * (count - collected.size), 64)
        i = rng.integers(0, n, size=draw)
        j = rng.integers(0, n, size=draw)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        keys = (lo * n + hi)[lo != hi]
        keys = keys[~np.isin(keys, existing)]
        if unique:
            keys = keys[~np.isin(keys, collected)]
            _, first = np.unique(keys, return_index=True)
            keys = keys[np.sort(first)]
        collected = np.concatenate([collected, keys])
    collected = collected[:count]
    return np.stack([collected // n, collected % n], axis=1).astype(np.int64)


TOY_EDGES = ((0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5))


def toy_graph(seed: int = 0, n_features: int = 4) -> Graph:
    """Two triangles joined by one bridge, random features, one class per triangle."""
    rng = np.random.default_rng(seed)
    features = rng.random((6, n_features))
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
    masks = SplitMasks(
        train=np.array([True, False, False, True, False, False]),
        val=np.array([False, True, False, False, True, False]),
        test=np.array([False, False, True, False, False, True]),
    )
    return from_edges(
        6,
        np.asarray(TOY_EDGES),
        features,
        labels=labels,
        masks=masks,
        node_ids=[f"n{i}" for i in range(6)],
        classes=["left", "right"],
    )
