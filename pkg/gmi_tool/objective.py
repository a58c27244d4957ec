"""
The graphical mutual information objective.

FMI part: weighted Jensen-Shannon local MI estimates between every node's
embedding and each feature row of its support graph, scored by a bilinear
discriminator against row-shuffled negatives. Topology part: cross-entropy
between embedding similarities and edge indicators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import diffmath as dm
from .config import GmiConfig
from .diffmath import Tensor
from .encoder import EncoderParams, compressed_input, encode, glorot_init
from .errors import DataError, DimensionError
from .graph import Graph, SupportGraphIndex, build_support_index, sample_non_edges


@dataclass
class Discriminator:
    theta: Tensor

    @classmethod
    def initialize(cls, d_h: int, d_x: int, rng: np.random.Generator, name: str = "disc.0.theta") -> "Discriminator":
        theta = glorot_init(d_h, d_x, rng)
        theta.name = name
        return cls(theta)

    def copy(self) -> "Discriminator":
        return Discriminator(dm.parameter(self.theta.values, name=self.theta.name))


@dataclass(frozen=True)
class NegativeBatch:
    """
    Negatives for one training step.

    ``negatives[p, k]`` is the feature row standing in for ``members[p]``
    under the k-th row shuffle; ``non_edges`` are the sampled non-adjacent
    pairs used by the topology term.
    """

    anchors: np.ndarray
    members: np.ndarray
    negatives: np.ndarray
    non_edges: np.ndarray
    seed: Optional[int] = None

    @property
    def k(self) -> int:
        return int(self.negatives.shape[1])

    def permuted(self, perm: np.ndarray) -> "NegativeBatch":
        perm = np.asarray(perm, dtype=np.int64)
        return NegativeBatch(
            anchors=perm[self.anchors],
            members=perm[self.members],
            negatives=perm[self.negatives],
            non_edges=perm[self.non_edges],
            seed=self.seed,
        )


@dataclass
class GmiLoss:
    total: Tensor
    fmi: float
    topology: float


def sample_negatives(
    graph: Graph,
    support: SupportGraphIndex,
    k: int,
    topology_negatives_per_edge: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> NegativeBatch:
    if k < 1:
        raise DimensionError("at least one negative per pair is required")
    anchors, members = support.pairs()
    shuffles = np.stack([rng.permutation(graph.n_nodes) for _ in range(k)], axis=1)
    negatives = shuffles[members]
    non_edges = np.empty((0, 2), dtype=np.int64)
    if topology_negatives_per_edge and graph.n_edges:
        count = graph.n_edges * topology_negatives_per_edge
        available = graph.n_nodes * (graph.n_nodes - 1) // 2 - graph.n_edges
        if available > 0:
            non_edges = sample_non_edges(graph, count, rng)
    return NegativeBatch(anchors, members, negatives, non_edges, seed)


def bilinear_logit(h: Tensor, x: Tensor, disc: Discriminator) -> Tensor:
    """Pre-sigmoid discriminator score h^T Theta x for one (embedding, feature) pair."""
    if h.cols != disc.theta.rows or x.cols != disc.theta.cols:
        raise DimensionError(
            f"bilinear_logit: h {h.shape}, x {x.shape} do not fit theta {disc.theta.shape}"
        )
    return dm.matmul(dm.matmul(h, disc.theta), dm.transpose(x))


def bilinear_scores(
    embeddings: Tensor, features: Tensor, disc: Discriminator, anchors: np.ndarray, members: np.ndarray
) -> Tensor:
    """Batched bilinear logits for the pairs (anchors[p], members[p])."""
    if embeddings.cols != disc.theta.rows or features.cols != disc.theta.cols:
        raise DimensionError(
            f"discriminator theta {disc.theta.shape} does not fit H {embeddings.shape} and X {features.shape}"
        )
    projected = dm.matmul(embeddings, disc.theta)
    return dm.pair_dot(projected, features, anchors, members)


def jsd_local_mi(pos_logit: Tensor | float, neg_logits: Tensor | Sequence[float]) -> Tensor:
    """
    Jensen-Shannon local MI estimate -sp(-pos) - mean_k sp(neg_k).

    ``pos_logit`` is P x 1 (or a float), ``neg_logits`` P x K (or a list of
    K floats); returns P x 1.
    """
    pos = pos_logit if isinstance(pos_logit, Tensor) else dm.constant([[float(pos_logit)]])
    neg = neg_logits if isinstance(neg_logits, Tensor) else dm.constant(np.asarray(neg_logits, dtype=np.float64).reshape(1, -1))
    if neg.values.size == 0 or neg.cols == 0:
        raise DimensionError("jsd_local_mi needs at least one negative logit")
    if neg.rows != pos.rows or pos.cols != 1:
        raise DimensionError(f"jsd_local_mi: positives {pos.shape} vs negatives {neg.shape}")
    joint = dm.scale(dm.softplus(dm.scale(pos, -1.0)), -1.0)
    marginal = dm.mean(dm.softplus(neg), axis=1)
    return dm.sub(joint, marginal)


def weights(
    embeddings: Tensor,
    support: SupportGraphIndex,
    mode: str,
    anchors: Optional[np.ndarray] = None,
    members: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Per-pair weights w_ij: 1 / i_n in ``mean`` mode (constant), or
    sigmoid(h_i^T h_j) in ``adaptive`` mode (differentiable through H).
    """
    if embeddings.rows != support.offsets.size - 1:
        raise DimensionError(f"H has {embeddings.rows} rows, support index covers {support.offsets.size - 1} nodes")
    if anchors is None or members is None:
        anchors, members = support.pairs()
    if mode == "mean":
        return dm.constant((1.0 / support.counts[anchors]).reshape(-1, 1))
    if mode == "adaptive":
        return dm.sigmoid(dm.pair_dot(embeddings, embeddings, anchors, members))
    raise ValueError(f"unknown weight mode {mode!r}")


def fmi_term(
    embeddings: Tensor,
    features: Tensor,
    support: SupportGraphIndex,
    disc: Discriminator,
    negatives: NegativeBatch,
    pair_weights: Tensor,
) -> Tensor:
    """(1/N) sum_i sum_{j in support(i)} w_ij * I_JSD(h_i; x_j)."""
    anchors, members = negatives.anchors, negatives.members
    k = negatives.k
    pos = bilinear_scores(embeddings, features, disc, anchors, members)
    neg = bilinear_scores(embeddings, features, disc, np.repeat(anchors, k), negatives.negatives.reshape(-1))
    local = jsd_local_mi(pos, dm.reshape(neg, (anchors.size, k)))
    weighted = dm.sum_all(dm.mul(pair_weights, local))
    return dm.scale(weighted, 1.0 / embeddings.rows)


def topology_term(
    embeddings: Tensor,
    graph: Graph,
    topology_negatives_per_edge: int = 1,
    seed: int | np.random.Generator = 0,
    non_edges: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Mean cross-entropy a_ij log w_ij + (1 - a_ij) log(1 - w_ij) with
    w_ij = sigmoid(h_i^T h_j) over every edge and sampled non-edges.

    Evaluated in logit form: log sigmoid(z) = -sp(-z), log(1 - sigmoid(z)) = -sp(z).
    The value is <= 0 and is to be maximized.
    """
    edges = graph.edges()
    if edges.shape[0] == 0:
        raise DataError("topology term needs at least one edge")
    if non_edges is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        available = graph.n_nodes * (graph.n_nodes - 1) // 2 - graph.n_edges
        count = edges.shape[0] * topology_negatives_per_edge if available > 0 else 0
        non_edges = sample_non_edges(graph, count, rng)
    edge_logits = dm.pair_dot(embeddings, embeddings, edges[:, 0], edges[:, 1])
    total = dm.scale(dm.sum_all(dm.softplus(dm.scale(edge_logits, -1.0))), -1.0)
    if non_edges.shape[0]:
        gap_logits = dm.pair_dot(embeddings, embeddings, non_edges[:, 0], non_edges[:, 1])
        total = dm.sub(total, dm.sum_all(dm.softplus(gap_logits)))
    return dm.scale(total, 1.0 / (edges.shape[0] + non_edges.shape[0]))


def gmi_loss(
    graph: Graph,
    embeddings: Tensor,
    per_layer: List[Tensor],
    discriminators: List[Discriminator],
    config: GmiConfig,
    negatives: NegativeBatch,
    features: Tensor,
    support: Optional[SupportGraphIndex] = None,
) -> GmiLoss:
    """
    loss = -(alpha * FMI + beta * topology). Under dense GMI the FMI term is
    the mean over every layer output, each scored by its own discriminator
    (or by the single shared one). Edgeless graphs (e.g. sampled
    neighborhoods) contribute no topology term.
    """
    support = build_support_index(graph) if support is None else support
    fmi_value = 0.0
    topology_value = 0.0
    parts: List[Tensor] = []
    if config.alpha:
        outputs = per_layer if config.dense_gmi else [embeddings]
        terms = []
        for index, output in enumerate(outputs):
            disc = discriminators[0] if config.shared_discriminator else discriminators[index]
            pair_weights = weights(output, support, config.weight_mode, negatives.anchors, negatives.members)
            terms.append(fmi_term(output, features, support, disc, negatives, pair_weights))
        fmi = terms[0]
        for term in terms[1:]:
            fmi = dm.add(fmi, term)
        if len(terms) > 1:
            fmi = dm.scale(fmi, 1.0 / len(terms))
        fmi_value = fmi.item()
        parts.append(dm.scale(fmi, -config.alpha))
    if config.beta and graph.n_edges:
        topology = topology_term(embeddings, graph, non_edges=negatives.non_edges)
        topology_value = topology.item()
        parts.append(dm.scale(topology, -config.beta))
    if not parts:
        raise ValueError("alpha and beta are both zero; the objective is empty")
    total = parts[0]
    for part in parts[1:]:
        total = dm.add(total, part)
    return GmiLoss(total=total, fmi=fmi_value, topology=topology_value)


def discriminator_count(config: GmiConfig) -> int:
    if config.dense_gmi and not config.shared_discriminator:
        return config.depth
    return 1


def initialize_discriminators(
    config: GmiConfig, d_x: int, rng: np.random.Generator
) -> List[Discriminator]:
    return [
        Discriminator.initialize(config.hidden_dim, d_x, rng, name=f"disc.{index}.theta")
        for index in range(discriminator_count(config))
    ]


def effective_features(graph: Graph, params: EncoderParams, config: GmiConfig) -> Tensor:
    """Raw features, or X W^(0) under compressed input."""
    if config.compressed_input:
        return compressed_input(graph, params)
    return dm.constant(graph.features)


def forward_loss(
    graph: Graph,
    params: EncoderParams,
    discriminators: List[Discriminator],
    config: GmiConfig,
    negatives: NegativeBatch,
    adjacency=None,
    support: Optional[SupportGraphIndex] = None,
) -> GmiLoss:
    """Encode and evaluate the objective in one call (used by training and checks)."""
    embeddings, per_layer = encode(graph, params, adjacency)
    features = effective_features(graph, params, config)
    return gmi_loss(graph, embeddings, per_layer, discriminators, config, negatives, features, support)
