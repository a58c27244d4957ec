from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from gmi_tool import diffmath as dm
from gmi_tool.config import GmiConfig
from gmi_tool.encoder import EncoderParams, encode
from gmi_tool.errors import DataError, DimensionError
from gmi_tool.graph import build_support_index, from_edges
from gmi_tool.objective import (
    Discriminator,
    NegativeBatch,
    bilinear_logit,
    discriminator_count,
    effective_features,
    fmi_term,
    forward_loss,
    gmi_loss,
    initialize_discriminators,
    jsd_local_mi,
    sample_negatives,
    topology_term,
    weights,
)


def _sp(x: float) -> float:
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def _setup(graph, config: GmiConfig, seed: int = 0):
    rng = np.random.default_rng(seed)
    params = EncoderParams.initialize(
        graph.n_features, config.hidden_dim, config.depth, rng, dense_gmi=config.dense_gmi
    )
    d_x = config.hidden_dim if config.compressed_input else graph.n_features
    discs = initialize_discriminators(config, d_x, rng)
    support = build_support_index(graph)
    negatives = sample_negatives(graph, support, config.negatives, config.topology_negatives_per_edge, rng, seed)
    return params, discs, support, negatives


def test_bilinear_logit_cases() -> None:
    h = dm.constant([[1.0, 0.0, 0.0]])
    assert bilinear_logit(h, h, Discriminator(dm.constant(np.zeros((3, 3))))).item() == 0.0
    assert bilinear_logit(h, h, Discriminator(dm.constant(np.eye(3)))).item() == 1.0

    rng = np.random.default_rng(0)
    hv, xv, theta = rng.normal(size=3), rng.normal(size=3), rng.normal(size=(3, 3))
    expected = sum(hv[a] * theta[a, b] * xv[b] for a in range(3) for b in range(3))
    got = bilinear_logit(dm.constant([hv]), dm.constant([xv]), Discriminator(dm.constant(theta))).item()
    assert got == pytest.approx(expected, abs=1e-12)


def test_bilinear_logit_shape_mismatch() -> None:
    with pytest.raises(DimensionError):
        bilinear_logit(dm.constant(np.ones((1, 2))), dm.constant(np.ones((1, 3))), Discriminator(dm.constant(np.eye(3))))


def test_jsd_local_mi_fixed_points() -> None:
    assert jsd_local_mi(0.0, [0.0]).item() == pytest.approx(-2.0 * math.log(2.0), abs=1e-12)
    assert jsd_local_mi(0.0, [0.0, 0.0, 0.0]).item() == pytest.approx(-2.0 * math.log(2.0), abs=1e-12)
    assert jsd_local_mi(40.0, [-40.0]).item() == pytest.approx(0.0, abs=1e-15)
    assert jsd_local_mi(1.0, [-1.0, 0.0]).item() == pytest.approx(-0.816466, abs=1e-6)


def test_jsd_local_mi_never_positive() -> None:
    rng = np.random.default_rng(1)
    pos = dm.constant(rng.uniform(-20, 20, size=(50, 1)))
    neg = dm.constant(rng.uniform(-20, 20, size=(50, 4)))

    assert np.all(jsd_local_mi(pos, neg).values <= 0.0)


def test_jsd_local_mi_requires_negatives() -> None:
    with pytest.raises(DimensionError):
        jsd_local_mi(0.0, [])


def test_weights_modes(toy) -> None:
    support = build_support_index(toy)
    anchors, _ = support.pairs()
    zeros = dm.constant(np.zeros((toy.n_nodes, 2)))

    mean = weights(zeros, support, "mean").values.ravel()
    assert np.allclose(mean[anchors == 2], 0.25)

    orthogonal = dm.constant([[1.0, 0.0], [0.0, 1.0]])
    pair_support = build_support_index(from_edges(2, [(0, 1)], np.eye(2)))
    adaptive = weights(orthogonal, pair_support, "adaptive", np.array([0]), np.array([1]))
    assert adaptive.item() == 0.5
    aligned = dm.constant([[2.0, 0.0], [2.0, 0.0]])
    assert weights(aligned, pair_support, "adaptive", np.array([0]), np.array([1])).item() == pytest.approx(0.982014, abs=1e-6)


def test_fmi_term_with_zero_theta(toy) -> None:
    config = GmiConfig(hidden_dim=3, depth=1, negatives=2, compressed_input=False)
    params, _, support, negatives = _setup(toy, config)
    hidden, _ = encode(toy, params)
    disc = Discriminator(dm.constant(np.zeros((3, toy.n_features))))
    pair_weights = weights(hidden, support, "mean", negatives.anchors, negatives.members)

    value = fmi_term(hidden, dm.constant(toy.features), support, disc, negatives, pair_weights).item()

    # Mean weights sum to 1 per node, so the total is -2 ln 2.
    assert value == pytest.approx(-2.0 * math.log(2.0), abs=1e-12)


def test_fmi_term_single_isolated_node() -> None:
    graph = from_edges(1, [], np.array([[1.0, 2.0]]))
    support = build_support_index(graph)
    hidden = dm.constant([[0.5, -1.0]])
    disc = Discriminator(dm.constant([[1.0, 0.0], [0.0, 1.0]]))
    batch = NegativeBatch(np.array([0]), np.array([0]), np.array([[0]]), np.empty((0, 2), dtype=np.int64))

    value = fmi_term(hidden, dm.constant(graph.features), support, disc, batch, weights(hidden, support, "mean"))

    logit = 0.5 * 1.0 + (-1.0) * 2.0
    assert value.item() == pytest.approx(jsd_local_mi(logit, [logit]).item(), abs=1e-15)


@pytest.mark.parametrize("mode", ["mean", "adaptive"])
def test_fmi_term_matches_loop_reference(path_graph, mode) -> None:
    config = GmiConfig(hidden_dim=2, depth=1, negatives=3, compressed_input=False, weight_mode=mode)
    params, discs, support, negatives = _setup(path_graph, config, seed=5)
    hidden, _ = encode(path_graph, params)
    h, x, theta = hidden.values, path_graph.features, discs[0].theta.values
    pair_weights = weights(hidden, support, mode, negatives.anchors, negatives.members)

    value = fmi_term(hidden, dm.constant(x), support, discs[0], negatives, pair_weights).item()

    expected = 0.0
    for p, (i, j) in enumerate(zip(negatives.anchors, negatives.members)):
        pos = float(h[i] @ theta @ x[j])
        negs = [float(h[i] @ theta @ x[k]) for k in negatives.negatives[p]]
        local = -_sp(-pos) - sum(_sp(v) for v in negs) / len(negs)
        if mode == "mean":
            w = 1.0 / len(support.support(i))
        else:
            w = 1.0 / (1.0 + math.exp(-float(h[i] @ h[j])))
        expected += w * local
    assert value == pytest.approx(expected / 3.0, abs=1e-12)


def test_topology_term_two_node_clique() -> None:
    graph = from_edges(2, [(0, 1)], np.eye(2))
    hidden = dm.constant([[1.0, 0.0], [0.5, 0.0]])

    value = topology_term(hidden, graph, topology_negatives_per_edge=1, seed=0).item()

    assert value == pytest.approx(-_sp(-0.5), abs=1e-12)
    flat = topology_term(dm.constant(np.zeros((2, 2))), graph).item()
    assert flat == pytest.approx(math.log(0.5), abs=1e-12)


def test_topology_term_saturates_to_zero(path_graph) -> None:
    # Edge logits h0.h1 = h1.h2 = +40, non-edge logit h0.h2 = 1 - 41 = -40.
    y = np.sqrt(41.0)
    hidden = dm.constant([[1.0, y], [40.0, 0.0], [1.0, -y]])

    value = topology_term(hidden, path_graph, non_edges=np.array([[0, 2]])).item()

    assert value == pytest.approx(0.0, abs=1e-15)


def test_topology_term_is_never_positive(toy) -> None:
    rng = np.random.default_rng(3)
    for _ in range(5):
        value = topology_term(dm.constant(rng.normal(size=(6, 3))), toy, seed=rng).item()
        assert value <= 0.0


def test_topology_term_needs_edges() -> None:
    with pytest.raises(DataError):
        topology_term(dm.constant(np.zeros((2, 1))), from_edges(2, [], np.eye(2)))


def test_loss_reduces_to_single_terms(toy) -> None:
    config = GmiConfig(hidden_dim=3, depth=2, negatives=2)
    params, discs, support, negatives = _setup(toy, config)
    hidden, per_layer = encode(toy, params)
    features = effective_features(toy, params, config)

    only_fmi = gmi_loss(toy, hidden, per_layer, discs, replace(config, beta=0.0), negatives, features, support)
    only_topology = gmi_loss(toy, hidden, per_layer, discs, replace(config, alpha=0.0), negatives, features, support)

    assert only_fmi.total.item() == -only_fmi.fmi
    assert only_fmi.topology == 0.0
    assert only_topology.total.item() == -only_topology.topology
    assert only_topology.fmi == 0.0
    with pytest.raises(ValueError):
        gmi_loss(toy, hidden, per_layer, discs, replace(config, alpha=0.0, beta=0.0), negatives, features, support)


def test_dense_gmi_uses_one_discriminator_per_layer(toy) -> None:
    dense = GmiConfig(hidden_dim=3, depth=3, dense_gmi=True)

    assert discriminator_count(dense) == 3
    assert discriminator_count(replace(dense, shared_discriminator=True)) == 1
    assert discriminator_count(replace(dense, dense_gmi=False)) == 1

    params, discs, support, negatives = _setup(toy, dense)
    loss = forward_loss(toy, params, discs, dense, negatives, support=support)
    assert np.isfinite(loss.total.item())


def test_negatives_are_row_shuffles(toy) -> None:
    support = build_support_index(toy)
    batch = sample_negatives(toy, support, 4, 1, np.random.default_rng(0))

    assert batch.k == 4
    assert batch.negatives.shape == (batch.members.size, 4)
    # Each column is one permutation of the nodes indexed by the member.
    for k in range(4):
        column = batch.negatives[:, k]
        mapping = {}
        for member, negative in zip(batch.members, column):
            assert mapping.setdefault(int(member), int(negative)) == int(negative)
        assert sorted(mapping.values()) == list(range(toy.n_nodes))
    assert batch.non_edges.shape == (toy.n_edges, 2)


@pytest.mark.parametrize("mode", ["mean", "adaptive"])
def test_loss_is_permutation_invariant(toy, mode) -> None:
    config = GmiConfig(hidden_dim=4, depth=2, negatives=3, weight_mode=mode)
    params, discs, support, negatives = _setup(toy, config, seed=2)
    base = forward_loss(toy, params, discs, config, negatives, support=support).total.item()
    rng = np.random.default_rng(12)

    for _ in range(20):
        perm = rng.permutation(toy.n_nodes)
        moved = toy.permuted(perm)
        value = forward_loss(moved, params, discs, config, negatives.permuted(perm)).total.item()
        assert value == pytest.approx(base, abs=1e-9)


def test_loss_stays_finite_for_bounded_parameters(toy) -> None:
    config = GmiConfig(hidden_dim=3, depth=2, negatives=2, weight_mode="adaptive")
    params, discs, support, negatives = _setup(toy, config)
    rng = np.random.default_rng(4)
    for tensor in params.parameters() + [d.theta for d in discs]:
        tensor.values[...] = rng.uniform(-10, 10, size=tensor.shape)

    loss = forward_loss(toy, params, discs, config, negatives, support=support)

    assert np.isfinite(loss.total.item())
