from __future__ import annotations

import numpy as np
import pytest

from gmi_tool import diffmath as dm
from gmi_tool.encoder import (
    EncoderLayer,
    EncoderParams,
    compressed_input,
    encode,
    glorot_init,
    load_encoder,
    save_encoder,
)
from gmi_tool.errors import CheckpointError, DimensionError
from gmi_tool.graph import from_edges


def _params(weights, slope=0.25, **kwargs) -> EncoderParams:
    layers = [EncoderLayer(dm.parameter(w), dm.parameter([[slope]])) for w in weights]
    return EncoderParams(layers, hidden_dim=np.asarray(weights[-1]).shape[1], **kwargs)


def test_glorot_bounds_and_determinism() -> None:
    small = glorot_init(3, 3, seed=0).values
    assert np.all(np.abs(small) <= 1.0)

    wide = glorot_init(1433, 512, seed=1).values
    bound = np.sqrt(6.0 / 1945.0)
    assert bound == pytest.approx(0.05554, abs=1e-5)
    assert np.abs(wide).max() <= bound
    np.testing.assert_array_equal(wide, glorot_init(1433, 512, seed=1).values)


def test_glorot_sample_mean_is_centered() -> None:
    values = glorot_init(1000, 1000, seed=2).values
    standard_error = np.sqrt(6.0 / 2000.0) / np.sqrt(3.0) / np.sqrt(values.size)

    assert abs(values.mean()) < 3 * standard_error


def test_glorot_rejects_empty_dimensions() -> None:
    with pytest.raises(DimensionError):
        glorot_init(0, 4, seed=0)


def test_isolated_node_identity_layer_returns_features() -> None:
    graph = from_edges(1, [], np.array([[0.3, 2.0]]))

    hidden, per_layer = encode(graph, _params([np.eye(2)]))

    np.testing.assert_allclose(hidden.values, graph.features)
    assert len(per_layer) == 1


def test_two_node_clique_matches_hand_propagation() -> None:
    graph = from_edges(2, [(0, 1)], np.array([[1.0], [3.0]]))

    hidden, per_layer = encode(graph, _params([[[2.0]], [[-1.0]]], slope=0.1))

    # Layer 1: A_hat X = [2, 2], times 2 -> [4, 4]; layer 2: [4, 4] * -1 -> PReLU(-4) = -0.4.
    np.testing.assert_allclose(per_layer[0].values, [[4.0], [4.0]])
    np.testing.assert_allclose(hidden.values, [[-0.4], [-0.4]])


def test_encoder_shape_and_determinism(toy) -> None:
    params = EncoderParams.initialize(toy.n_features, 8, 2, np.random.default_rng(0))
    again = EncoderParams.initialize(toy.n_features, 8, 2, np.random.default_rng(0))

    hidden, per_layer = encode(toy, params)

    assert hidden.shape == (6, 8)
    assert [t.shape for t in per_layer] == [(6, 8), (6, 8)]
    np.testing.assert_array_equal(hidden.values, encode(toy, again)[0].values)


def test_encoder_is_permutation_equivariant(toy) -> None:
    params = EncoderParams.initialize(toy.n_features, 5, 3, np.random.default_rng(4))
    perm = np.random.default_rng(6).permutation(toy.n_nodes)

    base, _ = encode(toy, params)
    moved, _ = encode(toy.permuted(perm), params)

    np.testing.assert_allclose(moved.values[perm], base.values, atol=1e-9)


def test_residual_shortcuts_change_deep_outputs(toy) -> None:
    plain = EncoderParams.initialize(toy.n_features, 6, 3, np.random.default_rng(1))
    shortcut = plain.copy()
    shortcut.residual = True

    np.testing.assert_array_equal(encode(toy, plain)[1][1].values, encode(toy, shortcut)[1][1].values)
    assert not np.allclose(encode(toy, plain)[0].values, encode(toy, shortcut)[0].values)


def test_feature_width_mismatch_is_rejected(toy) -> None:
    params = EncoderParams.initialize(toy.n_features + 1, 4, 1, np.random.default_rng(0))

    with pytest.raises(DimensionError):
        encode(toy, params)


def test_layer_widths_must_chain() -> None:
    with pytest.raises(DimensionError):
        _params([np.ones((3, 4)), np.ones((5, 4))])


def test_compressed_input_is_plain_projection() -> None:
    rng = np.random.default_rng(3)
    features = rng.random((5, 4))
    features[2] = 0.0
    graph = from_edges(5, [(0, 1), (1, 2)], features)
    weight = rng.normal(size=(4, 2))

    out = compressed_input(graph, _params([weight])).values

    np.testing.assert_allclose(out, features @ weight, atol=1e-12)
    assert np.all(out[2] == 0.0)
    identity = compressed_input(graph, _params([np.eye(4)])).values
    np.testing.assert_array_equal(identity, features)


def test_encoder_file_round_trip_and_shape_check(tmp_path, toy) -> None:
    params = EncoderParams.initialize(toy.n_features, 4, 2, np.random.default_rng(0), residual=True)
    path = tmp_path / "encoder.gmip"
    save_encoder(path, params)

    loaded = load_encoder(path, expected=params)

    assert loaded.residual is True
    for name, tensor in params.named_parameters().items():
        np.testing.assert_array_equal(loaded.named_parameters()[name].values, tensor.values)
    wider = EncoderParams.initialize(toy.n_features, 5, 2, np.random.default_rng(0))
    with pytest.raises(CheckpointError):
        load_encoder(path, expected=wider)


def test_encoder_file_rejects_wrong_magic(tmp_path) -> None:
    path = tmp_path / "bogus.gmip"
    path.write_bytes(b"NOPE" + b"\x00" * 16)

    with pytest.raises(CheckpointError):
        load_encoder(path)
