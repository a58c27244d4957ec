from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import diffmath as dm
from .diffmath import Tensor
from .errors import CheckpointError, DimensionError
from .graph import Graph, normalized_adjacency
from .utils import read_arrays, write_arrays

PRELU_INIT = 0.25


@dataclass
class EncoderLayer:
    weight: Tensor
    slope: Tensor

    @property
    def d_in(self) -> int:
        return self.weight.rows

    @property
    def d_out(self) -> int:
        return self.weight.cols


@dataclass
class EncoderParams:
    layers: List[EncoderLayer]
    hidden_dim: int
    residual: bool = False
    dense_gmi: bool = False

    def __post_init__(self) -> None:
        if not self.layers:
            raise DimensionError("encoder needs at least one layer")
        for index, layer in enumerate(self.layers):
            if layer.d_out != self.hidden_dim:
                raise DimensionError(f"layer {index} has width {layer.d_out}, expected {self.hidden_dim}")
            if index and layer.d_in != self.layers[index - 1].d_out:
                raise DimensionError(f"layer {index} input {layer.d_in} != previous output {self.layers[index - 1].d_out}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].d_in

    @classmethod
    def initialize(
        cls,
        in_dim: int,
        hidden_dim: int,
        depth: int,
        rng: np.random.Generator,
        residual: bool = False,
        dense_gmi: bool = False,
    ) -> "EncoderParams":
        layers = []
        d_in = in_dim
        for index in range(depth):
            weight = glorot_init(d_in, hidden_dim, rng)
            weight.name = f"encoder.{index}.weight"
            slope = dm.parameter([[PRELU_INIT]], name=f"encoder.{index}.slope")
            layers.append(EncoderLayer(weight, slope))
            d_in = hidden_dim
        return cls(layers=layers, hidden_dim=hidden_dim, residual=residual, dense_gmi=dense_gmi)

    def named_parameters(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            named[f"encoder.{index}.weight"] = layer.weight
            named[f"encoder.{index}.slope"] = layer.slope
        return named

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def copy(self) -> "EncoderParams":
        layers = [
            EncoderLayer(
                dm.parameter(layer.weight.values, name=layer.weight.name),
                dm.parameter(layer.slope.values, name=layer.slope.name),
            )
            for layer in self.layers
        ]
        return EncoderParams(layers, self.hidden_dim, self.residual, self.dense_gmi)


def glorot_init(d_in: int, d_out: int, seed: int | np.random.Generator) -> Tensor:
    """Uniform in [-a, a] with a = sqrt(6 / (d_in + d_out))."""
    if d_in < 1 or d_out < 1:
        raise DimensionError(f"glorot_init needs positive dimensions, got {d_in}x{d_out}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (d_in + d_out))
    return dm.parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))


def encode(
    graph: Graph,
    params: EncoderParams,
    adjacency: Optional[sp.csr_matrix] = None,
) -> Tuple[Tensor, List[Tensor]]:
    """
    GCN forward pass H^(l+1) = PReLU(A_hat H^(l) W^(l)).

    With ``residual`` an identity shortcut adds the input of layer l-1 to
    the output of layer l for l = 2, 4, ... (zero-based), i.e. one shortcut
    per pair of equal-width hidden layers. Returns the final output and the
    list of every layer output.
    """
    if graph.n_features != params.in_dim:
        raise DimensionError(f"graph has {graph.n_features} features, encoder expects {params.in_dim}")
    a_hat = normalized_adjacency(graph) if adjacency is None else adjacency
    hidden = dm.constant(graph.features)
    inputs: List[Tensor] = []
    per_layer: List[Tensor] = []
    for index, layer in enumerate(params.layers):
        inputs.append(hidden)
        propagated = dm.matmul(dm.spmm(a_hat, hidden), layer.weight)
        out = dm.prelu(propagated, layer.slope)
        if params.residual and index >= 2 and index % 2 == 0:
            out = dm.add(out, inputs[index - 1])
        per_layer.append(out)
        hidden = out
    return hidden, per_layer


def compressed_input(graph: Graph, params: EncoderParams) -> Tensor:
    """X W^(0): the first-layer projection without propagation or activation."""
    return dm.matmul(dm.constant(graph.features), params.layers[0].weight)


def save_encoder(path: str | Path, params: EncoderParams) -> None:
    arrays = {name: t.values for name, t in params.named_parameters().items()}
    metadata = {
        "depth": params.depth,
        "hidden_dim": params.hidden_dim,
        "residual": params.residual,
        "dense_gmi": params.dense_gmi,
    }
    write_arrays(path, b"GMIP", arrays, metadata)


def load_encoder(path: str | Path, expected: Optional[EncoderParams] = None) -> EncoderParams:
    arrays, metadata = read_arrays(path, b"GMIP")
    params = params_from_arrays(arrays, metadata)
    if expected is not None:
        check_shapes(params.named_parameters(), expected.named_parameters())
    return params


def params_from_arrays(arrays: Dict[str, np.ndarray], metadata: Dict, prefix: str = "") -> EncoderParams:
    layers = []
    for index in range(int(metadata["depth"])):
        try:
            weight = arrays[f"{prefix}encoder.{index}.weight"]
            slope = arrays[f"{prefix}encoder.{index}.slope"]
        except KeyError as exc:
            raise CheckpointError(f"missing encoder array {exc}") from exc
        layers.append(
            EncoderLayer(
                dm.parameter(weight, name=f"encoder.{index}.weight"),
                dm.parameter(slope, name=f"encoder.{index}.slope"),
            )
        )
    try:
        return EncoderParams(layers, int(metadata["hidden_dim"]), bool(metadata["residual"]), bool(metadata["dense_gmi"]))
    except DimensionError as exc:
        raise CheckpointError(f"inconsistent encoder layers: {exc}") from exc


def check_shapes(loaded: Dict[str, Tensor], expected: Dict[str, Tensor]) -> None:
    if set(loaded) != set(expected):
        raise CheckpointError(f"parameter names differ: {sorted(set(loaded) ^ set(expected))}")
    for name, tensor in expected.items():
        if loaded[name].shape != tensor.shape:
            raise CheckpointError(f"{name}: checkpoint shape {loaded[name].shape} != expected {tensor.shape}")
