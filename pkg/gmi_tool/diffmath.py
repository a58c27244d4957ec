"""
Minimal define-by-run differentiation over dense 2-D float64 matrices.

Forward operations executed inside a ``ComputationRecord`` are appended to
it together with a backward rule; ``backward`` walks the record once in
reverse and accumulates gradients into every tensor that requires them.
Broadcasting is limited to 1 x 1 scalars against matrices.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import special

from .errors import DimensionError, DomainError, NumericalError

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

PAIR_CHUNK = 16384

_local = threading.local()


class Tensor:
    """Dense matrix with a lazily allocated gradient."""

    __slots__ = ("values", "grad", "requires_grad", "record_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(values, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim > 2:
            raise DimensionError(f"tensors are 2-D, got shape {array.shape}")
        self.values = np.ascontiguousarray(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.record_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise DimensionError(f"gradient shape {grad.shape} does not match tensor {self.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values, name: Optional[str] = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


@dataclass
class RecordedOp:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class ComputationRecord:
    """Ordered log of executed operations; confined to the thread that opened it."""

    def __init__(self) -> None:
        self.ops: List[RecordedOp] = []

    def __enter__(self) -> "ComputationRecord":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.ops)

    def append(self, op: RecordedOp) -> int:
        self.ops.append(op)
        return len(self.ops) - 1

    def clear(self) -> None:
        for op in self.ops:
            op.output.record_id = None
        self.ops.clear()


def _stack() -> List[Optional[ComputationRecord]]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_record() -> Optional[ComputationRecord]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def suspended() -> Iterator[None]:
    """Evaluate forward ops without recording them."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _emit(name: str, values: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{name} produced non-finite values", term=name)
    out = Tensor.__new__(Tensor)
    out.values = np.ascontiguousarray(values, dtype=np.float64)
    out.grad = None
    out.requires_grad = False
    out.record_id = None
    out.name = None
    record = active_record()
    if record is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.record_id = record.append(RecordedOp(name, tuple(inputs), out, rule))
    return out


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != (1, 1) and b.shape != (1, 1):
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.array([[grad.sum()]])


# Backward rules live at module level so a single rule can be swapped in
# tests to check that grad_check notices.

def _sigmoid_backward(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * out * (1.0 - out)


def _softplus_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * special.expit(x)


def _log_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad / x


def _prelu_backward(x: np.ndarray, slope: float, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    positive = x > 0
    dx = grad * np.where(positive, 1.0, slope)
    dslope = np.array([[np.sum(grad * np.minimum(x, 0.0))]])
    return dx, dslope


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(s: sp.spmatrix, d: Tensor) -> Tensor:
    """Sparse-constant times dense product; gradients flow into ``d`` only."""
    if s.shape[1] != d.rows:
        raise DimensionError(f"spmm: cannot multiply sparse {s.shape} by {d.shape}")
    s = sp.csr_matrix(s)
    return _emit("spmm", np.asarray(s @ d.values), (d,), lambda g: (np.asarray(s.T @ g),))


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", a.values.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Tuple[int, int]) -> Tensor:
    if shape[0] * shape[1] != a.values.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    original = a.shape
    return _emit("reshape", a.values.reshape(shape), (a,), lambda g: (g.reshape(original),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _emit(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _emit(
        "sub",
        a.values - b.values,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_broadcast("mul", a, b)
    av, bv = a.values, b.values
    return _emit(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_reduce_to(g * bv, a.shape), _reduce_to(g * av, b.shape)),
    )


elementwise_mul = mul


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", a.values * factor, (a,), lambda g: (g * factor,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum_all", np.array([[a.values.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Mean over all entries (1x1), over rows (axis=0, 1xC) or over columns (axis=1, Rx1)."""
    rows, cols = a.shape
    if axis is None:
        count = rows * cols
        return _emit(
            "mean", np.array([[a.values.mean()]]), (a,), lambda g: (np.full((rows, cols), g[0, 0] / count),)
        )
    if axis == 0:
        return _emit(
            "mean", a.values.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / rows, rows, axis=0),)
        )
    if axis == 1:
        return _emit(
            "mean", a.values.mean(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g / cols, cols, axis=1),)
        )
    raise DimensionError(f"mean: axis must be None, 0 or 1, got {axis}")


def log(a: Tensor) -> Tensor:
    x = a.values
    if np.any(x <= 0):
        raise DomainError(f"log of non-positive value (min {x.min():.3g})")
    return _emit("log", np.log(x), (a,), lambda g: (_log_backward(x, g),))


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.values)
    return _emit("sigmoid", out, (a,), lambda g: (_sigmoid_backward(out, g),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x) in the overflow-safe form max(x, 0) + log1p(e^-|x|)."""
    x = a.values
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _emit("softplus", out, (a,), lambda g: (_softplus_backward(x, g),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    if slope.shape != (1, 1):
        raise DimensionError(f"prelu: slope must be 1x1, got {slope.shape}")
    xv = x.values
    a = float(slope.values[0, 0])
    out = np.maximum(xv, 0.0) + a * np.minimum(xv, 0.0)
    return _emit("prelu", out, (x, slope), lambda g: _prelu_backward(xv, a, g))


def pair_dot(a: Tensor, b: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """
    Row-pair inner products ``a[rows[p]] . b[cols[p]]`` as a P x 1 tensor.

    The backward pass scatters through a sparse P-pattern matrix, so memory
    stays linear in the number of pairs.
    """
    if a.cols != b.cols:
        raise DimensionError(f"pair_dot: row widths differ, {a.shape} vs {b.shape}")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise DimensionError("pair_dot: rows and cols must have the same length")
    av, bv = a.values, b.values
    out = np.empty(rows.size)
    for start in range(0, rows.size, PAIR_CHUNK):
        window = slice(start, start + PAIR_CHUNK)
        out[window] = np.einsum("ij,ij->i", av[rows[window]], bv[cols[window]])

    def rule(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pattern = sp.csr_matrix((g.ravel(), (rows, cols)), shape=(av.shape[0], bv.shape[0]))
        return np.asarray(pattern @ bv), np.asarray(pattern.T @ av)

    return _emit("pair_dot", out.reshape(-1, 1), (a, b), rule)


def backward(record: ComputationRecord, loss: Tensor) -> None:
    """Accumulate d loss / d t into every tensor that requires a gradient, then clear the record."""
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any trainable tensor")
    loss.accumulate(np.ones((1, 1)))
    for op in reversed(record.ops):
        grad = op.output.grad
        if grad is None:
            continue
        for tensor, contribution in zip(op.inputs, op.backward(grad)):
            if contribution is None or not tensor.requires_grad:
                continue
            tensor.accumulate(contribution)
    record.clear()


@dataclass
class GradCheckResult:
    max_relative_error: float
    parameter: Optional[int]
    coordinate: Optional[Tuple[int, int]]
    analytic: float
    numeric: float


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckResult:
    """
    Compare analytic gradients of a scalar function against central differences.

    ``f`` builds the forward pass from ``params`` (closed over) and must be
    deterministic. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; the worst coordinate is reported.
    """
    for p in params:
        p.zero_grad()
    with ComputationRecord() as record:
        loss = f()
    backward(record, loss)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]

    worst = GradCheckResult(0.0, None, None, 0.0, 0.0)
    with suspended():
        for index, p in enumerate(params):
            flat = p.values.reshape(-1)
            grad_flat = analytic[index].reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + eps
                plus = f().item()
                flat[k] = original - eps
                minus = f().item()
                flat[k] = original
                numeric = (plus - minus) / (2.0 * eps)
                a = grad_flat[k]
                error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                if error > worst.max_relative_error or worst.parameter is None:
                    coordinate = tuple(int(c) for c in np.unravel_index(k, p.shape))
                    worst = GradCheckResult(float(error), index, coordinate, float(a), float(numeric))  # type: ignore[arg-type]
    for p in params:
        p.zero_grad()
    return worst
