"""
Exact mutual information on small discrete joint tables.

Used to check, by exhaustive summation, that joint MI dominates the MI of
any sub-group of variables and that the MI between a target and a set of
conditionally independent variables is bracketed by the mean and the sum
of the per-variable MIs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, PropertyFailure
from .logging_utils import get_logger
from .report import PropertyResult, VerifyReport
from .utils import derive_rng

_logger = get_logger("gmi.oracle")

TOLERANCE = 1e-10
PROBABILITY_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class JointTable:
    """Dense joint distribution; axis k holds variable k."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = self.probs
        if probs.ndim < 1:
            raise DimensionError("a joint table needs at least one variable")
        if (probs < 0).any():
            raise DimensionError("joint table has negative entries")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise DimensionError(f"joint table sums to {probs.sum():.15f}, expected 1")

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.probs.shape)

    @property
    def n_vars(self) -> int:
        return self.probs.ndim

    def marginal(self, variables: Sequence[int]) -> np.ndarray:
        """Marginal over ``variables``, axes ordered as given."""
        variables = list(variables)
        others = tuple(v for v in range(self.n_vars) if v not in variables)
        summed = self.probs.sum(axis=others) if others else self.probs
        kept = sorted(variables)
        return np.transpose(summed, [kept.index(v) for v in variables])

    def product(self, other: "JointTable") -> "JointTable":
        """Independent joint of two tables; ``other``'s variables come last."""
        return JointTable(np.multiply.outer(self.probs, other.probs))


def _check_groups(table: JointTable, group_a: Sequence[int], group_b: Sequence[int]) -> None:
    a, b = set(group_a), set(group_b)
    if not a or not b:
        raise DimensionError("both variable groups must be non-empty")
    if len(a) != len(group_a) or len(b) != len(group_b):
        raise DimensionError("variable groups contain duplicates")
    if a & b:
        raise DimensionError(f"variable groups overlap on {sorted(a & b)}")
    outside = [v for v in a | b if not 0 <= v < table.n_vars]
    if outside:
        raise DimensionError(f"variables {outside} are outside a {table.n_vars}-variable table")


def exact_mi(table: JointTable, group_a: Sequence[int], group_b: Sequence[int]) -> float:
    """I(A; B) in nats with 0 log 0 = 0; variables outside both groups are marginalized."""
    _check_groups(table, group_a, group_b)
    joint = table.marginal(list(group_a) + list(group_b))
    size_a = int(np.prod([table.dims[v] for v in group_a]))
    joint = joint.reshape(size_a, -1)
    p_a = joint.sum(axis=1, keepdims=True)
    p_b = joint.sum(axis=0, keepdims=True)
    outer = p_a * p_b
    mask = joint > 0
    value = float(np.sum(joint[mask] * np.log(joint[mask] / outer[mask])))
    return max(value, 0.0)


def exact_mi_reference(table: JointTable, group_a: Sequence[int], group_b: Sequence[int]) -> float:
    """Loop-by-loop summation over every configuration, kept independent of exact_mi."""
    _check_groups(table, group_a, group_b)
    p_ab: Dict[Tuple, float] = {}
    p_a: Dict[Tuple, float] = {}
    p_b: Dict[Tuple, float] = {}
    for cell in itertools.product(*(range(d) for d in table.dims)):
        p = float(table.probs[cell])
        a = tuple(cell[v] for v in group_a)
        b = tuple(cell[v] for v in group_b)
        p_ab[a + b] = p_ab.get(a + b, 0.0) + p
        p_a[a] = p_a.get(a, 0.0) + p
        p_b[b] = p_b.get(b, 0.0) + p
    total = 0.0
    width = len(group_a)
    for key, p in p_ab.items():
        if p > 0:
            total += p * math.log(p / (p_a[key[:width]] * p_b[key[width:]]))
    return total


def random_table(rng: np.random.Generator, dims: Sequence[int], floor: float = PROBABILITY_FLOOR) -> JointTable:
    """Unstructured random joint with every cell at least ``floor`` before normalization."""
    raw = rng.random(tuple(dims)) + floor
    return JointTable(raw / raw.sum())


def check_monotonicity(table: JointTable, x: Sequence[int], y: Sequence[int], z: Sequence[int]) -> bool:
    """Whether I(X,Y; Z) >= I(X; Z) up to the tolerance."""
    return exact_mi(table, list(x) + list(y), z) >= exact_mi(table, x, z) - TOLERANCE


def make_multiplicative(
    rng: np.random.Generator,
    dims: Sequence[int],
    constant: bool = False,
    floor: float = PROBABILITY_FLOOR,
) -> JointTable:
    """
    Joint over (h, x_1, ..., x_n) whose conditional p(h | x) is a product of
    per-variable factors r_k(h, x_k), up to a per-configuration constant.

    ``dims[0]`` is the size of h. A prior p(h) and positive factors are
    drawn; the features are conditionally independent given h, so the
    feature marginal is the one induced by the prior. With ``constant`` every
    factor is flat and h is independent of the features.
    """
    if len(dims) < 2:
        raise DimensionError("make_multiplicative needs h plus at least one feature variable")
    h_dim = int(dims[0])
    prior = rng.random(h_dim) + floor
    prior /= prior.sum()
    joint = prior.reshape((h_dim,) + (1,) * (len(dims) - 1))
    for axis, x_dim in enumerate(dims[1:], start=1):
        if constant:
            factor = np.ones((h_dim, int(x_dim)))
        else:
            factor = rng.random((h_dim, int(x_dim))) + floor
        conditional = factor / factor.sum(axis=1, keepdims=True)
        shape = [1] * len(dims)
        shape[0], shape[axis] = h_dim, int(x_dim)
        joint = joint * conditional.reshape(shape)
    return JointTable(joint / joint.sum())


def factorization_residual(table: JointTable) -> float:
    """
    Largest log-space residual of fitting log p(h | x) with a per-x constant
    plus one free factor per (h, x_k); 0 means the conditional factorizes.
    """
    dims = table.dims
    n = len(dims) - 1
    h_dim = dims[0]
    feature_cells = list(itertools.product(*(range(d) for d in dims[1:])))
    p_x = table.marginal(list(range(1, n + 1)))
    offsets = [len(feature_cells)]
    for d in dims[1:]:
        offsets.append(offsets[-1] + h_dim * d)
    rows, targets = [], []
    for x_index, x in enumerate(feature_cells):
        if p_x[x] <= 0:
            continue
        for h in range(h_dim):
            p = table.probs[(h,) + x]
            if p <= 0:
                continue
            row = np.zeros(offsets[-1])
            row[x_index] = 1.0
            for k, value in enumerate(x):
                row[offsets[k] + h * dims[k + 1] + value] = 1.0
            rows.append(row)
            targets.append(math.log(p / p_x[x]))
    design = np.asarray(rows)
    target = np.asarray(targets)
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    return float(np.max(np.abs(design @ solution - target)))


@dataclass
class Decomposition:
    lower: float
    value: float
    upper: float
    weight: Optional[float]
    local: Tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.local)

    @property
    def holds(self) -> bool:
        if not self.lower - TOLERANCE <= self.value <= self.upper + TOLERANCE:
            return False
        if self.weight is None:
            return True
        return 1.0 / self.n - TOLERANCE <= self.weight <= 1.0 + TOLERANCE

    @property
    def upper_gap(self) -> float:
        return self.value - self.upper


def check_decomposition(table: JointTable, strict: bool = True, seed: int = 0) -> Decomposition:
    """
    Joint MI I(h; x_1..x_n) against the mean (lower) and sum (upper) of the
    local MIs I(h; x_k), with the realized weight value / sum(local).

    With ``strict`` a violated bracket raises PropertyFailure. When every
    local MI is zero the weight is None.
    """
    n = table.n_vars - 1
    if n < 1:
        raise DimensionError("check_decomposition needs h plus at least one feature variable")
    local = tuple(exact_mi(table, [0], [k]) for k in range(1, n + 1))
    value = exact_mi(table, [0], list(range(1, n + 1)))
    upper = float(sum(local))
    weight = value / upper if upper > 0 else None
    result = Decomposition(lower=upper / n, value=value, upper=upper, weight=weight, local=local)
    if strict and not result.holds:
        raise PropertyFailure(
            "sandwich_bounds",
            seed,
            f"lower={result.lower:.3e} value={value:.3e} upper={upper:.3e} weight={weight}",
        )
    return result


def xor_table() -> JointTable:
    """h = x_1 XOR x_2 over two fair coins: every local MI is 0, the joint MI is ln 2."""
    probs = np.zeros((2, 2, 2))
    for x1, x2 in itertools.product(range(2), repeat=2):
        probs[x1 ^ x2, x1, x2] = 0.25
    return JointTable(probs)


def _sweep_seeds(seed: int, stream: str, count: int) -> np.ndarray:
    return derive_rng(seed, stream).integers(0, 2**31 - 1, size=count)


def sample_sweep_dims(rng: np.random.Generator, max_dim: int = 3) -> Tuple[int, ...]:
    n = int(rng.integers(2, 4))
    return tuple(int(d) for d in rng.integers(2, max_dim + 1, size=n + 1))


def monotonicity_sweep(count: int, seed: int = 0) -> PropertyResult:
    for table_seed in _sweep_seeds(seed, "verify.lemma", count):
        rng = np.random.default_rng(int(table_seed))
        dims = tuple(int(d) for d in rng.integers(2, 4, size=3))
        table = random_table(rng, dims)
        x, y, z = (int(v) for v in rng.permutation(3))
        if not check_monotonicity(table, [x], [y], [z]):
            return PropertyResult("lemma_monotonicity", False, count, int(table_seed), f"dims={dims}")
        forward, backward = exact_mi(table, [x, y], [z]), exact_mi(table, [z], [x, y])
        if abs(forward - backward) > 1e-12:
            return PropertyResult("mi_symmetry", False, count, int(table_seed), f"{forward} vs {backward}")
    return PropertyResult("lemma_monotonicity", True, count, seed)


def reference_sweep(count: int, seed: int = 0) -> PropertyResult:
    worst = 0.0
    for table_seed in _sweep_seeds(seed, "verify.reference", count):
        rng = np.random.default_rng(int(table_seed))
        table = random_table(rng, (2, 2, 2))
        gap = abs(exact_mi(table, [0], [1, 2]) - exact_mi_reference(table, [0], [1, 2]))
        worst = max(worst, gap)
        if gap > 1e-12:
            return PropertyResult("mi_dual_implementation", False, count, int(table_seed), f"gap={gap:.3e}")
    return PropertyResult("mi_dual_implementation", True, count, seed, f"max gap {worst:.1e}")


def sandwich_sweep(count: int, seed: int = 0) -> Tuple[PropertyResult, Dict]:
    tightest: Dict = {}
    margin = math.inf
    for table_seed in _sweep_seeds(seed, "verify.sandwich", count):
        rng = np.random.default_rng(int(table_seed))
        dims = sample_sweep_dims(rng)
        table = make_multiplicative(rng, dims)
        result = check_decomposition(table, strict=False, seed=int(table_seed))
        if not result.holds:
            detail = f"dims={dims} lower={result.lower:.3e} value={result.value:.3e} upper={result.upper:.3e}"
            return PropertyResult("sandwich_bounds", False, count, int(table_seed), detail), {}
        slack = min(result.value - result.lower, result.upper - result.value)
        if slack < margin:
            margin = slack
            tightest = {"seed": int(table_seed), "dims": list(dims), "slack": slack, "weight": result.weight}
    return PropertyResult("sandwich_bounds", True, count, seed, f"min slack {margin:.3e}"), tightest


def counterexample_search(count: int, seed: int = 0) -> Tuple[PropertyResult, Dict]:
    """
    Look for non-multiplicative tables breaking the upper bound. The XOR
    table always does; random unstructured tables are searched too.
    """
    best = check_decomposition(xor_table(), strict=False)
    extremal = {"source": "xor", "dims": [2, 2, 2], "upper_gap": best.upper_gap}
    for table_seed in _sweep_seeds(seed, "verify.counterexample", count):
        rng = np.random.default_rng(int(table_seed))
        dims = sample_sweep_dims(rng)
        result = check_decomposition(random_table(rng, dims), strict=False)
        if result.upper_gap > extremal["upper_gap"]:
            extremal = {"source": "random", "seed": int(table_seed), "dims": list(dims), "upper_gap": result.upper_gap}
    found = extremal["upper_gap"] > TOLERANCE
    detail = f"largest value - upper = {extremal['upper_gap']:.4f} ({extremal['source']})"
    return PropertyResult("upper_bound_needs_multiplicative", found, count + 1, seed, detail), extremal


def run_sweep(
    tables: int = 500,
    lemma_tables: int = 1000,
    seed: int = 0,
    counterexample_tables: int = 200,
) -> VerifyReport:
    """All oracle properties; a zero table count skips that sweep with a warning."""
    report = VerifyReport()
    if lemma_tables > 0:
        report.add(monotonicity_sweep(lemma_tables, seed))
        report.add(reference_sweep(min(lemma_tables, 200), seed))
    else:
        _logger.warning("lemma sweep skipped: no tables requested")
        report.add(PropertyResult("lemma_monotonicity", True, 0, seed, "no tables requested", skipped=True))
    if tables > 0:
        sandwich, tightest = sandwich_sweep(tables, seed)
        report.add(sandwich)
        counter, extremal = counterexample_search(counterexample_tables, seed)
        report.add(counter)
        report.extremal = {"tightest_multiplicative": tightest, "upper_bound_violation": extremal}
    else:
        _logger.warning("sandwich sweep skipped: no tables requested")
        report.add(PropertyResult("sandwich_bounds", True, 0, seed, "no tables requested", skipped=True))
    _logger.info(
        "oracle sweep finished",
        extra={"passed": report.passed, "tables": tables, "lemma_tables": lemma_tables},
    )
    return report
