"""
Cone Metric Module

This module provides cone metric spaces (M, d) whose distance takes values in
the discretized space E, and the sequence machinery built on top of them.

Every metric here has the weighted-scalar form d(x, y) = rho(x, y) * w, where rho
is an ordinary metric on the coordinates of M and w is a positive weight vector
sampled on the uniform grid t_i = i / (m - 1). With w = e^t this is the metric
|x - y| e^t of the worked examples.

Convergence and the Cauchy property are judged through norms: because the cone
is normal, d(x_n, x) -> 0 in the cone order iff ||d(x_n, x)|| -> 0.

Key Functions:
- distance / distances: d(x, y) for single points or batches
- verify_metric_axioms: sampled check of positivity, symmetry, triangle inequality
- sequence_converges / is_cauchy: tail-based convergence tests on finite traces
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.common.utils import (
    DEFAULT_GRID_SIZE,
    DEFAULT_TOL,
    ORDER_SLACK,
    check_sample_count,
    get_rng,
)
from src.maps.utils import MapExpr, MPoint, eval_weight, parse_map
from src.ordered_space.utils import (
    MAX_COUNTEREXAMPLES,
    AxiomCheck,
    AxiomReport,
    ConeSpec,
    EVector,
    contains_rows,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BaseDistance",
    "ConeMetricSpace",
    "MPoint",
    "SequenceTrace",
    "distance",
    "distances",
    "example_space",
    "grid_points",
    "is_cauchy",
    "sequence_converges",
    "standard_metric_space",
    "tail_length",
    "trace_sequence",
    "verify_metric_axioms",
]


class BaseDistance(str, Enum):
    # Sum of absolute coordinate differences; |x - y| on the real line
    ABSOLUTE_DIFFERENCE = "absolute_difference"
    EUCLIDEAN = "euclidean"


def grid_points(grid_size: int) -> np.ndarray:
    """
    Uniform grid t_i = i / (m - 1) on [0, 1]; a single point t = 0 when m = 1.
    """
    if grid_size == 1:
        return np.zeros(1)
    return np.arange(grid_size) / (grid_size - 1)


@dataclass(frozen=True, eq=False)
class ConeMetricSpace:
    """
    Point set M of a fixed dimension with the distance d(x, y) = rho(x, y) * w.

    The weight is evaluated once on the cone's grid. Its positivity is not
    enforced here; verify_metric_axioms reports a weight that breaks d1.
    """

    point_dimension: int
    cone: ConeSpec
    weight: MapExpr
    base: BaseDistance = BaseDistance.ABSOLUTE_DIFFERENCE
    weight_vector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.point_dimension) != self.point_dimension or self.point_dimension < 1:
            raise ValueError(
                f"point_dimension must be a positive integer, got {self.point_dimension}"
            )
        object.__setattr__(self, "base", BaseDistance(self.base))
        w = eval_weight(self.weight, grid_points(self.cone.dimension))
        w = np.broadcast_to(w, (self.cone.dimension,)).astype(float)
        w.setflags(write=False)
        object.__setattr__(self, "weight_vector", w)

    @property
    def grid(self) -> np.ndarray:
        return grid_points(self.cone.dimension)

    @property
    def min_weight(self) -> float:
        return float(np.min(self.weight_vector))

    @property
    def weight_is_positive(self) -> bool:
        return bool(np.all(self.weight_vector >= self.cone.interior_margin))

    def scalar_distances(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """
        rho(x, y) for rows of two (N, k) arrays.
        """
        diff = np.abs(np.asarray(xs, dtype=float) - np.asarray(ys, dtype=float))
        if self.base == BaseDistance.EUCLIDEAN:
            return np.sqrt(np.sum(diff * diff, axis=-1))
        return np.sum(diff, axis=-1)


def example_space(grid_size: int = DEFAULT_GRID_SIZE, weight: str = "exp(t)") -> ConeMetricSpace:
    """
    The cone metric space of the worked examples: M = R, E sampled on an
    m-point grid, d(x, y) = |x - y| e^t.
    """
    return ConeMetricSpace(
        point_dimension=1,
        cone=ConeSpec(dimension=grid_size),
        weight=parse_map(weight),
    )


def standard_metric_space(point_dimension: int = 1) -> ConeMetricSpace:
    """
    An ordinary metric space seen as a cone metric space: E is one coordinate
    and the weight is identically 1.
    """
    return ConeMetricSpace(
        point_dimension=point_dimension,
        cone=ConeSpec(dimension=1),
        weight=parse_map("1"),
    )


def _check_point(space: ConeMetricSpace, p: MPoint):
    if p.dimension != space.point_dimension:
        raise ValueError(
            f"Dimension mismatch: point has {p.dimension} coordinates, space has {space.point_dimension}"
        )


def distances(space: ConeMetricSpace, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """
    Batched distances: rows of xs and ys give an (N, m) array of E-values.

    Args:
        space (ConeMetricSpace): The space.
        xs (np.ndarray): Points of shape (N, k).
        ys (np.ndarray): Points of shape (N, k).

    Returns:
        np.ndarray: d(xs[i], ys[i]) for every i, shape (N, m).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape[-1] != space.point_dimension or ys.shape[-1] != space.point_dimension:
        raise ValueError(
            f"Dimension mismatch: points have {xs.shape[-1]} and {ys.shape[-1]} "
            f"coordinates, space has {space.point_dimension}"
        )
    return space.scalar_distances(xs, ys)[..., None] * space.weight_vector


def distance(space: ConeMetricSpace, x: MPoint, y: MPoint) -> EVector:
    """
    The cone distance d(x, y) = rho(x, y) * w.

    Args:
        space (ConeMetricSpace): The space.
        x (MPoint): First point.
        y (MPoint): Second point.

    Returns:
        EVector: The distance, a member of the cone when the weight is positive.

    Example:
        >>> distance(example_space(2), MPoint([1.0]), MPoint([0.0]))
        EVector([1.0, 2.718281828459045])
    """
    _check_point(space, x)
    _check_point(space, y)
    return EVector(distances(space, x.coords[None, :], y.coords[None, :])[0])


def norms(values: np.ndarray) -> np.ndarray:
    """
    Sup norms of the rows of an (N, m) array of E-values.
    """
    return np.max(np.abs(values), axis=-1)


def verify_metric_axioms(space: ConeMetricSpace, sample_count: int, seed: int) -> AxiomReport:
    """
    Sampled check of the cone metric axioms on triples (x, y, z).

    d1: d(x, y) is in the cone, and is zero iff x = y.
    d2: d(x, y) == d(y, x) coordinatewise, exactly.
    d3: d(x, y) <= d(x, z) + d(y, z) in the cone order, with 1e-9 slack per coordinate.

    Every tenth triple is degenerate (x = y = z) and every tenth has x = y, so the
    zero-distance cases are always exercised.

    Args:
        space (ConeMetricSpace): The space under test.
        sample_count (int): Number of sampled triples, >= 1.
        seed (int): Seed for the sampler.

    Returns:
        AxiomReport: Pass/fail per axiom with counterexamples.
    """
    check_sample_count(sample_count)
    rng = get_rng(seed)
    k = space.point_dimension
    cone = space.cone

    scales = 10.0 ** rng.uniform(-3, 2, size=(sample_count, 1))
    xs = rng.standard_normal((sample_count, k)) * scales
    ys = rng.standard_normal((sample_count, k)) * scales
    zs = rng.standard_normal((sample_count, k)) * scales
    ys[::10] = xs[::10]
    zs[::10] = xs[::10]
    ys[5::10] = xs[5::10]

    d_xy = distances(space, xs, ys)
    d_yx = distances(space, ys, xs)
    d_xz = distances(space, xs, zs)
    d_yz = distances(space, ys, zs)

    same = np.all(xs == ys, axis=1)
    zero = np.all(d_xy == 0, axis=1)
    d1_bad = np.flatnonzero(~contains_rows(cone, d_xy) | (zero != same))
    d2_bad = np.flatnonzero(np.any(d_xy != d_yx, axis=1))
    d3_bad = np.flatnonzero(np.any(d_xz + d_yz - d_xy < -ORDER_SLACK, axis=1))

    def _examples(bad, with_z=False):
        return [
            {
                "x": xs[i].tolist(),
                "y": ys[i].tolist(),
                **({"z": zs[i].tolist()} if with_z else {}),
            }
            for i in bad[:MAX_COUNTEREXAMPLES]
        ]

    checks = [
        AxiomCheck("d1", d1_bad.size == 0, sample_count, _examples(d1_bad)),
        AxiomCheck("d2", d2_bad.size == 0, sample_count, _examples(d2_bad)),
        AxiomCheck("d3", d3_bad.size == 0, sample_count, _examples(d3_bad, with_z=True)),
    ]
    if not space.weight_is_positive:
        logger.warning(
            "Weight '%s' has coordinates below the interior margin (min %.3g)",
            space.weight.source,
            space.min_weight,
        )

    return AxiomReport(
        suite=f"metric[{space.base.value}, k={k}, m={cone.dimension}]", checks=checks
    )


@dataclass
class SequenceTrace:
    """
    Norm data of a finite sequence: distances to a candidate limit and the
    pairwise distance matrix over the trailing window.
    """

    points: list
    distances_to_limit: list
    pairwise_tail: np.ndarray

    def __post_init__(self):
        if self.distances_to_limit and len(self.distances_to_limit) != len(self.points):
            raise ValueError("distances_to_limit must have one entry per point")


def tail_length(length: int) -> int:
    """
    Size of the trailing window a finite trace is judged on: max(5, len / 4),
    capped at the sequence length.
    """
    return min(length, max(5, length // 4))


def _as_rows(space: ConeMetricSpace, seq: list) -> np.ndarray:
    rows = np.array([p.coords for p in seq], dtype=float)
    if rows.shape[1] != space.point_dimension:
        raise ValueError(
            f"Dimension mismatch: sequence points have {rows.shape[1]} coordinates, "
            f"space has {space.point_dimension}"
        )
    return rows


def trace_sequence(space: ConeMetricSpace, seq: list, limit: MPoint = None) -> SequenceTrace:
    """
    Builds the SequenceTrace of a finite sequence.

    Args:
        space (ConeMetricSpace): The space.
        seq (list): Nonempty list of MPoint.
        limit (MPoint, optional): Candidate limit; distances to it are recorded when given.

    Returns:
        SequenceTrace: Norms of d(x_n, limit) and of d(x_n, x_m) over the tail.
    """
    if not seq:
        raise ValueError("Sequence must be nonempty")
    rows = _as_rows(space, seq)

    to_limit = []
    if limit is not None:
        _check_point(space, limit)
        to_limit = norms(distances(space, rows, limit.coords[None, :])).tolist()

    tail = rows[-tail_length(len(rows)):]
    pairwise = norms(distances(space, tail[:, None, :], tail[None, :, :]))

    return SequenceTrace(points=list(seq), distances_to_limit=to_limit, pairwise_tail=pairwise)


def sequence_converges(
    space: ConeMetricSpace, seq: list, limit: MPoint, tol: float = DEFAULT_TOL
) -> bool:
    """
    Decides whether a finite sequence has settled at a limit: every term of the
    trailing window (last max(5, len/4) terms) is within tol of it in norm.

    Args:
        space (ConeMetricSpace): The space.
        seq (list): Nonempty list of MPoint.
        limit (MPoint): Candidate limit.
        tol (float): Tolerance, > 0.

    Returns:
        bool: True iff ||d(x_n, limit)|| <= tol over the tail.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    trace = trace_sequence(space, seq, limit)
    tail = trace.distances_to_limit[-tail_length(len(seq)):]

    return max(tail) <= tol


def is_cauchy(space: ConeMetricSpace, seq: list, tol: float = DEFAULT_TOL) -> bool:
    """
    Decides whether a finite sequence is Cauchy at tolerance tol: every pairwise
    distance over the trailing window is within tol in norm.

    Raises:
        ValueError: If tol <= 0 or the sequence has fewer than 2 points.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if len(seq) < 2:
        raise ValueError("A Cauchy test needs at least 2 points")
    trace = trace_sequence(space, seq)

    return float(np.max(trace.pairwise_tail)) <= tol
