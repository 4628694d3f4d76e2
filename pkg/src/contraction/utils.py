"""
Contraction Condition Module

This module checks the T-Kannan (TK1) and T-Chatterjea (TK2) conditions on
sampled pairs of points, and estimates the smallest constant each condition
admits on those pairs.

    TK1: d(TSx, TSy) <= b [d(Tx, TSx) + d(Ty, TSy)]
    TK2: d(TSx, TSy) <= c [d(Tx, TSy) + d(Ty, TSx)]

K1 (Kannan) and K2 (Chatterjea) are the same conditions with T the identity.
Both sides are vectors of E, so the inequality is checked in the cone order,
coordinate by coordinate, with 1e-9 slack.

Pairs come from a deterministic grid over the domain box (every unordered pair
of grid points, the midpoint included) plus uniform random pairs, both seeded.
They are evaluated in batches, in parallel when workers > 1, and merged in
batch order so reports do not depend on the number of workers.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import polars as pl
from tqdm import tqdm

from src.common.utils import (
    BATCH_SIZE,
    DEFAULT_SEED,
    MAX_RECORDED_VIOLATIONS,
    ORDER_SLACK,
    as_box,
    check_sample_count,
    get_rng,
)
from src.cone_metric.utils import ConeMetricSpace, distances, norms
from src.maps.utils import MapExpr, catalog_map, evaluate_rows, sample_box

logger = logging.getLogger(__name__)

IDENTITY = catalog_map("identity")


class ContractionKind(str, Enum):
    TK1 = "TK1"
    TK2 = "TK2"
    K1 = "K1"
    K2 = "K2"

    @property
    def t_is_identity(self) -> bool:
        return self in (ContractionKind.K1, ContractionKind.K2)

    @property
    def is_kannan(self) -> bool:
        return self in (ContractionKind.TK1, ContractionKind.K1)


@dataclass(frozen=True)
class Violation:
    index: int
    x: list
    y: list
    lhs_norm: float
    rhs_norm: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "x": self.x,
            "y": self.y,
            "lhs_norm": self.lhs_norm,
            "rhs_norm": self.rhs_norm,
        }


@dataclass
class ContractionReport:
    """
    Outcome of a contraction check on a set of pairs.

    violations holds the first MAX_RECORDED_VIOLATIONS violating pairs in pair
    order; violation_count counts all of them. estimated_min_constant is None
    when some pair admits no finite constant.
    """

    kind: ContractionKind
    constant: float
    pairs_checked: int
    violation_count: int = 0
    violations: list = field(default_factory=list)
    estimated_min_constant: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "constant": self.constant,
            "pairs_checked": self.pairs_checked,
            "violation_count": self.violation_count,
            "violations": [v.to_dict() for v in self.violations],
            "estimated_min_constant": self.estimated_min_constant,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContractionReport":
        return cls(
            kind=ContractionKind(data["kind"]),
            constant=data["constant"],
            pairs_checked=data["pairs_checked"],
            violation_count=data["violation_count"],
            violations=[Violation(**v) for v in data["violations"]],
            estimated_min_constant=data["estimated_min_constant"],
        )

    def violations_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            [v.to_dict() for v in self.violations],
            schema={
                "index": pl.Int64,
                "x": pl.List(pl.Float64),
                "y": pl.List(pl.Float64),
                "lhs_norm": pl.Float64,
                "rhs_norm": pl.Float64,
            },
        )


@dataclass
class _BatchResult:
    violating: np.ndarray
    lhs_norms: np.ndarray
    rhs_norms: np.ndarray
    max_ratio: float
    undefined: int


def _check_constant(constant: float):
    if not 0 <= constant < 0.5:
        raise ValueError(f"constant out of [0, 1/2): {constant}")


def contraction_sides(
    space: ConeMetricSpace,
    T: MapExpr,
    S: MapExpr,
    kind: ContractionKind,
    xs: np.ndarray,
    ys: np.ndarray,
) -> tuple:
    """
    Left side d(TSx, TSy) and the bracketed distance sum of the right side,
    for every pair (xs[i], ys[i]).

    Returns:
        tuple: (lhs, rhs_sum), both of shape (N, m).
    """
    kind = ContractionKind(kind)
    sx = evaluate_rows(S, xs)
    sy = evaluate_rows(S, ys)
    if kind.t_is_identity:
        tx, ty, tsx, tsy = xs, ys, sx, sy
    else:
        tx, ty = evaluate_rows(T, xs), evaluate_rows(T, ys)
        tsx, tsy = evaluate_rows(T, sx), evaluate_rows(T, sy)

    lhs = distances(space, tsx, tsy)
    if kind.is_kannan:
        rhs_sum = distances(space, tx, tsx) + distances(space, ty, tsy)
    else:
        rhs_sum = distances(space, tx, tsy) + distances(space, ty, tsx)

    return lhs, rhs_sum


def pair_ratios(lhs: np.ndarray, rhs_sum: np.ndarray) -> tuple:
    """
    Per-pair minimal constant: max over coordinates of lhs_i / rhs_sum_i.

    Coordinates with lhs_i = rhs_sum_i = 0 impose nothing. A coordinate with
    rhs_sum_i = 0 < lhs_i admits no finite constant; such pairs are flagged.

    Returns:
        tuple: (ratios of shape (N,), boolean undefined mask of shape (N,)).
    """
    positive = rhs_sum > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(positive, lhs / np.where(positive, rhs_sum, 1.0), 0.0)
    undefined = np.any(~positive & (lhs > 0), axis=1)

    return np.max(ratios, axis=1), undefined


def _evaluate_batch(args) -> _BatchResult:
    space, T, S, kind, constant, xs, ys = args
    lhs, rhs_sum = contraction_sides(space, T, S, kind, xs, ys)
    rhs = constant * rhs_sum
    violating = np.flatnonzero(np.any(rhs - lhs < -ORDER_SLACK, axis=1))
    ratios, undefined = pair_ratios(lhs, rhs_sum)

    return _BatchResult(
        violating=violating,
        lhs_norms=norms(lhs[violating]),
        rhs_norms=norms(rhs[violating]),
        max_ratio=float(np.max(ratios)) if len(ratios) else 0.0,
        undefined=int(np.sum(undefined)),
    )


def draw_pairs(domain, dimension: int, sample_pairs: int, seed: int = DEFAULT_SEED) -> tuple:
    """
    Draws the pairs a contraction check runs on.

    Half of the budget goes to every unordered pair of a deterministic grid over
    the domain box, the other half to uniform random pairs.

    Args:
        domain: Interval or box the points are drawn from.
        dimension (int): Point dimension.
        sample_pairs (int): Approximate number of pairs, >= 1.
        seed (int): Seed for the random half.

    Returns:
        tuple: (xs, ys), two arrays of shape (N, dimension).
    """
    check_sample_count(sample_pairs, name="sample_pairs")
    box = as_box(domain, dimension)
    rng = get_rng(seed)

    grid_budget = sample_pairs // 2
    parts_x, parts_y = [], []
    if grid_budget >= 3:
        grid_size = int((1 + np.sqrt(1 + 8 * grid_budget)) // 2)
        grid = sample_box(box, dimension, grid_size)
        i, j = np.triu_indices(len(grid), k=1)
        parts_x.append(grid[i])
        parts_y.append(grid[j])

    random_count = sample_pairs - grid_budget
    span = box[:, 1] - box[:, 0]
    parts_x.append(box[:, 0] + span * rng.random((random_count, dimension)))
    parts_y.append(box[:, 0] + span * rng.random((random_count, dimension)))

    return np.vstack(parts_x), np.vstack(parts_y)


def _run_batches(
    space, T, S, kind, constant, xs, ys, workers: int = 1, progress: bool = False
) -> list:
    starts = list(range(0, len(xs), BATCH_SIZE))
    jobs = [
        (space, T, S, kind, constant, xs[s : s + BATCH_SIZE], ys[s : s + BATCH_SIZE])  # noqa: E203
        for s in starts
    ]
    if workers > 1 and len(jobs) > 1:
        max_workers = min(workers, max(os.cpu_count() - 2, 1))
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            results = list(
                tqdm(
                    executor.map(_evaluate_batch, jobs),
                    total=len(jobs),
                    desc="Checking pairs",
                    unit="batch",
                    disable=not progress,
                )
            )
    else:
        results = [
            _evaluate_batch(job)
            for job in tqdm(jobs, desc="Checking pairs", unit="batch", disable=not progress)
        ]

    return list(zip(starts, results))


def check_pairs(
    space: ConeMetricSpace,
    T: MapExpr,
    S: MapExpr,
    kind: ContractionKind,
    constant: float,
    xs: np.ndarray,
    ys: np.ndarray,
    workers: int = 1,
    progress: bool = False,
) -> ContractionReport:
    """
    Checks a contraction condition on explicit pairs (xs[i], ys[i]).

    Args:
        space (ConeMetricSpace): The space.
        T (MapExpr): The map T; ignored (taken as the identity) for K1 and K2.
        S (MapExpr): The map S.
        kind (ContractionKind): TK1, TK2, K1 or K2.
        constant (float): The constant b or c, in [0, 1/2).
        xs (np.ndarray): First points, shape (N, k).
        ys (np.ndarray): Second points, shape (N, k).
        workers (int): Processes used for batch evaluation.
        progress (bool): Show a progress bar.

    Returns:
        ContractionReport: Violations and the estimated minimal constant on these pairs.

    Raises:
        ValueError: If the constant is out of range.
        MapEvaluationError: If T or S fails on a sampled point.
    """
    kind = ContractionKind(kind)
    _check_constant(constant)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))

    report = ContractionReport(kind=kind, constant=float(constant), pairs_checked=len(xs))
    max_ratio = 0.0
    undefined = 0
    for start, result in _run_batches(space, T, S, kind, constant, xs, ys, workers, progress):
        report.violation_count += len(result.violating)
        for local, lhs_norm, rhs_norm in zip(
            result.violating, result.lhs_norms, result.rhs_norms
        ):
            if len(report.violations) >= MAX_RECORDED_VIOLATIONS:
                break
            index = start + int(local)
            report.violations.append(
                Violation(
                    index=index,
                    x=xs[index].tolist(),
                    y=ys[index].tolist(),
                    lhs_norm=float(lhs_norm),
                    rhs_norm=float(rhs_norm),
                )
            )
        max_ratio = max(max_ratio, result.max_ratio)
        undefined += result.undefined

    report.estimated_min_constant = None if undefined else max_ratio
    logger.info(
        "%s check with constant %.6g: %d violation(s) in %d pairs",
        kind.value,
        constant,
        report.violation_count,
        report.pairs_checked,
    )
    return report


def check_condition(
    space: ConeMetricSpace,
    T: MapExpr,
    S: MapExpr,
    kind: ContractionKind,
    constant: float,
    sample_pairs: int,
    domain,
    seed: int,
    workers: int = 1,
    progress: bool = False,
) -> ContractionReport:
    """
    Checks a contraction condition on pairs sampled from the domain box.

    See check_pairs for the meaning of the arguments and the report; the pairs
    come from draw_pairs.
    """
    check_sample_count(sample_pairs, name="sample_pairs")
    _check_constant(constant)
    xs, ys = draw_pairs(domain, space.point_dimension, sample_pairs, seed)

    return check_pairs(space, T, S, kind, constant, xs, ys, workers, progress)


def estimate_min_constant(
    space: ConeMetricSpace,
    T: MapExpr,
    S: MapExpr,
    kind: ContractionKind,
    sample_pairs: int,
    domain,
    seed: int,
    workers: int = 1,
    progress: bool = False,
) -> Optional[float]:
    """
    Supremum over sampled pairs of the per-pair minimal constant.

    Returns:
        float or None: The estimate, or None when some pair admits no finite
        constant (a zero coordinate in the bracketed sum under a nonzero left side).

    Example:
        >>> estimate_min_constant(example_space(), parse_map("x^2"), parse_map("x/2"),
        ...                       "TK1", 100_000, (-10, 10), 42)  # doctest: +SKIP
        0.3333333333333333
    """
    kind = ContractionKind(kind)
    xs, ys = draw_pairs(domain, space.point_dimension, sample_pairs, seed)
    batches = _run_batches(space, T, S, kind, 0.0, xs, ys, workers, progress)
    if any(result.undefined for _, result in batches):
        logger.info("No finite %s constant: some pair has a zero bracketed distance", kind.value)
        return None

    return max(result.max_ratio for _, result in batches)


def kannan_reduction_check(
    space: ConeMetricSpace,
    S: MapExpr,
    b: float,
    samples: int,
    domain,
    seed: int,
    workers: int = 1,
) -> ContractionReport:
    """
    Plain Kannan condition d(Sx, Sy) <= b [d(x, Sx) + d(y, Sy)]: check_condition
    with kind K1.
    """
    return check_condition(
        space, IDENTITY, S, ContractionKind.K1, b, samples, domain, seed, workers
    )


def chatterjea_reduction_check(
    space: ConeMetricSpace,
    S: MapExpr,
    c: float,
    samples: int,
    domain,
    seed: int,
    workers: int = 1,
) -> ContractionReport:
    """
    Plain Chatterjea condition d(Sx, Sy) <= c [d(x, Sy) + d(y, Sx)]: check_condition
    with kind K2.
    """
    return check_condition(
        space, IDENTITY, S, ContractionKind.K2, c, samples, domain, seed, workers
    )


def estimate_lipschitz_constant(
    space: ConeMetricSpace, S: MapExpr, samples: int, domain, seed: int
) -> float:
    """
    Sampled sup of ||d(Sx, Sy)|| / ||d(x, y)|| over pairs x != y.

    A value below 1 says S is an ordinary (Banach) contraction on the sampled
    pairs, which does not make it a Kannan contraction.
    """
    xs, ys = draw_pairs(domain, space.point_dimension, samples, seed)
    before = norms(distances(space, xs, ys))
    after = norms(distances(space, evaluate_rows(S, xs), evaluate_rows(S, ys)))
    distinct = before > 0
    if not np.any(distinct):
        return 0.0

    return float(np.max(after[distinct] / before[distinct]))
