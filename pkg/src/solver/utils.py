"""
Fixed-Point Solver Module

This module runs the Picard iteration x_{n+1} = S(x_n) for T-Kannan (TK1) and
T-Chatterjea (TK2) contractions and attaches a convergence certificate to the
result.

With h = b / (1 - b) (TK1) or c / (1 - c) (TK2), the T-images of the iterates
satisfy the geometric decay

    ||d(Tx_n, Tx_{n+1})|| <= K h^n ||d(Tx_0, Tx_1)||

so the a priori bound K h^n d0 / (1 - h) and the a posteriori bound
K h ||d(Tx_{n-1}, Tx_n)|| / (1 - h) both control the distance of Tx_n to the
limit v = Tu.

Key Functions:
- solve: iteration with a posteriori stopping and certificate
- apriori_bound / iterations_needed: the geometric-series bound and its inverse
- verify_decay: checks a recorded trace against the geometric decay
- uniqueness_probe: solves from several starts and compares the limits
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
import polars as pl

from src.common.utils import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    ORDER_SLACK,
    as_box,
    finite_or_none,
    none_to_inf,
)
from src.cone_metric.utils import ConeMetricSpace, distances, norms
from src.contraction.utils import IDENTITY, ContractionKind
from src.maps.utils import MapCapabilities, MapEvaluationError, MapExpr, MPoint, evaluate_rows

logger = logging.getLogger(__name__)


class ConvergenceMode(str, Enum):
    SEQUENTIAL = "sequential"
    SUBSEQUENTIAL_ONLY = "subsequential-only"


def contraction_ratio(constant: float) -> float:
    """
    h = constant / (1 - constant) for a Kannan or Chatterjea constant in [0, 1/2).

    Raises:
        ValueError: If the constant gives h >= 1 (or is negative).
    """
    if not 0 <= constant < 0.5:
        raise ValueError(f"constant {constant} gives h >= 1; it must lie in [0, 1/2)")
    return constant / (1 - constant)


@dataclass(frozen=True)
class Problem:
    """
    Everything the solver needs: the space, the maps, the declared contraction
    and the starting point inside its domain box.
    """

    space: ConeMetricSpace
    T: MapExpr
    S: MapExpr
    kind: ContractionKind
    constant: float
    x0: MPoint
    domain: tuple
    capabilities: MapCapabilities = field(default_factory=MapCapabilities)

    def __post_init__(self):
        object.__setattr__(self, "kind", ContractionKind(self.kind))
        contraction_ratio(self.constant)
        if self.x0.dimension != self.space.point_dimension:
            raise ValueError(
                f"x0 has {self.x0.dimension} coordinates, space has {self.space.point_dimension}"
            )
        box = as_box(self.domain, self.space.point_dimension)
        if np.any(self.x0.coords < box[:, 0]) or np.any(self.x0.coords > box[:, 1]):
            raise ValueError(f"x0 {self.x0.to_list()} lies outside the domain {box.tolist()}")

    @property
    def h(self) -> float:
        return contraction_ratio(self.constant)

    @property
    def t_map(self) -> MapExpr:
        return IDENTITY if self.kind.t_is_identity else self.T

    @property
    def normal_constant(self) -> float:
        return self.space.cone.normal_constant

    @property
    def mode(self) -> ConvergenceMode:
        if self.kind.t_is_identity or self.capabilities.sequentially_convergent:
            return ConvergenceMode.SEQUENTIAL
        return ConvergenceMode.SUBSEQUENTIAL_ONLY


@dataclass
class Certificate:
    """
    Convergence certificate of a solve.

    For TK1 d0_norm is ||d(Tx_0, TSx_0)|| and apriori_curve[n] bounds
    ||d(Tx_n, v)||; for TK2 d0_norm is ||d(TSx_0, TSx_1)|| and apriori_curve[n]
    bounds ||d(TSx_n, v)||. An infinite m_error_estimate (steps in M not
    shrinking) serializes as null.
    """

    h: float
    d0_norm: float
    normal_constant: float
    apriori_curve: list
    aposteriori_residual: float
    decay_verified: bool
    iterations_needed: int
    m_error_estimate: float = 0.0

    def apriori(self, n: int) -> float:
        return apriori_bound(self.h, self.d0_norm, self.normal_constant, n)

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "d0_norm": self.d0_norm,
            "normal_constant": self.normal_constant,
            "apriori_curve": self.apriori_curve,
            "aposteriori_residual": finite_or_none(self.aposteriori_residual),
            "decay_verified": self.decay_verified,
            "iterations_needed": self.iterations_needed,
            "m_error_estimate": finite_or_none(self.m_error_estimate),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        data = dict(data)
        for key in ("aposteriori_residual", "m_error_estimate"):
            data[key] = none_to_inf(data[key])
        return cls(**data)


@dataclass
class FixedPointResult:
    """
    Outcome of a solve.

    trace[n] is ||d(Tx_n, Tx_{n+1})||; iterates[n] is x_n, ending at u.
    v_norm_gap is ||d(TSu, Tu)||, the distance between the terminal iterate's
    T-image and Tu, which vanishes exactly when Tu is the limit v.
    """

    u: MPoint
    converged: bool
    mode: ConvergenceMode
    iterations: int
    trace: list
    iterates: list
    residual: float
    v_norm_gap: float
    certificate: Certificate
    unique_probe: Optional[bool] = None
    failure: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "u": self.u.to_list(),
            "converged": self.converged,
            "mode": self.mode.value,
            "iterations": self.iterations,
            "trace": self.trace,
            "iterates": self.iterates,
            "residual": finite_or_none(self.residual),
            "v_norm_gap": finite_or_none(self.v_norm_gap),
            "certificate": self.certificate.to_dict(),
            "unique_probe": self.unique_probe,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FixedPointResult":
        return cls(
            u=MPoint(data["u"]),
            converged=data["converged"],
            mode=ConvergenceMode(data["mode"]),
            iterations=data["iterations"],
            trace=data["trace"],
            iterates=data["iterates"],
            residual=none_to_inf(data["residual"]),
            v_norm_gap=none_to_inf(data["v_norm_gap"]),
            certificate=Certificate.from_dict(data["certificate"]),
            unique_probe=data["unique_probe"],
            failure=data["failure"],
        )

    def trace_frame(self) -> pl.DataFrame:
        """
        The iteration trace as a table: n, x_n, ||d(Tx_n, Tx_{n+1})|| and the
        a priori bound at n.
        """
        n = len(self.trace)
        return pl.DataFrame(
            {
                "n": list(range(n)),
                "x": self.iterates[:n],
                "t_step": self.trace,
                "apriori_bound": self.certificate.apriori_curve[:n],
            },
            schema={
                "n": pl.Int64,
                "x": pl.List(pl.Float64),
                "t_step": pl.Float64,
                "apriori_bound": pl.Float64,
            },
        )


def _check_ratio(h: float):
    if not 0 <= h < 1:
        raise ValueError(f"h must lie in [0, 1), got {h}")


def apriori_bound(h: float, d0_norm: float, K: float, n: int) -> float:
    """
    K h^n d0 / (1 - h): bound on ||d(Tx_n, Tx_m)|| for every m > n, hence on the
    distance of Tx_n to the limit.

    Args:
        h (float): Contraction ratio in [0, 1).
        d0_norm (float): Norm of the first step, >= 0.
        K (float): Normal constant of the cone, > 0.
        n (int): Iteration index, >= 0.

    Returns:
        float: The bound.

    Example:
        >>> apriori_bound(0.5, 0.75 * math.e, 1.0, 0)  # doctest: +SKIP
        4.077422742688568
    """
    _check_ratio(h)
    if d0_norm < 0:
        raise ValueError(f"d0_norm must be >= 0, got {d0_norm}")
    if not K > 0:
        raise ValueError(f"K must be > 0, got {K}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if d0_norm == 0:
        return 0.0

    return K * h**n * d0_norm / (1 - h)


def iterations_needed(h: float, d0_norm: float, K: float, tol: float) -> int:
    """
    Smallest n >= 0 with apriori_bound(h, d0_norm, K, n) <= tol.

    The logarithmic formula gives a candidate; it is then corrected by direct
    evaluation at n and n - 1 so that rounding never moves the answer.
    """
    _check_ratio(h)
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if apriori_bound(h, d0_norm, K, 0) <= tol:
        return 0
    if h == 0:
        return 1

    n = max(0, int(np.ceil(np.log(tol * (1 - h) / (K * d0_norm)) / np.log(h))))
    while n > 0 and apriori_bound(h, d0_norm, K, n - 1) <= tol:
        n -= 1
    while apriori_bound(h, d0_norm, K, n) > tol:
        n += 1

    return n


def verify_decay(trace: list, h: float, K: float = 1.0) -> bool:
    """
    True iff trace[n] <= K h^n trace[0] + 1e-9 for every n: the recorded steps
    decay at least as fast as the certified geometric rate.
    """
    if len(trace) == 0:
        raise ValueError("trace must be nonempty")
    _check_ratio(h)
    steps = np.asarray(trace, dtype=float)
    bounds = K * h ** np.arange(len(steps)) * steps[0] + ORDER_SLACK

    return bool(np.all(steps <= bounds))


def _step_norm(space: ConeMetricSpace, a: np.ndarray, b: np.ndarray) -> float:
    return float(norms(distances(space, a, b))[0])


def solve(
    problem: Problem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    probe_starts: Optional[list] = None,
) -> FixedPointResult:
    """
    Runs the Picard iteration from problem.x0 and certifies the result.

    The iteration stops at u = x_k once both
      - the a posteriori bound K h ||d(Tx_{k-1}, Tx_k)|| / (1 - h) is <= tol, and
      - the estimated distance of x_k to the fixed point in M,
        ||d(x_k, Sx_k)|| / (1 - q) with q the observed ratio of the last two
        steps in M, is <= tol.
    The first condition is the certified one; the second keeps u itself close
    to the fixed point when T compresses distances near it.

    Args:
        problem (Problem): The problem.
        tol (float): Tolerance, > 0.
        max_iter (int): Maximum number of applications of S, >= 1.
        probe_starts (list, optional): Extra starts for uniqueness_probe; the
            outcome is stored in unique_probe.

    Returns:
        FixedPointResult: The fixed point, trace and certificate. When max_iter
        runs out, converged is False and failure says so.

    Raises:
        ValueError: If tol <= 0 or max_iter < 1.
        MapEvaluationError: If S or T fails along the iteration.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if int(max_iter) != max_iter or max_iter < 1:
        raise ValueError(f"max_iter must be an integer >= 1, got {max_iter}")

    space, S, T = problem.space, problem.S, problem.t_map
    h, K = problem.h, problem.normal_constant
    mode = problem.mode
    if mode == ConvergenceMode.SUBSEQUENTIAL_ONLY and not problem.capabilities.subsequentially_convergent:
        logger.warning(
            "T is declared neither sequentially nor subsequentially convergent: "
            "the terminal iterate is not certified to approach a fixed point"
        )

    x = problem.x0.coords[None, :]
    tx = evaluate_rows(T, x)
    x_next = evaluate_rows(S, x)
    tx_next = evaluate_rows(T, x_next)
    m_step = _step_norm(space, x, x_next)

    trace = []
    iterates = [x[0].tolist()]
    d0_norm = None
    converged = held_back = False
    bound = m_error = residual = v_gap = float("inf")

    for k in range(1, max_iter + 1):
        step = _step_norm(space, tx, tx_next)
        trace.append(step)
        iterates.append(x_next[0].tolist())

        x_after = evaluate_rows(S, x_next)
        tx_after = evaluate_rows(T, x_after)
        residual = _step_norm(space, x_next, x_after)
        v_gap = _step_norm(space, tx_after, tx_next)
        if d0_norm is None:
            d0_norm = step if problem.kind.is_kannan else v_gap

        bound = K * h * step / (1 - h)
        if residual == 0:
            m_error = 0.0
        else:
            q = residual / m_step if m_step > 0 else np.inf
            m_error = residual / (1 - q) if q < 1 else np.inf

        if bound <= tol and m_error <= tol:
            converged = True
            break
        if bound <= tol and not held_back:
            held_back = True
            logger.warning(
                "A posteriori bound %.3g met at iteration %d, but the estimated distance "
                "of x_%d to the fixed point is %.3g: iterating on",
                bound,
                k,
                k,
                m_error,
            )

        x, tx, x_next, tx_next = x_next, tx_next, x_after, tx_after
        m_step = residual

    iterations = len(trace)
    u = MPoint(iterates[-1])
    failure = None
    if converged:
        logger.info(
            "Converged after %d iteration(s): u = %s, a posteriori bound %.3g",
            iterations,
            u.to_list(),
            bound,
        )
    else:
        failure = f"max_iter exhausted after {max_iter} iteration(s)"
        if bound <= tol:
            failure += (
                "; the a posteriori bound was met but the steps in M did not shrink"
                f" (estimated distance to the fixed point {m_error:.3g})"
            )
        logger.warning("Solve did not converge: %s (last step %.3g)", failure, trace[-1])

    certificate = Certificate(
        h=h,
        d0_norm=d0_norm,
        normal_constant=K,
        apriori_curve=[apriori_bound(h, d0_norm, K, n) for n in range(iterations + 1)],
        aposteriori_residual=bound,
        decay_verified=verify_decay(trace, h, K),
        iterations_needed=iterations_needed(h, d0_norm, K, tol),
        m_error_estimate=float(m_error),
    )
    result = FixedPointResult(
        u=u,
        converged=converged,
        mode=mode,
        iterations=iterations,
        trace=trace,
        iterates=iterates,
        residual=residual,
        v_norm_gap=v_gap,
        certificate=certificate,
        failure=failure,
    )
    if probe_starts:
        starts = [problem.x0] + [s for s in probe_starts]
        result.unique_probe = uniqueness_probe(problem, starts, tol, max_iter)

    return result


def uniqueness_probe(problem: Problem, starts: list, tol: float, max_iter: int) -> bool:
    """
    Solves from every start and checks that the limits agree pairwise within
    2 K tol in norm.

    A start whose iteration does not converge, or whose maps fail to evaluate
    along the way (typically an overflow), counts as a disagreement.

    Args:
        problem (Problem): The problem; its x0 is replaced by each start.
        starts (list): At least two MPoint starts inside the domain.
        tol (float): Solver tolerance.
        max_iter (int): Solver iteration limit.

    Returns:
        bool: True iff every solve converged and all limits agree.
    """
    if len(starts) < 2:
        raise ValueError("uniqueness_probe needs at least 2 starts")

    limits = []
    for start in starts:
        try:
            result = solve(replace(problem, x0=start), tol, max_iter)
        except MapEvaluationError as e:
            logger.warning("Start %s failed to evaluate: %s", start.to_list(), e)
            return False
        if not result.converged:
            logger.warning("Start %s did not converge", start.to_list())
            return False
        limits.append(result.u.coords)

    rows = np.array(limits)
    pairwise = norms(distances(problem.space, rows[:, None, :], rows[None, :, :]))
    spread = float(np.max(pairwise))
    agree = spread <= 2 * problem.normal_constant * tol
    if not agree:
        logger.warning("Limits disagree: largest pairwise distance %.3g", spread)

    return agree
