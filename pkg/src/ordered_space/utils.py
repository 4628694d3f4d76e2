"""
Ordered Banach Space Module

This module represents the real Banach space E at a fixed finite discretization,
the cone P inside it, the partial order the cone induces and the normality of the
cone under the sup norm.

Elements of E are EVector values (finite sample vectors). The only cone kind in
use is the nonnegative orthant; a shifted orthant exists so that corrupted cones
can be built and caught by the axiom suite.

Key Functions:
- cone_contains / cone_interior_contains: membership in P and in Int P
- compare: the relation between two vectors in the cone order
- verify_cone_axioms: sampled check of the cone axioms (closure, pointedness)
- verify_normality: sampled estimate of the normal constant
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from src.common.utils import (
    INTERIOR_MARGIN,
    NORM_SLACK,
    check_sample_count,
    get_rng,
)

logger = logging.getLogger(__name__)

# Scales used for the deterministic axis probes of the axiom suites
PROBE_SCALES = np.array([1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3])
MAX_COUNTEREXAMPLES = 10


class ConeKind(str, Enum):
    ORTHANT = "orthant"
    # Orthant with per-coordinate membership floors; never a cone unless all floors are 0
    SHIFTED_ORTHANT = "shifted_orthant"


class Relation(str, Enum):
    LEQ = "leq"
    LT = "lt"
    LL = "ll"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, eq=False)
class EVector:
    """
    Element of the discretized space E: a finite vector of samples with the sup norm.
    """

    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError(
                f"EVector needs a 1-d vector of at least one sample, got shape {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise ValueError("EVector coordinates must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def dimension(self) -> int:
        return self.samples.size

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EVector):
            return NotImplemented
        return self.dimension == other.dimension and bool(
            np.array_equal(self.samples, other.samples)
        )

    def __hash__(self):
        return hash(self.samples.tobytes())

    def __add__(self, other: "EVector") -> "EVector":
        _check_same_dimension(self, other)
        return EVector(self.samples + other.samples)

    def __sub__(self, other: "EVector") -> "EVector":
        _check_same_dimension(self, other)
        return EVector(self.samples - other.samples)

    def __neg__(self) -> "EVector":
        return EVector(-self.samples)

    def __mul__(self, scalar: float) -> "EVector":
        return EVector(float(scalar) * self.samples)

    __rmul__ = __mul__

    def isclose(self, other: "EVector", atol: float = NORM_SLACK) -> bool:
        _check_same_dimension(self, other)
        return bool(np.all(np.abs(self.samples - other.samples) <= atol))

    def to_list(self) -> list:
        return self.samples.tolist()

    def __repr__(self):
        return f"EVector({self.samples.tolist()})"


@dataclass(frozen=True)
class ConeSpec:
    """
    Cone P inside E together with the numerical margin for interior membership
    and the declared normal constant K.
    """

    dimension: int
    kind: ConeKind = ConeKind.ORTHANT
    interior_margin: float = INTERIOR_MARGIN
    normal_constant: float = 1.0
    floors: Optional[tuple] = None

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"Cone dimension must be a positive integer, got {self.dimension}")
        object.__setattr__(self, "kind", ConeKind(self.kind))
        if not self.interior_margin > 0:
            raise ValueError(f"interior_margin must be > 0, got {self.interior_margin}")
        if not self.normal_constant > 0:
            raise ValueError(f"normal_constant must be > 0, got {self.normal_constant}")
        if self.kind == ConeKind.ORTHANT and self.floors is not None:
            raise ValueError("The orthant cone takes no membership floors")
        if self.kind == ConeKind.SHIFTED_ORTHANT:
            floors = tuple(float(f) for f in (self.floors or ()))
            if len(floors) != self.dimension:
                raise ValueError(
                    f"A shifted orthant needs {self.dimension} floors, got {len(floors)}"
                )
            object.__setattr__(self, "floors", floors)

    @property
    def floor_vector(self) -> np.ndarray:
        if self.kind == ConeKind.ORTHANT:
            return np.zeros(self.dimension)
        return np.asarray(self.floors, dtype=float)


@dataclass(frozen=True)
class OrderReport:
    relation: Relation
    witness: Optional[int] = None

    @property
    def leq(self) -> bool:
        return self.relation in (Relation.LEQ, Relation.LT, Relation.LL)

    @property
    def lt(self) -> bool:
        return self.relation in (Relation.LT, Relation.LL)

    @property
    def ll(self) -> bool:
        return self.relation == Relation.LL


@dataclass
class AxiomCheck:
    axiom: str
    passed: bool
    checked: int
    counterexamples: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "axiom": self.axiom,
            "passed": self.passed,
            "checked": self.checked,
            "counterexamples": self.counterexamples,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AxiomCheck":
        return cls(**data)


@dataclass
class AxiomReport:
    """
    Outcome of a sampled axiom suite: one AxiomCheck per axiom.
    """

    suite: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def get(self, axiom: str) -> AxiomCheck:
        for check in self.checks:
            if check.axiom == axiom:
                return check
        raise KeyError(axiom)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "checks": [check.to_dict() for check in self.checks],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AxiomReport":
        return cls(
            suite=data["suite"],
            checks=[AxiomCheck.from_dict(c) for c in data["checks"]],
        )


@dataclass(frozen=True)
class NormalityReport:
    k_observed: float
    passed: bool
    witness: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "k_observed": self.k_observed,
            "passed": self.passed,
            "witness": None if self.witness is None else [list(w) for w in self.witness],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalityReport":
        witness = data.get("witness")
        return cls(
            k_observed=data["k_observed"],
            passed=data["passed"],
            witness=None if witness is None else tuple(tuple(w) for w in witness),
        )


def _check_same_dimension(x: EVector, y: EVector):
    if x.dimension != y.dimension:
        raise ValueError(f"Dimension mismatch: {x.dimension} != {y.dimension}")


def _check_cone_dimension(cone: ConeSpec, x: EVector):
    if x.dimension != cone.dimension:
        raise ValueError(
            f"Dimension mismatch: vector has {x.dimension} coordinates, cone has {cone.dimension}"
        )


def contains_rows(cone: ConeSpec, rows: np.ndarray) -> np.ndarray:
    """
    Vectorised cone membership: one boolean per row of an (N, m) array.
    """
    return np.all(rows >= cone.floor_vector, axis=-1)


def cone_contains(cone: ConeSpec, x: EVector) -> bool:
    """
    Exact membership of x in the cone; no tolerance.

    Args:
        cone (ConeSpec): The cone.
        x (EVector): Vector with cone.dimension coordinates.

    Returns:
        bool: True iff every coordinate of x is at or above its floor (0 for the orthant).
    """
    _check_cone_dimension(cone, x)
    return bool(contains_rows(cone, x.samples))


def cone_interior_contains(cone: ConeSpec, x: EVector) -> bool:
    """
    Numerical stand-in for x in Int P: every coordinate clears the interior margin.
    """
    _check_cone_dimension(cone, x)
    return bool(np.all(x.samples - cone.floor_vector >= cone.interior_margin))


def compare(cone: ConeSpec, x: EVector, y: EVector) -> OrderReport:
    """
    Reports the strongest relation x ll y, x lt y, x leq y that holds, or incomparable.

    Args:
        cone (ConeSpec): The cone inducing the order.
        x (EVector): Left operand.
        y (EVector): Right operand.

    Returns:
        OrderReport: The relation and, when x leq y fails, the first violating coordinate.
    """
    _check_cone_dimension(cone, x)
    _check_cone_dimension(cone, y)
    diff = y - x

    if cone_interior_contains(cone, diff):
        return OrderReport(Relation.LL)
    if cone_contains(cone, diff):
        # Antisymmetry is exact for the orthant, so equality is exact too
        return OrderReport(Relation.LEQ if x == y else Relation.LT)

    witness = int(np.argmax(diff.samples < cone.floor_vector))
    return OrderReport(Relation.INCOMPARABLE, witness=witness)


def axis_probes(dimension: int, signed: bool = False) -> np.ndarray:
    """
    Deterministic sparse probes s * e_i for every coordinate i and scale s.

    Sparse vectors are where corrupted membership rules show up: a dense random
    sample almost never lands on an axis.
    """
    eye = np.eye(dimension)
    probes = (PROBE_SCALES[:, None, None] * eye[None, :, :]).reshape(-1, dimension)
    if signed:
        probes = np.vstack([probes, -probes])
    return probes


def sample_members(cone: ConeSpec, sample_count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws members of the cone: dense log-scaled random vectors plus signed axis
    probes, filtered through the membership test.

    Args:
        cone (ConeSpec): The cone to sample.
        sample_count (int): Number of dense random candidates.
        rng (np.random.Generator): Seeded generator.

    Returns:
        np.ndarray: Array of shape (N, cone.dimension) of members.
    """
    m = cone.dimension
    scales = 10.0 ** rng.uniform(-3, 3, size=(sample_count, 1))
    dense = np.abs(rng.standard_normal((sample_count, m))) * scales
    # Zero out a random subset of coordinates so that boundary points are covered
    mask = rng.random((sample_count, m)) > 0.25
    mask[0] = True
    dense *= mask
    candidates = np.vstack([dense + cone.floor_vector, axis_probes(m, signed=True)])

    return candidates[contains_rows(cone, candidates)]


def verify_cone_axioms(cone: ConeSpec, sample_count: int, seed: int) -> AxiomReport:
    """
    Sampled check of the cone axioms.

    P1 (closed, nonempty, not {0}) is structural for the orthant kinds. P2
    (closure under nonnegative combinations) is checked on sampled members and
    coefficients, P3 (x and -x both in P forces x = 0) on sampled nonzero members.

    Args:
        cone (ConeSpec): The cone under test.
        sample_count (int): Number of sampled tuples per axiom, >= 1.
        seed (int): Seed for the sampler.

    Returns:
        AxiomReport: Pass/fail per axiom with counterexamples.

    Raises:
        ValueError: If sample_count < 1.
    """
    check_sample_count(sample_count)
    rng = get_rng(seed)
    m = cone.dimension

    p1 = AxiomCheck(
        axiom="P1",
        passed=True,
        checked=0,
        note=f"structural for the {cone.kind.value} kind: closed half-space intersection",
    )

    members = sample_members(cone, sample_count, rng)
    idx_x = rng.integers(0, len(members), size=sample_count)
    idx_y = rng.integers(0, len(members), size=sample_count)
    coeffs = 10.0 ** rng.uniform(-3, 3, size=(sample_count, 2))
    coeffs *= rng.random((sample_count, 2)) > 0.1
    combos = coeffs[:, :1] * members[idx_x] + coeffs[:, 1:] * members[idx_y]
    bad = np.flatnonzero(~contains_rows(cone, combos))
    p2 = AxiomCheck(
        axiom="P2",
        passed=bad.size == 0,
        checked=sample_count,
        counterexamples=[
            {
                "a": float(coeffs[i, 0]),
                "b": float(coeffs[i, 1]),
                "x": members[idx_x[i]].tolist(),
                "y": members[idx_y[i]].tolist(),
            }
            for i in bad[:MAX_COUNTEREXAMPLES]
        ],
    )

    nonzero = members[np.any(members != 0, axis=1)]
    both = np.flatnonzero(contains_rows(cone, -nonzero))
    p3 = AxiomCheck(
        axiom="P3",
        passed=both.size == 0,
        checked=len(nonzero),
        counterexamples=[{"x": nonzero[i].tolist()} for i in both[:MAX_COUNTEREXAMPLES]],
    )

    report = AxiomReport(suite=f"cone[{cone.kind.value}, m={m}]", checks=[p1, p2, p3])
    logger.debug(
        "Cone axioms on m=%d: P2 %d/%d bad, P3 %d/%d bad",
        m,
        bad.size,
        sample_count,
        both.size,
        len(nonzero),
    )
    return report


def verify_normality(cone: ConeSpec, sample_count: int, seed: int) -> NormalityReport:
    """
    Samples pairs 0 <= x <= y and returns the largest observed ratio ||x|| / ||y||.

    The first pair is always x = y, so the observed constant is at least 1 and a
    declared K below 1 is refuted with that pair as witness.

    Args:
        cone (ConeSpec): The cone under test.
        sample_count (int): Number of sampled pairs, >= 1.
        seed (int): Seed for the sampler.

    Returns:
        NormalityReport: Observed constant, pass iff it is within the declared K
        (plus 1e-12), and the pair attaining it.
    """
    check_sample_count(sample_count)
    rng = get_rng(seed)

    ys = sample_members(cone, sample_count, rng)
    shrink = rng.random(ys.shape)
    shrink[0] = 1.0
    xs = cone.floor_vector + (ys - cone.floor_vector) * shrink

    ordered = contains_rows(cone, xs) & contains_rows(cone, ys - xs + cone.floor_vector)
    x_norms = np.max(np.abs(xs), axis=1)
    y_norms = np.max(np.abs(ys), axis=1)
    usable = ordered & (y_norms > 0)
    if not np.any(usable):
        return NormalityReport(k_observed=0.0, passed=True)

    ratios = np.where(usable, x_norms / np.where(y_norms > 0, y_norms, 1.0), -np.inf)
    best = int(np.argmax(ratios))
    k_observed = float(ratios[best])

    return NormalityReport(
        k_observed=k_observed,
        passed=k_observed <= cone.normal_constant + NORM_SLACK,
        witness=(tuple(xs[best].tolist()), tuple(ys[best].tolist())),
    )
