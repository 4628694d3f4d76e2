"""
Problem files and run reports for the conefix command line.

A problem file is a JSON document with four required sections:

    {
      "name": "example_3_2",
      "space": {"grid_size": 33, "weight": "exp(t)", "base": "absolute_difference",
                "interior_margin": 1e-12, "normal_constant": 1.0},
      "maps": {"T": "x^2", "S": "x/2",
               "T_capabilities": {"injective": false, "continuous": true, ...}},
      "contraction": {"kind": "TK1", "constant": 0.3333333333333333},
      "solve": {"x0": [1.0], "domain": [-10, 10], "tol": 1e-9, "max_iter": 10000,
                "starts": [[-5.0], [0.3], [7.0]]}
    }

and an optional "sampling" section ({"sample_pairs": ..., "axiom_samples": ...}).
The space section may also carry "point_dimension", "cone" ("orthant" or
"shifted_orthant") and "floors" (a list of m values or a sparse
{"index": value} mapping) for fault-injection fixtures.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import polars as pl

from src.common.utils import (
    DEFAULT_MAX_ITER,
    DEFAULT_SAMPLE_PAIRS,
    DEFAULT_SEED,
    DEFAULT_TOL,
    INTERIOR_MARGIN,
    as_box,
    get_fixture_path,
)
from src.cone_metric.utils import BaseDistance, ConeMetricSpace, verify_metric_axioms
from src.contraction.utils import (
    ContractionKind,
    ContractionReport,
    check_condition,
    estimate_lipschitz_constant,
    estimate_min_constant,
)
from src.maps.utils import (
    InjectivityReport,
    MapCapabilities,
    MapExpr,
    MPoint,
    parse_map,
    spot_check_injective,
)
from src.ordered_space.utils import (
    AxiomReport,
    ConeKind,
    ConeSpec,
    NormalityReport,
    verify_cone_axioms,
    verify_normality,
)
from src.solver.utils import FixedPointResult, Problem, solve

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("check", "estimate", "solve", "verify", "all")
REQUIRED_SECTIONS = ("space", "maps", "contraction", "solve")
INJECTIVITY_SAMPLES = 2_000

# Plain condition a T-condition reduces to when T is the identity
PLAIN_KIND = {
    ContractionKind.TK1: ContractionKind.K1,
    ContractionKind.TK2: ContractionKind.K2,
    ContractionKind.K1: ContractionKind.K1,
    ContractionKind.K2: ContractionKind.K2,
}


class ProblemSyntaxError(ValueError):
    """
    A problem file that is not well-formed JSON.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line} column {column}")
        self.line = line
        self.column = column


class ProblemValidationError(ValueError):
    """
    A problem file whose content breaks an invariant; field names the offender.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ProblemFile:
    """
    A fully validated problem: every expression parsed, every range checked.
    """

    name: str
    space: ConeMetricSpace
    T: MapExpr
    S: MapExpr
    T_capabilities: MapCapabilities
    kind: ContractionKind
    constant: float
    x0: MPoint
    domain: tuple
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    starts: tuple = ()
    sample_pairs: int = DEFAULT_SAMPLE_PAIRS
    axiom_samples: int = DEFAULT_SAMPLE_PAIRS

    def to_problem(self) -> Problem:
        return Problem(
            space=self.space,
            T=self.T,
            S=self.S,
            kind=self.kind,
            constant=self.constant,
            x0=self.x0,
            domain=self.domain,
            capabilities=self.T_capabilities,
        )


def _section(data: dict, name: str) -> dict:
    section = data.get(name)
    if not isinstance(section, dict):
        raise ProblemValidationError(name, "missing or not an object")
    return section


def _number(section: dict, path: str, key: str, default=None) -> float:
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemValidationError(f"{path}.{key}", f"expected a number, got {value!r}")
    return value


def _integer(section: dict, path: str, key: str, default=None, minimum: int = 1) -> int:
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ProblemValidationError(
            f"{path}.{key}", f"expected an integer >= {minimum}, got {value!r}"
        )
    return value


def _expression(section: dict, path: str, key: str) -> MapExpr:
    source = section.get(key)
    if not isinstance(source, str):
        raise ProblemValidationError(f"{path}.{key}", f"expected a map source, got {source!r}")
    # Parse errors keep their own type and position
    return parse_map(source)


def _point(value, path: str, dimension: int) -> MPoint:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or len(value) != dimension:
        raise ProblemValidationError(path, f"expected {dimension} coordinate(s), got {value!r}")
    try:
        return MPoint(value)
    except (TypeError, ValueError) as e:
        raise ProblemValidationError(path, str(e))


def _floors(value, grid_size: int) -> Optional[tuple]:
    if value is None:
        return None
    if isinstance(value, dict):
        floors = [0.0] * grid_size
        for index, floor in value.items():
            if not str(index).isdigit() or int(index) >= grid_size:
                raise ProblemValidationError("space.floors", f"index {index} out of range")
            floors[int(index)] = float(floor)
        return tuple(floors)
    if not isinstance(value, list) or len(value) != grid_size:
        raise ProblemValidationError("space.floors", f"expected {grid_size} values")
    return tuple(float(f) for f in value)


def _build_space(section: dict) -> ConeMetricSpace:
    grid_size = _integer(section, "space", "grid_size", minimum=2)
    try:
        cone = ConeSpec(
            dimension=grid_size,
            kind=ConeKind(section.get("cone", ConeKind.ORTHANT.value)),
            interior_margin=_number(section, "space", "interior_margin", INTERIOR_MARGIN),
            normal_constant=_number(section, "space", "normal_constant", 1.0),
            floors=_floors(section.get("floors"), grid_size),
        )
        base = BaseDistance(section.get("base", BaseDistance.ABSOLUTE_DIFFERENCE.value))
    except ProblemValidationError:
        raise
    except ValueError as e:
        raise ProblemValidationError("space", str(e))

    weight = _expression(section, "space", "weight")
    point_dimension = _integer(section, "space", "point_dimension", 1)
    try:
        return ConeMetricSpace(
            point_dimension=point_dimension, cone=cone, weight=weight, base=base
        )
    except ValueError as e:
        raise ProblemValidationError("space.weight", f"cannot evaluate on the grid: {e}")


def parse_problem(data: dict, default_name: str = "problem") -> ProblemFile:
    """
    Validates a decoded problem document and builds the ProblemFile.

    Raises:
        ProblemValidationError: On a missing section or an invalid field.
        MapSyntaxError, UnknownIdentifierError: On an invalid map source.
    """
    if not isinstance(data, dict):
        raise ProblemValidationError("problem", "expected a JSON object")
    for name in REQUIRED_SECTIONS:
        _section(data, name)

    space = _build_space(data["space"])
    dimension = space.point_dimension

    maps = data["maps"]
    T = _expression(maps, "maps", "T")
    S = _expression(maps, "maps", "S")
    for key, expr in (("T", T), ("S", S)):
        if expr.arity != dimension:
            raise ProblemValidationError(
                f"maps.{key}", f"has {expr.arity} component(s), points have {dimension}"
            )
    try:
        capabilities = MapCapabilities(**maps.get("T_capabilities", {}))
    except (TypeError, ValueError) as e:
        raise ProblemValidationError("maps.T_capabilities", str(e))

    contraction = data["contraction"]
    try:
        kind = ContractionKind(contraction.get("kind"))
    except ValueError:
        raise ProblemValidationError(
            "contraction.kind", f"expected one of TK1, TK2, K1, K2, got {contraction.get('kind')!r}"
        )
    constant = _number(contraction, "contraction", "constant")
    if not 0 <= constant < 0.5:
        raise ProblemValidationError("contraction.constant", "constant out of [0, 1/2)")

    section = data["solve"]
    try:
        box = as_box(section.get("domain"), dimension)
    except (TypeError, ValueError) as e:
        raise ProblemValidationError("solve.domain", str(e))
    domain = tuple(tuple(row) for row in box.tolist())
    x0 = _point(section.get("x0"), "solve.x0", dimension)
    starts = tuple(
        _point(start, f"solve.starts[{i}]", dimension)
        for i, start in enumerate(section.get("starts", []))
    )
    for path, point in [("solve.x0", x0)] + [
        (f"solve.starts[{i}]", s) for i, s in enumerate(starts)
    ]:
        if (point.coords < box[:, 0]).any() or (point.coords > box[:, 1]).any():
            raise ProblemValidationError(path, f"{point.to_list()} lies outside the domain")
    tol = _number(section, "solve", "tol", DEFAULT_TOL)
    if not tol > 0:
        raise ProblemValidationError("solve.tol", f"must be > 0, got {tol}")

    sampling = data.get("sampling", {})
    return ProblemFile(
        name=data.get("name", default_name),
        space=space,
        T=T,
        S=S,
        T_capabilities=capabilities,
        kind=kind,
        constant=float(constant),
        x0=x0,
        domain=domain,
        tol=float(tol),
        max_iter=_integer(section, "solve", "max_iter", DEFAULT_MAX_ITER),
        starts=starts,
        sample_pairs=_integer(sampling, "sampling", "sample_pairs", DEFAULT_SAMPLE_PAIRS),
        axiom_samples=_integer(sampling, "sampling", "axiom_samples", DEFAULT_SAMPLE_PAIRS),
    )


def resolve_problem_path(path: str) -> str:
    """
    Returns path itself when it exists, otherwise the bundled fixture of that name.

    Raises:
        FileNotFoundError: If neither exists.
    """
    if os.path.isfile(path):
        return path
    fixture = get_fixture_path(path)
    if os.path.isfile(fixture):
        return fixture
    raise FileNotFoundError(f"Problem file not found: {path}")


def load_problem(path: str) -> ProblemFile:
    """
    Loads and validates a problem file, parsing every expression eagerly.

    Args:
        path (str): A JSON file, or the name of a bundled fixture (e.g. "example_3_2").

    Returns:
        ProblemFile: The validated problem.

    Raises:
        FileNotFoundError: If the file does not exist.
        ProblemSyntaxError: If the file is not valid JSON (an empty file included).
        ProblemValidationError: If a field breaks an invariant.
        MapSyntaxError, UnknownIdentifierError: If a map source does not parse.
    """
    resolved = resolve_problem_path(path)
    with open(resolved, encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemSyntaxError(e.msg, e.lineno, e.colno)

    name = os.path.splitext(os.path.basename(resolved))[0]
    problem = parse_problem(data, default_name=name)
    logger.info("Loaded problem '%s' from %s", problem.name, resolved)

    return problem


@dataclass
class RunReport:
    """
    Everything one run produced. Sections a subcommand does not touch stay None.
    """

    problem: str
    subcommand: str
    seed: int
    contraction: Optional[ContractionReport] = None
    estimate: Optional[dict] = None
    solve: Optional[FixedPointResult] = None
    cone_axioms: Optional[AxiomReport] = None
    normality: Optional[NormalityReport] = None
    metric_axioms: Optional[AxiomReport] = None
    injectivity: Optional[InjectivityReport] = None
    injectivity_declared: bool = False
    timings: Optional[dict] = None
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "passed": self.passed,
            "failures": self.failures,
            "contraction": self.contraction and self.contraction.to_dict(),
            "estimate": self.estimate,
            "solve": self.solve and self.solve.to_dict(),
            "cone_axioms": self.cone_axioms and self.cone_axioms.to_dict(),
            "normality": self.normality and self.normality.to_dict(),
            "metric_axioms": self.metric_axioms and self.metric_axioms.to_dict(),
            "injectivity": self.injectivity and self.injectivity.to_dict(),
            "injectivity_declared": self.injectivity_declared,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        def load(kind, value):
            return None if value is None else kind.from_dict(value)

        return cls(
            problem=data["problem"],
            subcommand=data["subcommand"],
            seed=data["seed"],
            contraction=load(ContractionReport, data["contraction"]),
            estimate=data["estimate"],
            solve=load(FixedPointResult, data["solve"]),
            cone_axioms=load(AxiomReport, data["cone_axioms"]),
            normality=load(NormalityReport, data["normality"]),
            metric_axioms=load(AxiomReport, data["metric_axioms"]),
            injectivity=load(InjectivityReport, data["injectivity"]),
            injectivity_declared=data["injectivity_declared"],
            timings=data["timings"],
            failures=data["failures"],
        )

    def to_json(self) -> str:
        # Insertion order is the stable field order; non-finite floats are null
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def trace_frame(self) -> pl.DataFrame:
        if self.solve is None:
            raise ValueError(f"Report of '{self.subcommand}' holds no solver trace")
        return self.solve.trace_frame()

    def violations_frame(self) -> pl.DataFrame:
        if self.contraction is None:
            raise ValueError(f"Report of '{self.subcommand}' holds no contraction check")
        return self.contraction.violations_frame()


def _timed(timings: dict, key: str, func, *args, **kwargs):
    started = time.perf_counter()
    result = func(*args, **kwargs)
    timings[key] = round(time.perf_counter() - started, 6)
    return result


def run_check(problem: ProblemFile, report: RunReport, seed: int, workers: int, progress: bool):
    report.contraction = _timed(
        report.timings,
        "check",
        check_condition,
        problem.space,
        problem.T,
        problem.S,
        problem.kind,
        problem.constant,
        problem.sample_pairs,
        problem.domain,
        seed,
        workers,
        progress,
    )
    if not report.contraction.passed:
        report.failures.append(
            f"{problem.kind.value} condition violated on "
            f"{report.contraction.violation_count} pair(s)"
        )


def run_estimate(problem: ProblemFile, report: RunReport, seed: int, workers: int, progress: bool):
    started = time.perf_counter()
    plain_kind = PLAIN_KIND[problem.kind]
    args = (problem.sample_pairs, problem.domain, seed, workers, progress)
    min_constant = estimate_min_constant(problem.space, problem.T, problem.S, problem.kind, *args)
    if plain_kind is problem.kind:
        plain_min_constant = min_constant
    else:
        plain_min_constant = estimate_min_constant(
            problem.space, problem.T, problem.S, plain_kind, *args
        )
    report.estimate = {
        "kind": problem.kind.value,
        "min_constant": min_constant,
        "plain_kind": plain_kind.value,
        "plain_min_constant": plain_min_constant,
        "lipschitz_constant": estimate_lipschitz_constant(
            problem.space, problem.S, problem.sample_pairs, problem.domain, seed
        ),
    }
    report.timings["estimate"] = round(time.perf_counter() - started, 6)


def run_solve(problem: ProblemFile, report: RunReport):
    report.solve = _timed(
        report.timings,
        "solve",
        solve,
        problem.to_problem(),
        problem.tol,
        problem.max_iter,
        probe_starts=list(problem.starts) or None,
    )
    if not report.solve.converged:
        report.failures.append(report.solve.failure)
    if report.solve.unique_probe is False:
        report.failures.append("uniqueness probe: limits from different starts disagree")


def run_verify(problem: ProblemFile, report: RunReport, seed: int):
    started = time.perf_counter()
    samples = problem.axiom_samples
    report.cone_axioms = verify_cone_axioms(problem.space.cone, samples, seed)
    report.normality = verify_normality(problem.space.cone, samples, seed)
    report.metric_axioms = verify_metric_axioms(problem.space, samples, seed)
    if not problem.kind.t_is_identity:
        report.injectivity_declared = problem.T_capabilities.injective
        report.injectivity = spot_check_injective(
            problem.T, min(samples, INJECTIVITY_SAMPLES), problem.domain, seed
        )
    report.timings["verify"] = round(time.perf_counter() - started, 6)

    for suite in (report.cone_axioms, report.metric_axioms):
        for check in suite.checks:
            if not check.passed:
                report.failures.append(
                    f"{suite.suite} axiom {check.axiom}: {len(check.counterexamples)} counterexample(s)"
                )
    if not report.normality.passed:
        report.failures.append(
            f"normality: observed K {report.normality.k_observed:.6g} exceeds the declared "
            f"{problem.space.cone.normal_constant:.6g}"
        )
    if report.injectivity_declared and report.injectivity.refuted:
        report.failures.append("T is declared injective but a sampled collision refutes it")


def run(
    problem,
    subcommand: str,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
    progress: bool = False,
    timings: bool = False,
) -> RunReport:
    """
    Runs one subcommand on a problem.

    Args:
        problem: A loaded ProblemFile, or a path or bundled name for load_problem.
        subcommand (str): check, estimate, solve, verify or all.
        seed (int): Seed threaded through every sampling operation.
        workers (int): Processes for contraction pair evaluation.
        progress (bool): Show progress bars.
        timings (bool): Keep wall-clock timings in the report.

    Returns:
        RunReport: The report; passed is False when a check found violations or
        the solver failed.

    Raises:
        MapEvaluationError: If a map fails to evaluate on a sampled point or iterate.
    """
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"Unknown subcommand '{subcommand}', expected one of {SUBCOMMANDS}")
    if isinstance(problem, str):
        problem = load_problem(problem)

    report = RunReport(problem=problem.name, subcommand=subcommand, seed=seed, timings={})
    if subcommand in ("check", "all"):
        run_check(problem, report, seed, workers, progress)
    if subcommand in ("estimate", "all"):
        run_estimate(problem, report, seed, workers, progress)
    if subcommand in ("solve", "all"):
        run_solve(problem, report)
    if subcommand in ("verify", "all"):
        run_verify(problem, report, seed)
    if not timings:
        report.timings = None

    return report


def write_report(report: RunReport, out: Optional[str] = None, trace_out: Optional[str] = None) -> str:
    """
    Serializes the report, optionally writing it to out and the solver trace to
    trace_out as parquet.

    Returns:
        str: The JSON text.
    """
    text = report.to_json()
    if out:
        try:
            with open(out, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        except OSError as e:
            raise RuntimeError(f"Error writing report {out}: {e}")
    if trace_out:
        frame = report.trace_frame()
        try:
            frame.write_parquet(trace_out)
        except OSError as e:
            raise RuntimeError(f"Error writing trace {trace_out}: {e}")

    return text
