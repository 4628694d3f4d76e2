import copy
import json
import math
import os
from dataclasses import replace
from unittest.mock import patch

import polars as pl
import pytest

from src.common.utils import get_fixture_names
from src.cli_harness.utils import (
    ProblemSyntaxError,
    ProblemValidationError,
    RunReport,
    load_problem,
    parse_problem,
    resolve_problem_path,
    run,
    write_report,
)
from src.contraction.utils import ContractionKind, estimate_min_constant
from src.maps.utils import MapSyntaxError, MPoint, UnknownIdentifierError
from src.ordered_space.utils import ConeKind

PASSING_FIXTURES = ["constant_map", "example_3_2", "example_3_2_tk2", "example_3_9", "kannan_x_over_5"]


def quick(problem, samples=3_000):
    return replace(problem, sample_pairs=samples, axiom_samples=samples // 3)


def test_bundled_fixtures():
    assert get_fixture_names() == sorted(PASSING_FIXTURES + ["corrupted_cone"])


def test_load_bundled_example():
    problem = load_problem("example_3_2")

    assert problem.name == "example_3_2"
    assert problem.T.source == "x^2"
    assert problem.S.source == "x/2"
    assert problem.kind == ContractionKind.TK1
    assert problem.constant == pytest.approx(1 / 3)
    assert problem.x0 == MPoint([1.0])
    assert problem.domain == ((-10.0, 10.0),)
    assert problem.starts == (MPoint([-5.0]), MPoint([0.3]), MPoint([7.0]))
    assert problem.space.cone.dimension == 33
    assert problem.sample_pairs == 100_000


def test_load_corrupted_cone_floors():
    problem = load_problem("corrupted_cone")
    cone = problem.space.cone

    assert cone.kind == ConeKind.SHIFTED_ORTHANT
    assert cone.floors[0] == -0.1
    assert all(f == 0.0 for f in cone.floors[1:])


def test_load_problem_file(problem_data, write_problem):
    problem = load_problem(write_problem(problem_data))

    assert problem.name == "sample_problem"
    assert problem.max_iter == 500
    assert problem.tol == 1e-9
    assert problem.T_capabilities.sequentially_convergent


def test_default_name_is_file_stem(problem_data, write_problem):
    del problem_data["name"]

    assert load_problem(write_problem(problem_data, "my_problem.json")).name == "my_problem"


def test_resolve_problem_path(problem_data, write_problem):
    path = write_problem(problem_data)

    assert resolve_problem_path(path) == path
    assert os.path.basename(resolve_problem_path("example_3_9")) == "example_3_9.json"
    with pytest.raises(FileNotFoundError):
        resolve_problem_path("no_such_problem")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_problem("/nonexistent/problem.json")


@pytest.mark.parametrize("text", ["", "{", '{"space": }'])
def test_malformed_json(write_problem, text):
    with pytest.raises(ProblemSyntaxError) as exc_info:
        load_problem(write_problem(text))

    assert exc_info.value.line == 1
    assert "line 1 column" in str(exc_info.value)


def test_constant_out_of_range(problem_data):
    problem_data["contraction"]["constant"] = 0.6

    with pytest.raises(ProblemValidationError) as exc_info:
        parse_problem(problem_data)

    assert exc_info.value.field == "contraction.constant"
    assert "constant out of [0, 1/2)" in str(exc_info.value)


def mutate(data, path, value):
    data = copy.deepcopy(data)
    *parents, key = path.split(".")
    target = data
    for parent in parents:
        target = target[parent]
    if value is None:
        del target[key]
    else:
        target[key] = value
    return data


@pytest.mark.parametrize(
    "path, value, field",
    [
        ("space", None, "space"),
        ("solve", None, "solve"),
        ("space.grid_size", 1, "space.grid_size"),
        ("space.grid_size", "33", "space.grid_size"),
        ("space.weight", "1/t", "space.weight"),
        ("space.cone", "ice_cream", "space"),
        ("space.floors", [0.0, 0.0], "space.floors"),
        ("maps.T", "x0; x1", "maps.T"),
        ("maps.S", 2, "maps.S"),
        ("maps.T_capabilities", {"sequentially_convergent": True}, "maps.T_capabilities"),
        ("contraction.kind", "TK3", "contraction.kind"),
        ("contraction.constant", "1/3", "contraction.constant"),
        ("solve.x0", [11.0], "solve.x0"),
        ("solve.x0", [1.0, 2.0], "solve.x0"),
        ("solve.starts", [[0.0], [-12.0]], "solve.starts[1]"),
        ("solve.domain", [10.0, -10.0], "solve.domain"),
        ("solve.tol", 0.0, "solve.tol"),
        ("solve.max_iter", 0, "solve.max_iter"),
        ("sampling.sample_pairs", -5, "sampling.sample_pairs"),
    ],
)
def test_invalid_fields_are_named(problem_data, path, value, field):
    with pytest.raises(ProblemValidationError) as exc_info:
        parse_problem(mutate(problem_data, path, value))

    assert exc_info.value.field == field
    assert str(exc_info.value).startswith(f"{field}:")


def test_map_syntax_errors_keep_their_type(problem_data):
    with pytest.raises(MapSyntaxError):
        parse_problem(mutate(problem_data, "maps.S", "x /"))
    with pytest.raises(UnknownIdentifierError):
        parse_problem(mutate(problem_data, "maps.T", "cube(x)"))


def test_check(problem_data):
    report = run(parse_problem(problem_data), "check")

    assert report.passed
    assert report.contraction.kind == ContractionKind.TK1
    assert report.solve is None and report.cone_axioms is None
    assert report.timings is None


def test_check_reports_violations(problem_data):
    report = run(parse_problem(mutate(problem_data, "contraction.constant", 0.3)), "check")

    assert not report.passed
    assert report.failures[0].startswith("TK1 condition violated on")
    assert report.violations_frame().height == len(report.contraction.violations)


def test_estimate(problem_data):
    report = run(parse_problem(problem_data), "estimate")
    estimate = report.estimate

    assert estimate["kind"] == "TK1"
    assert estimate["min_constant"] == pytest.approx(1 / 3, abs=1e-9)
    assert estimate["plain_kind"] == "K1"
    assert estimate["plain_min_constant"] >= 0.5
    assert estimate["lipschitz_constant"] == pytest.approx(0.5)
    assert report.passed


def test_solve(problem_data):
    report = run(parse_problem(problem_data), "solve", timings=True)

    assert report.passed
    assert report.solve.converged
    assert report.solve.unique_probe is True
    assert abs(report.solve.u.coords[0]) <= 1e-9
    assert set(report.timings) == {"solve"}
    assert report.trace_frame().height == report.solve.iterations


def test_solve_reports_exhaustion(problem_data):
    report = run(parse_problem(mutate(problem_data, "solve.max_iter", 3)), "solve")

    assert not report.passed
    assert "max_iter exhausted after 3 iteration(s)" in report.failures


def test_verify(problem_data):
    report = run(parse_problem(problem_data), "verify")

    assert report.passed
    assert report.cone_axioms.passed and report.normality.passed and report.metric_axioms.passed
    assert report.injectivity.refuted
    assert not report.injectivity_declared


def test_verify_declared_injectivity_refuted(problem_data):
    data = mutate(problem_data, "maps.T_capabilities.injective", True)
    report = run(parse_problem(data), "verify")

    assert not report.passed
    assert "declared injective" in report.failures[0]


def test_verify_skips_injectivity_for_plain_kinds():
    report = run(quick(load_problem("kannan_x_over_5")), "verify")

    assert report.injectivity is None
    assert report.passed


@pytest.mark.parametrize("name", PASSING_FIXTURES)
def test_bundled_fixtures_pass(name):
    report = run(quick(load_problem(name)), "all")

    assert report.passed, report.failures
    assert report.solve.converged


def test_constant_map_fixture():
    report = run(quick(load_problem("constant_map")), "solve")

    assert report.solve.iterations == 1
    assert report.solve.u == MPoint([3.0])


def test_corrupted_cone_fails_p3():
    report = run(quick(load_problem("corrupted_cone")), "all")

    assert not report.passed
    assert not report.cone_axioms.get("P3").passed
    assert any("axiom P3" in failure for failure in report.failures)
    assert report.solve.converged


def test_run_is_deterministic(problem_data):
    problem = parse_problem(problem_data)

    assert run(problem, "all", seed=3).to_json() == run(problem, "all", seed=3).to_json()


def test_unknown_subcommand(problem_data):
    with pytest.raises(ValueError, match="Unknown subcommand"):
        run(parse_problem(problem_data), "plot")


def test_report_round_trip(problem_data):
    report = run(parse_problem(problem_data), "all", timings=True)
    restored = RunReport.from_dict(json.loads(report.to_json()))

    assert restored.to_dict() == report.to_dict()
    assert list(json.loads(report.to_json())) == [
        "problem",
        "subcommand",
        "seed",
        "passed",
        "failures",
        "contraction",
        "estimate",
        "solve",
        "cone_axioms",
        "normality",
        "metric_axioms",
        "injectivity",
        "injectivity_declared",
        "timings",
    ]


def test_write_report(problem_data, tmp_path):
    report = run(parse_problem(problem_data), "solve")
    out = tmp_path / "report.json"
    trace_out = tmp_path / "trace.parquet"

    text = write_report(report, out=str(out), trace_out=str(trace_out))

    assert json.loads(out.read_text()) == json.loads(text)
    frame = pl.read_parquet(trace_out)
    assert frame.height == report.solve.iterations
    assert frame["t_step"][0] == pytest.approx(0.75 * math.e)


def test_trace_frame_needs_a_solve(problem_data):
    report = run(parse_problem(problem_data), "check")

    with pytest.raises(ValueError, match="no solver trace"):
        report.trace_frame()


def test_run_accepts_a_path(problem_data, write_problem):
    report = run(write_problem(problem_data), "check")

    assert report.problem == "sample_problem"
    assert report.passed


def test_estimate_reuses_the_plain_constant_for_plain_kinds():
    problem = quick(load_problem("kannan_x_over_5"))

    with patch(
        "src.cli_harness.utils.estimate_min_constant", wraps=estimate_min_constant
    ) as estimate:
        report = run(problem, "estimate")

    assert estimate.call_count == 1
    assert report.estimate["plain_kind"] == "K1"
    assert report.estimate["plain_min_constant"] == report.estimate["min_constant"]


def test_estimate_runs_both_kinds_for_t_conditions(problem_data):
    with patch(
        "src.cli_harness.utils.estimate_min_constant", wraps=estimate_min_constant
    ) as estimate:
        run(parse_problem(problem_data), "estimate")

    assert [c.args[3] for c in estimate.call_args_list] == [ContractionKind.TK1, ContractionKind.K1]
