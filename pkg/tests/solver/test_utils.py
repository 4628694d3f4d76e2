import json
import logging
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.cone_metric.utils import example_space, standard_metric_space
from src.contraction.utils import ContractionKind
from src.maps.utils import MapCapabilities, MapEvaluationError, MPoint, parse_map
from src.solver.utils import (
    ConvergenceMode,
    FixedPointResult,
    Problem,
    apriori_bound,
    contraction_ratio,
    iterations_needed,
    solve,
    uniqueness_probe,
    verify_decay,
)


def test_contraction_ratio():
    assert contraction_ratio(1 / 3) == pytest.approx(0.5)
    assert contraction_ratio(0.0) == 0.0
    with pytest.raises(ValueError, match=r"\[0, 1/2\)"):
        contraction_ratio(0.5)


@pytest.mark.parametrize("x0, expected_iterations", [(1.0, 32), (-5.0, 34), (0.3, 30)])
def test_example_converges_to_zero(example_problem, x0, expected_iterations):
    problem = replace(example_problem, x0=MPoint([x0]))
    result = solve(problem, probe_starts=[MPoint([-5.0]), MPoint([7.0])])

    assert result.converged
    assert result.failure is None
    assert abs(result.u.coords[0]) <= 1e-9
    assert result.iterations == expected_iterations
    assert result.iterations <= 40
    assert result.unique_probe is True


def test_example_terminal_iterate(example_problem):
    result = solve(example_problem)

    assert result.u == MPoint([2.0**-32])
    assert result.iterates[0] == [1.0]
    assert result.iterates[-1] == [2.0**-32]
    assert len(result.iterates) == result.iterations + 1
    assert result.residual <= 1e-9
    # Su = u / 2, so both gaps are explicit
    assert result.residual == pytest.approx(2.0**-33 * math.e)
    assert result.v_norm_gap == pytest.approx((4.0**-32 - 4.0**-33) * math.e)


def test_example_trace_decays_geometrically(example_problem):
    result = solve(example_problem)
    trace = np.array(result.trace)

    assert trace[0] == pytest.approx(0.75 * math.e)
    np.testing.assert_allclose(trace[1:] / trace[:-1], 0.25)
    assert result.certificate.decay_verified
    assert verify_decay(result.trace, result.certificate.h)


def test_example_apriori_bound_dominates(example_problem):
    result = solve(example_problem)
    certificate = result.certificate

    assert certificate.h == pytest.approx(0.5)
    assert certificate.d0_norm == pytest.approx(0.75 * math.e)
    for n, x in enumerate(result.iterates):
        # v = T(0) = 0, so ||d(Tx_n, v)|| = x_n^2 e
        distance_to_limit = x[0] ** 2 * math.e
        assert certificate.apriori_curve[n] == pytest.approx(1.5 * math.e / 2**n)
        assert distance_to_limit <= certificate.apriori_curve[n]
        assert certificate.apriori(n) == pytest.approx(certificate.apriori_curve[n])


def test_example_certificate(example_problem):
    certificate = solve(example_problem).certificate

    assert certificate.iterations_needed == 32
    assert certificate.normal_constant == 1.0
    assert certificate.aposteriori_residual <= 1e-9
    assert certificate.m_error_estimate <= 1e-9


def test_tk2_agrees_with_tk1(example_problem, tk2_problem):
    tk1 = solve(example_problem)
    tk2 = solve(tk2_problem)

    assert tk2.converged
    assert tk2.certificate.h == pytest.approx(0.25, abs=1e-5)
    # Chatterjea certificates start from ||d(TSx_0, TSx_1)|| = (1/4 - 1/16) e
    assert tk2.certificate.d0_norm == pytest.approx(3 * math.e / 16)
    assert abs(tk2.u.coords[0] - tk1.u.coords[0]) <= 2e-9


def test_kannan_problem(kannan_problem):
    result = solve(kannan_problem)

    assert result.converged
    assert result.mode == ConvergenceMode.SEQUENTIAL
    assert abs(result.u.coords[0]) <= 1e-9
    assert result.certificate.h == pytest.approx(1 / 3)


def test_constant_map_converges_in_one_step(space):
    problem = Problem(
        space=space,
        T=parse_map("x"),
        S=parse_map("3"),
        kind=ContractionKind.K1,
        constant=0.0,
        x0=MPoint([0.0]),
        domain=(-10.0, 10.0),
    )
    result = solve(problem, probe_starts=[MPoint([-7.0]), MPoint([9.5])])

    assert result.converged
    assert result.iterations == 1
    assert result.u == MPoint([3.0])
    assert result.certificate.iterations_needed == 1
    assert result.unique_probe is True


def test_fixed_start(kannan_problem):
    result = solve(replace(kannan_problem, x0=MPoint([0.0])))

    assert result.converged
    assert result.iterations == 1
    assert result.trace == [0.0]
    assert result.u == MPoint([0.0])
    assert result.certificate.d0_norm == 0.0
    assert result.certificate.iterations_needed == 0
    assert result.certificate.apriori_curve == [0.0, 0.0]


def test_max_iter_exhausted(example_problem, caplog):
    with caplog.at_level(logging.WARNING):
        result = solve(example_problem, max_iter=5)

    assert not result.converged
    assert result.iterations == 5
    assert result.failure == "max_iter exhausted after 5 iteration(s)"
    assert result.u == MPoint([2.0**-5])
    assert "did not converge" in caplog.text


def test_divergent_map_fails_to_evaluate(space):
    problem = Problem(
        space=space,
        T=parse_map("x"),
        S=parse_map("x^2"),
        kind=ContractionKind.K1,
        constant=0.25,
        x0=MPoint([2.0]),
        domain=(-10.0, 10.0),
    )

    with pytest.raises(MapEvaluationError):
        solve(problem, max_iter=100)
    assert not uniqueness_probe(problem, [MPoint([0.5]), MPoint([2.0])], 1e-9, 100)


def test_uniqueness_probe_rejects_unconverged_start(example_problem):
    assert not uniqueness_probe(example_problem, [MPoint([1.0]), MPoint([7.0])], 1e-9, 10)


def test_uniqueness_probe_needs_two_starts(example_problem):
    with pytest.raises(ValueError):
        uniqueness_probe(example_problem, [MPoint([1.0])], 1e-9, 100)


def test_iterates_do_not_depend_on_the_cone(example_problem):
    plain = replace(example_problem, space=standard_metric_space())
    coarse = replace(example_problem, space=example_space(grid_size=2))

    weighted_result = solve(example_problem)
    for other in (plain, coarse):
        other_result = solve(other)
        n = min(len(weighted_result.iterates), len(other_result.iterates))
        assert other_result.iterates[:n] == weighted_result.iterates[:n]


def test_mode_follows_capabilities(example_problem, kannan_problem, caplog):
    assert example_problem.mode == ConvergenceMode.SEQUENTIAL
    assert kannan_problem.mode == ConvergenceMode.SEQUENTIAL

    bare = replace(example_problem, capabilities=MapCapabilities())
    with caplog.at_level(logging.WARNING):
        result = solve(bare)

    assert result.mode == ConvergenceMode.SUBSEQUENTIAL_ONLY
    assert "neither sequentially nor subsequentially" in caplog.text

    subsequential = replace(example_problem, capabilities=MapCapabilities(subsequentially_convergent=True))
    assert solve(subsequential).mode == ConvergenceMode.SUBSEQUENTIAL_ONLY


def test_result_round_trip(example_problem):
    result = solve(example_problem, probe_starts=[MPoint([-5.0])])
    restored = FixedPointResult.from_dict(json.loads(json.dumps(result.to_dict())))

    assert restored == result


def test_trace_frame(example_problem):
    result = solve(example_problem)
    frame = result.trace_frame()

    assert frame.columns == ["n", "x", "t_step", "apriori_bound"]
    assert frame.height == result.iterations
    assert frame["x"][0].to_list() == [1.0]
    assert frame["apriori_bound"][0] == pytest.approx(1.5 * math.e)


@pytest.mark.parametrize("tol, max_iter", [(0.0, 10), (-1e-9, 10), (1e-9, 0), (1e-9, 2.5)])
def test_solve_rejects_bad_arguments(example_problem, tol, max_iter):
    with pytest.raises(ValueError):
        solve(example_problem, tol=tol, max_iter=max_iter)


def test_problem_validation(space, square_map, half_map):
    arguments = dict(space=space, T=square_map, S=half_map, kind="TK1", domain=(-10.0, 10.0))

    assert Problem(constant=0.3, x0=MPoint([1.0]), **arguments).kind == ContractionKind.TK1
    with pytest.raises(ValueError, match="1/2"):
        Problem(constant=0.5, x0=MPoint([1.0]), **arguments)
    with pytest.raises(ValueError, match="outside the domain"):
        Problem(constant=0.3, x0=MPoint([11.0]), **arguments)
    with pytest.raises(ValueError, match="coordinates"):
        Problem(constant=0.3, x0=MPoint([1.0, 2.0]), **arguments)


def test_apriori_bound():
    assert apriori_bound(0.5, 0.75 * math.e, 1.0, 0) == pytest.approx(1.5 * math.e)
    assert apriori_bound(0.5, 0.0, 1.0, 3) == 0.0
    assert apriori_bound(0.0, 2.0, 1.0, 0) == 2.0
    assert apriori_bound(0.0, 2.0, 1.0, 1) == 0.0


@pytest.mark.parametrize(
    "h, d0_norm, K, n",
    [(1.0, 1.0, 1.0, 0), (-0.1, 1.0, 1.0, 0), (0.5, -1.0, 1.0, 0), (0.5, 1.0, 0.0, 0), (0.5, 1.0, 1.0, -1)],
)
def test_apriori_bound_rejects_bad_arguments(h, d0_norm, K, n):
    with pytest.raises(ValueError):
        apriori_bound(h, d0_norm, K, n)


def test_iterations_needed_examples():
    assert iterations_needed(0.5, 0.75 * math.e, 1.0, 1e-9) == 32
    assert iterations_needed(0.5, 0.0, 1.0, 1e-9) == 0
    assert iterations_needed(0.0, 5.0, 1.0, 1e-9) == 1
    with pytest.raises(ValueError):
        iterations_needed(0.5, 1.0, 1.0, 0.0)


@settings(max_examples=1000, deadline=None)
@given(
    h=st.floats(min_value=0.0, max_value=0.99),
    d0_norm=st.floats(min_value=1e-6, max_value=1e3),
    K=st.floats(min_value=1.0, max_value=10.0),
    tol=st.floats(min_value=1e-12, max_value=1.0),
)
def test_iterations_needed_is_smallest(h, d0_norm, K, tol):
    n = iterations_needed(h, d0_norm, K, tol)

    assert apriori_bound(h, d0_norm, K, n) <= tol
    if n > 0:
        assert apriori_bound(h, d0_norm, K, n - 1) > tol


def test_verify_decay():
    assert verify_decay([1.0, 0.5, 0.25], 0.5)
    assert not verify_decay([1.0, 0.9], 0.5)
    assert verify_decay([0.0], 0.0)
    with pytest.raises(ValueError):
        verify_decay([], 0.5)


@pytest.fixture
def oscillating_problem(space, square_map):
    # Tx_n = T(+-1) never moves, so the a posteriori bound is met at once
    return Problem(
        space=space,
        T=square_map,
        S=parse_map("-x"),
        kind=ContractionKind.TK1,
        constant=0.25,
        x0=MPoint([1.0]),
        domain=(-10.0, 10.0),
    )


def test_bound_met_but_iterates_oscillate(oscillating_problem, caplog):
    with caplog.at_level(logging.WARNING):
        result = solve(oscillating_problem, max_iter=5)

    assert not result.converged
    assert result.certificate.aposteriori_residual == 0.0
    assert result.certificate.m_error_estimate == float("inf")
    assert result.failure.startswith("max_iter exhausted after 5 iteration(s); the a posteriori bound was met")
    assert "iterating on" in caplog.text
    assert caplog.text.count("iterating on") == 1


def test_unconverged_result_ends_at_last_recorded_iterate(example_problem, oscillating_problem):
    for problem in (example_problem, oscillating_problem):
        result = solve(problem, max_iter=5)

        assert result.u.to_list() == result.iterates[-1]
        assert len(result.iterates) == result.iterations + 1
    assert solve(oscillating_problem, max_iter=5).u == MPoint([-1.0])


def test_non_finite_estimates_serialize_as_null(oscillating_problem):
    result = solve(oscillating_problem, max_iter=5)
    data = result.to_dict()

    assert data["certificate"]["m_error_estimate"] is None
    text = json.dumps(data, allow_nan=False)
    restored = FixedPointResult.from_dict(json.loads(text))
    assert restored.certificate.m_error_estimate == float("inf")
    assert restored == result
