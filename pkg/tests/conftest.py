import json

import pytest

from src.cone_metric.utils import example_space, standard_metric_space
from src.contraction.utils import ContractionKind
from src.maps.utils import MapCapabilities, MPoint, parse_map
from src.ordered_space.utils import ConeKind, ConeSpec
from src.solver.utils import Problem


@pytest.fixture
def orthant_cone():
    return ConeSpec(dimension=33)


@pytest.fixture
def small_cone():
    return ConeSpec(dimension=3)


@pytest.fixture
def corrupted_cone():
    # First coordinate admits values down to -0.1: P is no longer pointed
    return ConeSpec(
        dimension=33,
        kind=ConeKind.SHIFTED_ORTHANT,
        floors=(-0.1,) + (0.0,) * 32,
    )


@pytest.fixture
def space():
    return example_space()


@pytest.fixture
def small_space():
    return example_space(grid_size=2)


@pytest.fixture
def plain_space():
    return standard_metric_space()


@pytest.fixture
def sign_changing_space():
    return example_space(weight="t - 0.5")


@pytest.fixture
def square_map():
    return parse_map("x^2")


@pytest.fixture
def half_map():
    return parse_map("x/2")


@pytest.fixture
def identity_map():
    return parse_map("x")


@pytest.fixture
def fifth_map():
    return parse_map("x/5")


@pytest.fixture
def sequential_capabilities():
    return MapCapabilities(
        injective=False,
        continuous=True,
        subsequentially_convergent=True,
        sequentially_convergent=True,
    )


@pytest.fixture
def example_problem(space, square_map, half_map, sequential_capabilities):
    return Problem(
        space=space,
        T=square_map,
        S=half_map,
        kind=ContractionKind.TK1,
        constant=1 / 3,
        x0=MPoint([1.0]),
        domain=(-10.0, 10.0),
        capabilities=sequential_capabilities,
    )


@pytest.fixture
def tk2_problem(space, square_map, half_map, sequential_capabilities):
    return Problem(
        space=space,
        T=square_map,
        S=half_map,
        kind=ContractionKind.TK2,
        constant=0.2 + 1e-6,
        x0=MPoint([1.0]),
        domain=(-10.0, 10.0),
        capabilities=sequential_capabilities,
    )


@pytest.fixture
def kannan_problem(space, identity_map, fifth_map):
    return Problem(
        space=space,
        T=identity_map,
        S=fifth_map,
        kind=ContractionKind.K1,
        constant=0.25,
        x0=MPoint([1.0]),
        domain=(-10.0, 10.0),
    )


@pytest.fixture
def problem_data():
    return {
        "name": "sample_problem",
        "space": {
            "grid_size": 9,
            "weight": "exp(t)",
            "base": "absolute_difference",
            "interior_margin": 1e-12,
            "normal_constant": 1.0,
        },
        "maps": {
            "T": "x^2",
            "S": "x/2",
            "T_capabilities": {
                "injective": False,
                "continuous": True,
                "subsequentially_convergent": True,
                "sequentially_convergent": True,
            },
        },
        "contraction": {"kind": "TK1", "constant": 1 / 3},
        "solve": {
            "x0": [1.0],
            "domain": [-10.0, 10.0],
            "tol": 1e-9,
            "max_iter": 500,
            "starts": [[-5.0], [7.0]],
        },
        "sampling": {"sample_pairs": 2000, "axiom_samples": 500},
    }


@pytest.fixture
def write_problem(tmp_path):
    def _write(data, name="problem.json"):
        path = tmp_path / name
        path.write_text(data if isinstance(data, str) else json.dumps(data))
        return str(path)

    return _write
