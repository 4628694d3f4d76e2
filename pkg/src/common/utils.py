import logging
import os

import numpy as np

# Numerical defaults shared by every subpackage
DEFAULT_TOL = 1e-9
ORDER_SLACK = 1e-9
NORM_SLACK = 1e-12
INTERIOR_MARGIN = 1e-12
DIVISION_GUARD = 1e-15
COLLISION_TOL = 1e-12
DISTINCT_TOL = 1e-9

DEFAULT_GRID_SIZE = 33
DEFAULT_SEED = 42
DEFAULT_MAX_ITER = 10_000
DEFAULT_SAMPLE_PAIRS = 10_000
BATCH_SIZE = 10_000
MAX_RECORDED_VIOLATIONS = 100

FIXTURES_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "cli_harness",
    "fixtures",
)


def setup_logging(name: str = "src", level: int = logging.INFO) -> logging.Logger:
    """
    Set up simple logging to stderr with timestamp and level.

    Args:
        name (str): Name of the logger to configure.
        level (int): Logging level. Defaults to INFO.

    Returns:
        logging.Logger: The configured logger.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            "%(asctime)s %(levelname)s: %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return logger


def get_rng(seed: int) -> np.random.Generator:
    """
    Returns the seeded generator every sampling operation draws from.

    Args:
        seed (int): The seed threaded through from the caller (CLI --seed).

    Returns:
        np.random.Generator: A PCG64 generator.
    """
    return np.random.default_rng(seed)


def check_sample_count(sample_count: int, minimum: int = 1, name: str = "sample_count"):
    """
    Raises ValueError when a sample count is below its minimum.
    """
    if int(sample_count) != sample_count or sample_count < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {sample_count}")


def as_box(domain, dimension: int) -> np.ndarray:
    """
    Normalises a domain into a (dimension, 2) array of [low, high] bounds.

    A single interval (low, high) is broadcast over every coordinate.

    Args:
        domain: An interval (low, high) or a sequence of intervals, one per coordinate.
        dimension (int): Dimension of the points the domain describes.

    Returns:
        np.ndarray: Array of shape (dimension, 2).
    """
    box = np.asarray(domain, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dimension, 1))
    if box.shape != (dimension, 2):
        raise ValueError(
            f"Domain must be an interval or {dimension} intervals, got shape {box.shape}"
        )
    if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
        raise ValueError(f"Invalid domain box: {box.tolist()}")
    return box


def get_fixture_path(name: str, fixtures_path: str = FIXTURES_PATH) -> str:
    """
    This function receives the name of a bundled problem fixture.
    It returns the full path to its JSON file.

    Parameters:
    name (str): Fixture name, with or without the .json extension.
    fixtures_path (str): The folder holding the fixtures.

    Returns:
    str: The path to the fixture file.
    """
    filename = name if name.endswith(".json") else f"{name}.json"
    return os.path.join(fixtures_path, filename)


def get_fixture_names(fixtures_path: str = FIXTURES_PATH) -> list:
    """
    Returns the sorted names (without extension) of the bundled fixtures.
    """
    names = [
        os.path.splitext(f)[0] for f in os.listdir(fixtures_path) if f.endswith(".json")
    ]
    names.sort()

    return names


def finite_or_none(value):
    """
    Returns value as a float, or None when it is infinite or NaN, so that
    reports serialize to strict JSON.
    """
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def none_to_inf(value):
    """
    Inverse of finite_or_none for quantities whose only non-finite value is +inf.
    """
    return float("inf") if value is None else value
