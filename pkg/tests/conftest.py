from pathlib import Path

import numpy as np
import pytest

from zscmine.data import Dataset, SyntheticSpec, generate_synthetic, standardize

FIXTURES = Path(__file__).parent / "fixtures"

# Acceptance verdicts, printed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_manifest():
    return FIXTURES / "tiny4" / "manifest.json"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_task():
    """Standardized 8-class synthetic task, fast enough for unit tests."""
    spec = SyntheticSpec(C_total=8, C_test=3, images_per_class=6, d=8, a=5, seed=3)
    return standardize(generate_synthetic(spec))


@pytest.fixture(scope="session")
def default_task():
    return standardize(generate_synthetic(SyntheticSpec()))


def two_by_two():
    """Two classes with two images each; every image a training image."""
    features = np.arange(8, dtype=float).reshape(4, 2)
    attributes = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    return Dataset(features, attributes, [1, 1, 2, 2], {1: "train", 2: "train"})
