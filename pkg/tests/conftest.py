import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hsiclass.io import SyntheticSceneSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    """24x24x8, 3 classes, mild noise."""
    return generate_synthetic(SyntheticSceneSpec(rows=24, cols=24, bands=8, classes=3,
                                                 patch_size=8, noise=0.05, seed=3))


@pytest.fixture(scope="session")
def clean_scene():
    return generate_synthetic(SyntheticSceneSpec(rows=20, cols=20, bands=10, classes=3,
                                                 patch_size=8, noise=0.0, seed=5))


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
