import os
from pathlib import Path

import numpy as np
import pytest

from mewguide.config import default_config
from mewguide.experiments import get_model

# trained models are cached here and shared with the scripts
ROOT = Path(os.environ.get("MEWGUIDE_OUTPUT", Path(__file__).resolve().parents[1] / "runs"))


@pytest.fixture(scope="session")
def root():
    return ROOT


@pytest.fixture(scope="session")
def quadwell_model(root):
    return get_model(default_config("obs_toy"), root)


@pytest.fixture(scope="session")
def moons_model(root):
    return get_model(default_config("path_moons"), root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
