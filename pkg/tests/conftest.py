from __future__ import annotations
import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from mpca_retrieval.utils.synthetic import gen_synthetic  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: timing-sensitive checks")


@pytest.fixture(autouse=True)
def _isolated_var_dir(tmp_path, monkeypatch):
    # run log and log files go under the test's tmp dir, never the repo's var/
    monkeypatch.setenv("MPCA_VAR_DIR", str(tmp_path / "var"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def small_dataset():
    return gen_synthetic(4, 12, (3, 4, 6), 0.3, seed=11)


@pytest.fixture
def trend_dataset():
    return gen_synthetic(5, 200, (6, 6, 16), 0.3, seed=1)
