"""
Shared fixtures: grids, golden instances and a seeded generator.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from workflow.core.grid import make_grid, uniform_grid

THIRD = 1.0 / 3.0


@pytest.fixture(autouse=True)
def log_to_tmp(tmp_path, monkeypatch):
    """Keep log files out of the working tree"""
    monkeypatch.setenv("IRONKIT_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid2x2():
    return uniform_grid((2, 2))


@pytest.fixture
def grid3x3():
    return make_grid([([0, 1, 2], [THIRD] * 3), ([0, 1, 2], [THIRD] * 3)])


@pytest.fixture
def example1_alpha():
    return np.array([[6.0, 0.0], [0.0, 6.0]])


@pytest.fixture
def access_alphas():
    alpha_1 = np.array([[0, 9, 0], [1, 10, 1], [2, 11, 2]], dtype=float)
    alpha_2 = np.array([[0, 1, 2], [9, 10, 11], [0, 1, 2]], dtype=float)
    return [alpha_1, alpha_2]


@pytest.fixture
def example5_costs():
    c_1 = np.array([[3, 6, 9], [2, 4, 6], [1, 2, 3]], dtype=float)
    c_2 = np.array([[3, 2, 1], [6, 4, 2], [9, 6, 3]], dtype=float)
    return [c_1, c_2]


@pytest.fixture
def fixtures_dir():
    return project_root / "fixtures"
