import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from workflow.core.access import (
    access_objective,
    assign_access,
    iron_access,
    no_access_baseline,
    solve_access,
    verify_access,
)
from workflow.core.errors import ShapeMismatch
from workflow.core.iron import CostModel, singleton_partition
from workflow.core.majorize import majorizes_in_coordinate

ALPHA_TILDE_1 = np.array([[0, 9, 0], [0, 7, 0], [3, 14, 3]], dtype=float)
ALPHA_TILDE_2 = np.array([[0, 0, 3], [9, 7, 14], [0, 0, 3]], dtype=float)
Q_STAR = np.array([[0, 9, 3], [9, 14, 14], [3, 14, 6]], dtype=float)
ETA_1 = np.array([[0, 1, 0], [1 / 3, 1, 3 / 7], [1, 1, 1]])


@pytest.fixture
def access_result(access_alphas, grid3x3):
    return solve_access(access_alphas, grid3x3)


def test_coordinate_ironing(access_alphas, grid3x3):
    alphas_tilde, transfers, _, _ = iron_access(access_alphas, grid3x3)
    assert np.allclose(alphas_tilde[0], ALPHA_TILDE_1, atol=1e-6)
    assert np.allclose(alphas_tilde[1], ALPHA_TILDE_2, atol=1e-6)

    lam_1, lam_2 = transfers.in_value_units(grid3x3)
    assert np.allclose(lam_1, [[0, 0, 0], [1, 3, 1], [0, 0, 0]], atol=1e-6)
    assert np.allclose(lam_2, [[0, 1, 0], [0, 3, 0], [0, 1, 0]], atol=1e-6)


def test_alpha_tilde_majorizes_in_own_coordinate(access_result, access_alphas, grid3x3):
    for i in range(2):
        assert majorizes_in_coordinate(access_result.alphas_tilde[i], access_alphas[i], i, grid3x3, tol=1e-7)


def test_quality_and_partition(access_result):
    assert np.allclose(access_result.q_star, Q_STAR, atol=1e-6)
    assert access_result.partition.cells() == [
        [(0, 0)],
        [(0, 1), (0, 2)],
        [(1, 0), (2, 0)],
        [(1, 1), (1, 2), (2, 1), (2, 2)],
    ]


def test_access_probabilities(access_result):
    assert np.allclose(access_result.eta[0], ETA_1, atol=1e-6)
    assert np.allclose(access_result.eta[1], ETA_1.T, atol=1e-6)
    for i, eta in enumerate(access_result.eta):
        assert np.all(np.diff(access_result.q_star * eta, axis=i) >= -1e-9)


def test_no_access_baseline(access_alphas, grid3x3, access_result):
    result, value = no_access_baseline(access_alphas, grid3x3)
    assert np.allclose(result.alpha_bar, [[0, 6, 6], [6, 12, 12], [6, 12, 12]], atol=1e-6)
    assert access_result.objective >= value - 1e-9


def test_verify_access_passes(access_alphas, grid3x3, access_result):
    report = verify_access(access_alphas, access_result, grid3x3)
    assert report.passed, report.failed_checks()


def test_own_coordinate_monotone_inputs_are_untouched(grid2x2):
    alphas = [np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[0.0, 1.0], [0.0, 1.0]])]
    alphas_tilde, transfers, _, _ = iron_access(alphas, grid2x2)
    assert np.allclose(alphas_tilde[0], alphas[0])
    assert np.allclose(alphas_tilde[1], alphas[1])
    assert transfers.sup_norm() == pytest.approx(0.0, abs=1e-12)


def test_all_negative_means_no_access(grid2x2):
    alphas = [np.full((2, 2), -1.0), np.full((2, 2), -2.0)]
    result = solve_access(alphas, grid2x2)
    assert np.allclose(result.q_star, 0.0)
    for eta in result.eta:
        assert np.allclose(eta, 0.0)
    assert result.negative_entries == 8


def test_positive_alpha_tilde_gives_full_access(grid2x2):
    alphas_tilde = [np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([[1.0, 2.0], [1.0, 2.0]])]
    q_star = sum(alphas_tilde)
    etas, intervals = assign_access(alphas_tilde, q_star, singleton_partition(q_star, grid2x2), grid2x2)
    assert all(np.allclose(eta, 1.0) for eta in etas)
    assert intervals == []


def test_split_example1_keeps_cell_means(grid2x2, example1_alpha):
    alphas = [example1_alpha / 2.0, example1_alpha / 2.0]
    result = solve_access(alphas, grid2x2)
    assert np.allclose(result.partition.means, result.partition.values, atol=1e-6)
    assert verify_access(alphas, result, grid2x2).passed


def test_wrong_number_of_alphas(grid3x3, access_alphas):
    with pytest.raises(ShapeMismatch):
        iron_access(access_alphas[:1], grid3x3)


def test_optimum_beats_random_feasible_mechanisms(access_alphas, grid3x3, access_result, rng):
    cost = CostModel()
    best = access_result.objective
    for _ in range(200):
        levels = [np.maximum.accumulate(rng.uniform(0, 15, size=(3, 3)), axis=i) for i in range(2)]
        q = np.maximum(levels[0], levels[1]) + rng.uniform(0, 3, size=(3, 3))
        eta = [level / q for level in levels]
        assert access_objective(access_alphas, q, eta, cost, grid3x3) <= best + 1e-8
