import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from workflow.core.errors import NotMajorized, NotMonotone, ShapeMismatch
from workflow.core.grid import is_nondecreasing, uniform_grid
from workflow.core.majorize import (
    apply_t_transforms,
    decompose_t_transforms,
    majorizes,
    majorizes_in_coordinate,
    minimality_ranges,
)

H = np.array([[0.0, 2.0], [4.0, 6.0]])
COLUMN_AVERAGE = np.array([[1.0, 1.0], [5.0, 5.0]])
DIAGONAL_AVERAGE = np.array([[0.0, 3.0], [3.0, 6.0]])


def _polyline(lam):
    mu = max(6.0 - 2.0 * lam, 3.0 - lam / 2.0)
    return mu, np.array([[6.0 - lam - mu, mu], [lam, 6.0]])


@pytest.mark.parametrize("method", ["oracle", "flow"])
def test_column_averaging_is_majorized(grid2x2, method):
    certificate = majorizes(H, COLUMN_AVERAGE, grid2x2, method=method)
    assert certificate.verdict
    assert certificate.witness is None


def test_diagonal_averaging_rejected_with_witness(grid2x2):
    certificate = majorizes(H, DIAGONAL_AVERAGE, grid2x2)
    assert not certificate.verdict
    assert certificate.witness.members() == [(0, 0), (1, 0)]
    assert certificate.residual == pytest.approx(0.25)


def test_flow_witness_violates_inequality(grid2x2):
    certificate = majorizes(H, DIAGONAL_AVERAGE, grid2x2, method="flow")
    assert not certificate.verdict
    mask = certificate.witness.mask
    gap = float(np.sum((grid2x2.f * (DIAGONAL_AVERAGE - H))[mask]))
    assert gap < -1e-9


def test_flow_certificate_recovers_transfers(grid2x2):
    certificate = majorizes(H, COLUMN_AVERAGE, grid2x2, method="flow")
    assert np.allclose(certificate.transfers[0], 0.0, atol=1e-10)
    assert np.allclose(certificate.transfers[1], [[0.25, 0.0], [0.25, 0.0]], atol=1e-10)


def test_reflexive_with_zero_residual(grid3x3, rng):
    g = rng.normal(size=(3, 3))
    for method in ("oracle", "flow"):
        certificate = majorizes(g, g, grid3x3, method=method)
        assert certificate.verdict
        assert certificate.residual == pytest.approx(0.0, abs=1e-12)


def test_mean_mismatch_reports_full_grid(grid2x2):
    certificate = majorizes(H, H + 1.0, grid2x2)
    assert not certificate.verdict
    assert certificate.witness.size == 4


def test_transitive_on_chain(grid2x2):
    top = np.array([[0.0, 0.0], [0.0, 12.0]])
    middle = np.array([[0.0, 2.0], [2.0, 8.0]])
    bottom = np.array([[2.0, 2.0], [2.0, 6.0]])
    assert majorizes(top, middle, grid2x2).verdict
    assert majorizes(middle, bottom, grid2x2).verdict
    assert majorizes(top, bottom, grid2x2).verdict


def test_majorizes_errors(grid2x2):
    with pytest.raises(ShapeMismatch):
        majorizes(np.zeros((2, 3)), H, grid2x2)
    with pytest.raises(ValueError):
        majorizes(H, H, grid2x2, method="simplex")


def test_oracle_and_flow_agree_on_random_pairs(rng):
    grid = uniform_grid((2, 3))
    for _ in range(25):
        h = rng.normal(size=grid.shape)
        g = rng.normal(size=grid.shape)
        g += np.sum(grid.f * (h - g))
        oracle = majorizes(h, g, grid, method="oracle")
        flow = majorizes(h, g, grid, method="flow")
        assert oracle.verdict == flow.verdict


def test_majorizes_in_coordinate_on_a_line():
    grid = uniform_grid((3,))
    spread = np.array([1.0, 2.0, 3.0])
    flat = np.array([2.0, 2.0, 2.0])
    assert majorizes_in_coordinate(spread, flat, 0, grid)
    assert not majorizes_in_coordinate(flat, spread, 0, grid)
    assert majorizes_in_coordinate(flat, flat, 0, grid)


def test_majorizes_in_coordinate_per_line(grid2x2):
    assert majorizes_in_coordinate(H, COLUMN_AVERAGE, 1, grid2x2)
    assert not majorizes_in_coordinate(H, COLUMN_AVERAGE, 0, grid2x2)


def test_decompose_column_averaging(grid2x2):
    transforms = decompose_t_transforms(H, COLUMN_AVERAGE, grid2x2)
    assert len(transforms) == 2
    assert [t.agent for t in transforms] == [1, 1]
    assert sorted(t.line for t in transforms) == [(0,), (1,)]
    for transform in transforms:
        assert transform.pair == (0, 1)
        assert transform.delta == pytest.approx(1.0)
        assert transform.weight == pytest.approx(0.5)
    assert np.allclose(apply_t_transforms(H, transforms, grid2x2), COLUMN_AVERAGE, atol=1e-8)


def test_decompose_one_dimensional():
    grid = uniform_grid((3,))
    h = np.array([0.0, 2.0, 4.0])
    g = np.array([1.0, 2.0, 3.0])
    transforms = decompose_t_transforms(h, g, grid)
    assert len(transforms) == 1
    assert transforms[0].pair == (0, 2)
    assert transforms[0].weight == pytest.approx(0.25)
    assert np.allclose(apply_t_transforms(h, transforms, grid), g, atol=1e-8)


def test_decompose_identity_is_empty(grid2x2):
    assert decompose_t_transforms(H, H, grid2x2) == []


def test_decompose_relays_through_matching_profile(grid2x2):
    top = np.array([[0.0, 0.0], [0.0, 12.0]])
    ironed = np.array([[2.0, 2.0], [2.0, 6.0]])
    transforms = decompose_t_transforms(top, ironed, grid2x2)
    assert np.allclose(apply_t_transforms(top, transforms, grid2x2), ironed, atol=1e-8)
    assert all(0.0 <= t.weight <= 1.0 for t in transforms)

    current = top.copy()
    for transform in transforms:
        current = apply_t_transforms(current, [transform], grid2x2)
        assert majorizes(current, ironed, grid2x2).verdict


def test_decompose_preconditions(grid2x2, example1_alpha):
    with pytest.raises(NotMonotone):
        decompose_t_transforms(example1_alpha, example1_alpha, grid2x2)
    with pytest.raises(NotMajorized):
        decompose_t_transforms(COLUMN_AVERAGE, H, grid2x2)


@pytest.mark.parametrize("lam", np.linspace(0.0, 6.0, 13))
def test_polyline_points_majorize_alpha(grid2x2, example1_alpha, lam):
    _, h = _polyline(lam)
    assert majorizes(h, example1_alpha, grid2x2).verdict
    assert is_nondecreasing(h, tol=1e-12)


@pytest.mark.parametrize("lam", [0.5, 2.0, 3.0, 5.0])
def test_points_below_polyline_fail(grid2x2, example1_alpha, lam):
    mu, _ = _polyline(lam)
    below = np.array([[6.0 - lam - (mu - 0.5), mu - 0.5], [lam, 6.0]])
    assert not (majorizes(below, example1_alpha, grid2x2).verdict and is_nondecreasing(below))


def test_ironed_candidate_is_minimal(grid2x2, example1_alpha):
    ranges = minimality_ranges(np.array([[2.0, 2.0], [2.0, 6.0]]), example1_alpha, grid2x2)
    assert ranges.is_minimal()


@pytest.mark.parametrize("lam", [0.0, 3.0])
def test_polyline_vertices_are_minimal(grid2x2, example1_alpha, lam):
    _, h = _polyline(lam)
    assert minimality_ranges(h, example1_alpha, grid2x2).is_minimal()


def test_majorant_that_is_not_minimal(grid2x2, example1_alpha):
    candidate = np.array([[1.0, 2.0], [2.0, 7.0]])
    assert majorizes(candidate, example1_alpha, grid2x2).verdict
    ranges = minimality_ranges(candidate, example1_alpha, grid2x2)
    assert not ranges.is_minimal()
    assert not ranges.degenerate().all()


def test_monotone_alpha_is_its_own_minimal_majorant(grid2x2):
    alpha = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert minimality_ranges(alpha, alpha, grid2x2).is_minimal()


def test_minimality_preconditions(grid2x2, example1_alpha):
    with pytest.raises(NotMonotone):
        minimality_ranges(example1_alpha, example1_alpha, grid2x2)
    with pytest.raises(NotMajorized):
        minimality_ranges(np.array([[3.0, 3.0], [3.0, 3.0]]), example1_alpha, grid2x2)
