import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from workflow.core.errors import BadProbs, GridMismatch, InvalidModel
from workflow.core.grid import make_grid, uniform_grid
from workflow.core.majorize import majorizes
from workflow.core.sosd import (
    JointDistribution,
    birkhoff_decomposition,
    cobb_douglas,
    dominates,
    ds_factorization,
    is_ortho_concave,
    survival_complement,
    utility_battery,
)

THIRD = 1.0 / 3.0


@pytest.fixture
def unit_grid():
    return make_grid([([0.0, 0.5, 1.0], [THIRD] * 3)])


@pytest.fixture
def spread_pair(unit_grid):
    safe = JointDistribution(grid=unit_grid, pmf=np.array([0.25, 0.5, 0.25]))
    risky = JointDistribution(grid=unit_grid, pmf=np.array([0.5, 0.0, 0.5]))
    return safe, risky


def test_survival_complement_examples(grid2x2):
    uniform = JointDistribution(grid=grid2x2, pmf=np.full((2, 2), 0.25))
    assert np.allclose(survival_complement(uniform), [[0.75, 1.0], [1.0, 1.0]])
    top = JointDistribution(grid=grid2x2, pmf=np.array([[0.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(survival_complement(top), [[0.0, 1.0], [1.0, 1.0]])
    line = JointDistribution(grid=uniform_grid((2,)), pmf=np.array([0.5, 0.5]))
    assert np.allclose(survival_complement(line), [0.5, 1.0])


def test_survival_complement_is_cdf_in_one_dimension(spread_pair):
    safe, risky = spread_pair
    assert np.allclose(survival_complement(safe), [0.25, 0.75, 1.0])
    assert np.allclose(survival_complement(risky), [0.5, 0.5, 1.0])


def test_second_order_dominance_of_mean_preserving_spread(spread_pair):
    safe, risky = spread_pair
    assert dominates(safe, risky, "second").verdict
    reverse = dominates(risky, safe, "second")
    assert not reverse.verdict
    assert reverse.witness is not None


def test_first_order_dominance(spread_pair, unit_grid):
    safe, risky = spread_pair
    assert not dominates(safe, risky, "first").verdict
    assert not dominates(risky, safe, "first").verdict
    top = JointDistribution(grid=unit_grid, pmf=np.array([0.0, 0.0, 1.0]))
    assert dominates(top, safe, "first").verdict


def test_dominance_errors(spread_pair, grid2x2):
    safe, risky = spread_pair
    with pytest.raises(InvalidModel):
        dominates(safe, risky, "third")
    other = JointDistribution(grid=grid2x2, pmf=np.full((2, 2), 0.25))
    with pytest.raises(GridMismatch):
        dominates(safe, other)


def test_distribution_validation(unit_grid):
    with pytest.raises(BadProbs):
        JointDistribution(grid=unit_grid, pmf=np.array([0.5, 0.5, 0.5]))
    with pytest.raises(BadProbs):
        JointDistribution(grid=unit_grid, pmf=np.array([1.5, -0.5, 0.0]))


def test_product_distribution(grid2x2):
    dist = JointDistribution.product(grid2x2, [np.array([0.2, 0.8]), np.array([0.5, 0.5])])
    assert np.allclose(dist.pmf, [[0.1, 0.1], [0.4, 0.4]])
    assert dist.expect(np.ones((2, 2))) == pytest.approx(1.0)


def test_utility_battery_consistent_with_dominance(spread_pair):
    safe, risky = spread_pair
    report = utility_battery(safe, risky, count=50, seed=7)
    assert report.passed
    assert report.extras["dominates"] is True
    assert report.extras["judged"] == 50
    assert report.extras["negative_gaps"] == 0
    assert report.extras["min_gap"] >= -1e-12


def test_utility_battery_gap_formula(spread_pair):
    safe, risky = spread_pair
    report = utility_battery(safe, risky, count=5, seed=3)
    betas = np.random.default_rng(3).uniform(0.0, 1.0, size=(5, 1))[:, 0]
    assert report.extras["gaps"] == pytest.approx(0.5 ** (betas + 1.0) - 0.25)


def test_utility_battery_without_dominance(spread_pair):
    safe, risky = spread_pair
    report = utility_battery(risky, safe, count=20, seed=7)
    assert report.passed
    assert report.extras["dominates"] is False
    assert report.extras["negative_gaps"] >= 1


def test_utility_battery_needs_unit_points(grid3x3):
    dist = JointDistribution(grid=grid3x3, pmf=np.full((3, 3), 1.0 / 9.0))
    with pytest.raises(InvalidModel):
        utility_battery(dist, dist)


def test_ortho_concavity():
    grid = make_grid([([0.0, 0.5, 1.0], [THIRD] * 3)] * 2)
    assert is_ortho_concave(cobb_douglas(grid, np.array([0.5, 0.5])), grid)
    x1, x2 = grid.mesh()
    assert not is_ortho_concave(x1 ** 2 * x2 ** 2, grid)


def test_doubly_stochastic_factorization():
    f_vals = np.array([1.0, 1.0, 5.0, 5.0])
    g_vals = np.array([0.0, 2.0, 4.0, 6.0])
    factorization = ds_factorization(f_vals, g_vals)
    assert factorization.feasible
    matrix = factorization.matrix
    assert np.allclose(matrix.sum(axis=0), 1.0, atol=1e-8)
    assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-8)
    assert np.allclose(matrix @ g_vals, f_vals, atol=1e-8)


def test_infeasible_factorization_has_prefix_witness():
    factorization = ds_factorization(np.array([0.0, 2.0, 4.0, 6.0]), np.array([1.0, 1.0, 5.0, 5.0]))
    assert not factorization.feasible
    assert factorization.witness == (0,)


def test_factorization_shape_check():
    with pytest.raises(InvalidModel):
        ds_factorization(np.zeros(3), np.zeros(4))


def test_birkhoff_decomposition_rebuilds_matrix():
    f_vals = np.array([1.0, 1.0, 5.0, 5.0])
    g_vals = np.array([0.0, 2.0, 4.0, 6.0])
    matrix = ds_factorization(f_vals, g_vals).matrix
    terms = birkhoff_decomposition(matrix)
    assert sum(weight for weight, _ in terms) == pytest.approx(1.0, abs=1e-7)
    rebuilt = np.zeros_like(matrix)
    for weight, cols in terms:
        rebuilt[np.arange(4), cols] += weight
    assert np.allclose(rebuilt, matrix, atol=1e-7)


def test_birkhoff_decomposition_of_uniform_matrix():
    terms = birkhoff_decomposition(np.full((2, 2), 0.5))
    assert len(terms) == 2
    assert [w for w, _ in terms] == pytest.approx([0.5, 0.5])


def test_birkhoff_rejects_non_stochastic():
    with pytest.raises(InvalidModel):
        birkhoff_decomposition(np.array([[1.0, 0.5], [0.0, 0.5]]))


def _random_pair(rng):
    """F at random and G from F by pushing mass upward along the bottom faces"""
    shape = [(2, 2), (2, 3), (3, 3), (2, 2, 2)][rng.integers(4)]
    axes = []
    for n in shape:
        probs = rng.uniform(0.5, 1.5, size=n)
        axes.append((np.arange(n, dtype=float), probs / probs.sum()))
    grid = make_grid(axes)
    f_pmf = rng.dirichlet(np.ones(grid.size)).reshape(grid.shape)
    g_pmf = f_pmf.copy()
    for _ in range(3):
        face = rng.integers(grid.n_agents)
        source = [int(rng.integers(n)) for n in grid.shape]
        source[face] = 0
        target = [int(rng.integers(s, n)) for s, n in zip(source, grid.shape)]
        target[face] = 0
        moved = g_pmf[tuple(source)] * rng.uniform(0.2, 1.0)
        g_pmf[tuple(source)] -= moved
        g_pmf[tuple(target)] += moved
    return JointDistribution(grid=grid, pmf=g_pmf), JointDistribution(grid=grid, pmf=f_pmf)


@pytest.mark.parametrize("seed", range(100))
def test_first_order_implies_second_order_at_equal_mean(seed):
    g_dist, f_dist = _random_pair(np.random.default_rng(seed))
    grid = g_dist.grid
    assert np.sum(grid.f * survival_complement(g_dist)) == pytest.approx(np.sum(grid.f * survival_complement(f_dist)))
    assert dominates(g_dist, f_dist, "first").verdict
    assert dominates(g_dist, f_dist, "second").verdict


@pytest.mark.parametrize("seed", range(100))
def test_second_order_agrees_with_flow_majorization(seed):
    rng = np.random.default_rng(500 + seed)
    g_dist, f_dist = _random_pair(rng)
    if seed % 2:
        f_dist = JointDistribution(grid=f_dist.grid, pmf=rng.dirichlet(np.ones(f_dist.grid.size)).reshape(f_dist.grid.shape))
    flow = majorizes(survival_complement(g_dist), survival_complement(f_dist), g_dist.grid, method="flow")
    assert dominates(g_dist, f_dist, "second").verdict == flow.verdict
    assert dominates(f_dist, g_dist, "second").verdict == majorizes(
        survival_complement(f_dist), survival_complement(g_dist), g_dist.grid, method="flow").verdict
