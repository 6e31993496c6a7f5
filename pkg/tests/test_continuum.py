import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from workflow.core.continuum import (
    KINKS,
    ContinuousProblem,
    ContinuumOptions,
    SampleSpec,
    cell_center_mask,
    convergence_study,
    divergence_residual,
    dyadic_discretize,
    example3_alpha_bar,
    example3_lambda,
    example4_eta,
    example4_q,
    make_function,
    polynomial_density,
    refine_average,
    sup_error_on,
)
from workflow.core.errors import InvalidModel, LevelTooLarge
from workflow.core.grid import expectation
from workflow.core.mech import GoodsSpec, goods_mechanism

EXAMPLE4_LEVEL = 5


def _problem(name, level, dimension=2, agent=None):
    spec = {"name": name} if agent is None else {"name": name, "agent": agent}
    return ContinuousProblem(dimension=dimension, alpha_fn=make_function(spec, dimension), level=level, name=name)


def _example4_spec(level):
    grid, values = dyadic_discretize(_problem("example4_v", level))
    revenues = [dyadic_discretize(_problem("example4_mr_agent", level, agent=i))[1] for i in range(2)]
    return GoodsSpec(values=[values, values.copy()], grid=grid, marginal_revenues=revenues)


@pytest.fixture(scope="module")
def example4_with_access():
    spec = _example4_spec(EXAMPLE4_LEVEL)
    return spec, goods_mechanism(spec, with_access=True)


def test_level_one_constant_function():
    problem = ContinuousProblem(dimension=2, alpha_fn=lambda x1, x2: np.full(np.shape(x1), 3.0), level=1)
    grid, values = dyadic_discretize(problem)
    assert grid.shape == (2, 2)
    assert np.allclose(grid.axes[0].points, [0.25, 0.75])
    assert np.allclose(grid.f, 0.25)
    assert np.allclose(values, 3.0)


def test_linear_function_cell_means():
    grid, values = dyadic_discretize(_problem("linear", 1))
    assert np.allclose(values, [[0.5, 1.0], [1.0, 1.5]], atol=1e-12)


def test_polynomial_function_and_density():
    fn = make_function({"polynomial": [{"coef": 2.0, "powers": [1, 0]}, {"coef": -1.0, "powers": [0, 2]}]}, 2)
    assert fn(np.array(0.5), np.array(2.0)) == pytest.approx(-3.0)
    problem = ContinuousProblem(dimension=1, alpha_fn=lambda x: x, level=2,
                                densities=[polynomial_density([0.0, 2.0])])
    grid, values = dyadic_discretize(problem)
    assert grid.axes[0].probs == pytest.approx([1 / 16, 3 / 16, 5 / 16, 7 / 16])
    assert expectation(values, grid) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_function_spec_errors():
    with pytest.raises(InvalidModel):
        make_function({"name": "nope"}, 2)
    with pytest.raises(InvalidModel):
        make_function({"polynomial": [{"coef": 1.0, "powers": [1]}]}, 2)


def test_level_limits():
    with pytest.raises(LevelTooLarge):
        dyadic_discretize(_problem("linear", 0))
    with pytest.raises(LevelTooLarge):
        dyadic_discretize(_problem("linear", 6), ContinuumOptions(max_cells=1024))


def test_refinement_is_a_martingale():
    coarse_grid, coarse = dyadic_discretize(_problem("example3", 2))
    fine_grid, fine = dyadic_discretize(_problem("example3", 3))
    assert np.allclose(refine_average(fine, fine_grid, coarse_grid), coarse, atol=1e-12)


def test_refine_average_shape_check():
    coarse_grid, _ = dyadic_discretize(_problem("linear", 1))
    fine_grid, fine = dyadic_discretize(_problem("linear", 3))
    with pytest.raises(InvalidModel):
        refine_average(fine, fine_grid, coarse_grid)


def test_example4_marginal_revenue_mean():
    grid, total = dyadic_discretize(_problem("example4_mr", EXAMPLE4_LEVEL))
    assert expectation(total, grid) == pytest.approx(-2.0 / 3.0, abs=0.02)

    per_agent = [dyadic_discretize(_problem("example4_mr_agent", 2, agent=i))[1] for i in range(2)]
    _, combined = dyadic_discretize(_problem("example4_mr", 2))
    assert np.allclose(per_agent[0] + per_agent[1], combined, atol=1e-10)


def test_example3_convergence_and_closed_form():
    rows, solutions = convergence_study(_problem("example3", 3), [3, 4, 5])
    assert [row["level"] for row in rows] == [3, 4]
    assert rows[1]["sup_distance"] <= rows[0]["sup_distance"] * 1.1

    finest = solutions[-1]
    grid = finest.grid
    lower = cell_center_mask(grid, lambda x1, x2: x1 + x2 <= 0.9)
    upper = cell_center_mask(grid, lambda x1, x2: x1 + x2 >= 1.1)
    ironed = finest.result.alpha_bar
    assert sup_error_on(ironed, lambda x1, x2: np.full(np.shape(x1), 0.5), grid, lower) <= 0.05
    assert sup_error_on(ironed, example3_alpha_bar, grid, upper) <= 0.05


def test_convergence_study_needs_ascending_levels():
    with pytest.raises(InvalidModel):
        convergence_study(_problem("example3", 3), [3])
    with pytest.raises(InvalidModel):
        convergence_study(_problem("example3", 3), [4, 3])


def test_example3_transfer_field_satisfies_divergence_identity():
    problem = _problem("example3", 1)
    report = divergence_residual(problem, example3_alpha_bar, [example3_lambda(0), example3_lambda(1)],
                                 SampleSpec(kink=KINKS["example3"]))
    assert report.passed, report.failed_checks()


def test_perturbed_transfer_field_fails():
    problem = _problem("example3", 1)

    def skewed(*x):
        s = x[0] + x[1]
        return np.where(s <= 1.0, 0.3 * x[0] * (1.0 - s) ** 2, 0.0)

    report = divergence_residual(problem, example3_alpha_bar, [skewed, example3_lambda(1)],
                                 SampleSpec(kink=KINKS["example3"]))
    assert "divergence_identity" in report.failed_checks()


def test_example4_without_access_produces_nothing():
    spec = _example4_spec(EXAMPLE4_LEVEL)
    outcome = goods_mechanism(spec, with_access=False)
    assert np.allclose(outcome.q, 0.0, atol=1e-9)


def test_example4_quality_with_access(example4_with_access):
    spec, outcome = example4_with_access
    grid = spec.grid
    x1, x2 = grid.mesh()
    low = np.minimum(x1, x2)
    interior = (x1 >= 0.1) & (x1 <= 0.9) & (x2 >= 0.1) & (x2 <= 0.9) & (np.abs(low - 0.5) >= 0.1)
    assert np.max(np.abs(outcome.q - example4_q(x1, x2))[interior]) <= 0.1


def test_example4_access_probabilities(example4_with_access):
    spec, outcome = example4_with_access
    x1, x2 = spec.grid.mesh()
    away = ((x1 >= 0.1) & (x1 <= 0.9) & (x2 >= 0.1) & (x2 <= 0.9)
            & (np.abs(x1 - x2) >= 0.1) & (np.abs(x1 - 0.5) >= 0.1) & (np.abs(x2 - 0.5) >= 0.1))
    for agent in range(2):
        expected = example4_eta(agent)(x1, x2)
        assert np.max(np.abs(outcome.eta[agent] - expected)[away]) <= 0.1
