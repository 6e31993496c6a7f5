"""
Continuous types on [0,1]^N through dyadic discretization.

At level n every axis is cut into 2^n cells; the grid point is the cell center,
its probability the cell mass, and the grid function the cell's conditional mean,
computed with tensor Gauss-Legendre quadrature.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, Field

from workflow.core.errors import InvalidModel, LevelTooLarge, QuadratureFailure
from workflow.core.grid import TypeGrid, check_shape, make_grid
from workflow.core.iron import IroningOptions, IroningResult, iron
from workflow.core.reports import VerificationReport

logger = logging.getLogger(__name__)

GridFn = Callable[..., np.ndarray]


class ContinuumOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: int = Field(default=4, ge=1, le=32, description="Gauss-Legendre nodes per axis per cell")
    max_cells: int = Field(default=2 ** 20, ge=1)
    fd_step: float = Field(default=1e-5, gt=0)
    workers: int = Field(default=4, ge=1)
    decay_slack: float = Field(default=0.10, ge=0)


def _total(coords: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.add, coords)


def _example3(*x):
    s = _total(x)
    return 1.0 - 1.5 * s + s ** 2


def _example4_v(*x):
    s = _total(x)
    return 3.0 - 4.0 * s - 4.0 * s ** 2


def _example4_mr(*x):
    s = _total(x)
    return 14.0 + 4.0 * s - 16.0 * s ** 2


def _example4_mr_agent(agent: int) -> GridFn:
    def fn(*x):
        s = _total(x)
        return _example4_v(*x) - (1.0 - x[agent]) * (-4.0 - 8.0 * s)
    return fn


def _linear(*x):
    return _total(x)


def _sigmoid(*x):
    s = _total(x)
    return 1.0 / (1.0 + np.exp(40.0 * (s - len(x) / 2.0)))


FUNCTIONS: Dict[str, Callable[..., GridFn]] = {
    "example3": lambda agent=None: _example3,
    "example4_v": lambda agent=None: _example4_v,
    "example4_mr": lambda agent=None: _example4_mr,
    "example4_mr_agent": lambda agent=0: _example4_mr_agent(agent),
    "linear": lambda agent=None: _linear,
    "sigmoid": lambda agent=None: _sigmoid,
}

# signed distance-like functions vanishing on known non-smooth loci
KINKS: Dict[str, GridFn] = {
    "example3": lambda *x: _total(x) - 1.0,
}


def polynomial(terms: Sequence[Dict[str, Any]], dimension: int) -> GridFn:
    """sum of coef * prod_i x_i^powers[i]"""
    parsed = []
    for k, term in enumerate(terms):
        powers = list(term.get("powers", []))
        if len(powers) != dimension:
            raise InvalidModel(f"Polynomial term {k} has {len(powers)} powers for {dimension} axes",
                               path=f"/function/polynomial/{k}/powers")
        parsed.append((float(term["coef"]), powers))

    def fn(*x):
        out = np.zeros(np.broadcast(*x).shape)
        for coef, powers in parsed:
            out = out + coef * reduce(np.multiply, (xi ** p for xi, p in zip(x, powers)))
        return out
    return fn


def make_function(spec: Dict[str, Any], dimension: int) -> GridFn:
    """Resolve {"name": ..., "agent": ...} or {"polynomial": [...]} to a callable on coordinates"""
    if "polynomial" in spec:
        return polynomial(spec["polynomial"], dimension)
    name = spec.get("name")
    if name not in FUNCTIONS:
        raise InvalidModel(f"Unknown function: {name}", path="/function/name")
    if "agent" in spec and spec["agent"] is not None:
        return FUNCTIONS[name](agent=int(spec["agent"]))
    return FUNCTIONS[name]()


def uniform_density(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x)


def polynomial_density(coefs: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    """Marginal density proportional to sum_k coefs[k] x^k, normalized on the grid"""
    coefs = np.asarray(coefs, dtype=float)
    return lambda x: np.polynomial.polynomial.polyval(x, coefs)


@dataclass(frozen=True, eq=False)
class ContinuousProblem:
    dimension: int
    alpha_fn: GridFn = field(repr=False)
    level: int = 1
    densities: Optional[Sequence[Callable[[np.ndarray], np.ndarray]]] = field(default=None, repr=False)
    name: str = "custom"

    def at_level(self, level: int) -> "ContinuousProblem":
        return ContinuousProblem(self.dimension, self.alpha_fn, level, self.densities, self.name)

    def density(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        return self.densities[i] if self.densities else uniform_density


def _axis_quadrature(problem: ContinuousProblem, i: int, nodes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cell centers, cell masses, flat quadrature nodes and per-cell node weights for axis i"""
    cells = 2 ** problem.level
    width = 1.0 / cells
    t, w = leggauss(nodes)
    left = np.arange(cells) * width
    coords = left[:, None] + width * (t[None, :] + 1.0) / 2.0
    density = problem.density(i)(coords)
    if not np.all(np.isfinite(density)) or np.any(density <= 0):
        raise QuadratureFailure(f"Density of axis {i} is not finite and positive on [0,1]")
    weights = (w[None, :] * width / 2.0) * density
    masses = weights.sum(axis=1)
    return left + width / 2.0, masses, coords.ravel(), weights


def dyadic_discretize(problem: ContinuousProblem,
                      options: Optional[ContinuumOptions] = None) -> Tuple[TypeGrid, np.ndarray]:
    """Grid of cell centers with cell-mass probabilities, and alpha's conditional mean per cell"""
    options = options or ContinuumOptions()
    if problem.level < 1:
        raise LevelTooLarge(f"Dyadic level must be at least 1, got {problem.level}", path="/options/n")
    cells = (2 ** problem.level) ** problem.dimension
    if cells > options.max_cells:
        raise LevelTooLarge(
            f"Level {problem.level} gives {cells} cells in {problem.dimension} dimensions, cap is {options.max_cells}",
            path="/options/n",
        )

    axes = [_axis_quadrature(problem, i, options.nodes) for i in range(problem.dimension)]
    mesh = np.meshgrid(*[a[2] for a in axes], indexing="ij")
    with np.errstate(all="ignore"):
        values = np.asarray(problem.alpha_fn(*mesh), dtype=float)
    values = np.broadcast_to(values, mesh[0].shape).copy() if values.shape != mesh[0].shape else values
    if not np.all(np.isfinite(values)):
        raise QuadratureFailure(f"{problem.name} is not finite at every quadrature node")

    n_cells = 2 ** problem.level
    for i, (_, masses, _, weights) in enumerate(axes):
        moved = np.moveaxis(values, i, -1)
        moved = moved.reshape(moved.shape[:-1] + (n_cells, options.nodes))
        moved = (moved * weights).sum(axis=-1) / masses
        values = np.moveaxis(moved, -1, i)

    grid = make_grid([(centers, masses / masses.sum()) for centers, masses, _, _ in axes])
    logger.debug(f"Discretized {problem.name} at level {problem.level}: {grid.shape}")
    return grid, values


def refine_average(values_fine: np.ndarray, grid_fine: TypeGrid, grid_coarse: TypeGrid) -> np.ndarray:
    """Probability-weighted average of a level n+1 function over each level n cell"""
    out = np.asarray(values_fine, dtype=float)
    for i, (fine_axis, coarse_axis) in enumerate(zip(grid_fine.axes, grid_coarse.axes)):
        if fine_axis.size != 2 * coarse_axis.size:
            raise InvalidModel(f"Axis {i}: {fine_axis.size} fine cells do not refine {coarse_axis.size}")
        pair_probs = fine_axis.probs.reshape(-1, 2)
        moved = np.moveaxis(out, i, -1)
        moved = moved.reshape(moved.shape[:-1] + (coarse_axis.size, 2))
        moved = (moved * pair_probs).sum(axis=-1) / pair_probs.sum(axis=1)
        out = np.moveaxis(moved, -1, i)
    return out


@dataclass
class LevelSolution:
    level: int
    grid: TypeGrid
    alpha: np.ndarray
    result: IroningResult


def solve_level(problem: ContinuousProblem, options: Optional[ContinuumOptions] = None,
                iron_options: Optional[IroningOptions] = None, phi: str = "quadratic") -> LevelSolution:
    grid, alpha = dyadic_discretize(problem, options)
    result = iron(alpha, grid, phi=phi, options=iron_options)
    return LevelSolution(level=problem.level, grid=grid, alpha=alpha, result=result)


def convergence_study(problem: ContinuousProblem, levels: Sequence[int],
                      options: Optional[ContinuumOptions] = None,
                      iron_options: Optional[IroningOptions] = None) -> Tuple[List[Dict[str, float]], List[LevelSolution]]:
    """
    Irons every level (concurrently) and compares consecutive levels on the
    coarser cells. Returns the table rows and the per-level solutions.
    """
    options = options or ContinuumOptions()
    levels = list(levels)
    if levels != sorted(set(levels)) or len(levels) < 2:
        raise InvalidModel("Convergence study needs at least two ascending levels", path="/options/levels")

    with ThreadPoolExecutor(max_workers=options.workers) as executor:
        futures = [executor.submit(solve_level, problem.at_level(n), options, iron_options) for n in levels]
        solutions = [future.result() for future in futures]

    rows = []
    for coarse, fine in zip(solutions[:-1], solutions[1:]):
        if fine.level != coarse.level + 1:
            raise InvalidModel(f"Levels {coarse.level} and {fine.level} are not consecutive", path="/options/levels")
        averaged = refine_average(fine.result.alpha_bar, fine.grid, coarse.grid)
        gap = np.abs(coarse.result.alpha_bar - averaged)
        rows.append({
            "level": coarse.level,
            "sup_distance": float(gap.max()),
            "l1_distance": float(np.sum(coarse.grid.f * gap)),
        })

    for previous, current in zip(rows[:-1], rows[1:]):
        if current["sup_distance"] > (1.0 + options.decay_slack) * previous["sup_distance"]:
            logger.warning(f"Sup-distance grew from level {previous['level']} to {current['level']}: "
                           f"{previous['sup_distance']:.3e} -> {current['sup_distance']:.3e}")
    return rows, solutions


def example3_alpha_bar(*x):
    s = _total(x)
    return np.where(s <= 1.0, 0.5, _example3(*x))


def example3_lambda(agent: int) -> GridFn:
    """Transfer field of the continuous Example 3 construction on the triangle x1 + x2 <= 1"""
    def fn(*x):
        s = _total(x)
        return np.where(s <= 1.0, 0.25 * x[agent] * (1.0 - s) ** 2, 0.0)
    return fn


def example4_quality_rule(t: np.ndarray) -> np.ndarray:
    """Symmetric quality as a function of the lower type: (3 + 2t)(1 - 2t)/(1 - t), floored at 0"""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (3.0 + 2.0 * t) * (1.0 - 2.0 * t) / (1.0 - t)
    return np.where(t < 0.5, np.maximum(q, 0.0), 0.0)


def example4_q(x1, x2):
    return example4_quality_rule(np.minimum(x1, x2))


def example4_eta(agent: int) -> GridFn:
    """Access probability of one agent; the other agent's rule is its mirror image"""
    def fn(x1, x2):
        own, other = (x1, x2) if agent == 0 else (x2, x1)
        q_own = example4_quality_rule(own)
        q_other = example4_quality_rule(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(q_own > 0, q_other / q_own, 0.0)
        return np.where(other > 0.5, 0.0, np.where(own >= other, 1.0, ratio))
    return fn


@dataclass
class SampleSpec:
    points_per_axis: int = 41
    margin: float = 0.01
    kink: Optional[GridFn] = None
    band: float = 0.05


def divergence_residual(problem: ContinuousProblem, alpha_bar_fn: GridFn, lambda_fns: Sequence[GridFn],
                        sample: Optional[SampleSpec] = None,
                        options: Optional[ContinuumOptions] = None) -> VerificationReport:
    """
    max |sum_i d lambda_i / d x_i / f - (alpha - alpha_bar)| on a lattice, with
    central differences, plus sign and boundary-face checks on lambda.
    """
    sample = sample or SampleSpec()
    options = options or ContinuumOptions()
    report = VerificationReport(subject="divergence")
    h = options.fd_step
    n = problem.dimension

    axis = np.linspace(sample.margin, 1.0 - sample.margin, sample.points_per_axis)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    keep = np.ones(mesh[0].shape, dtype=bool)
    if sample.kink is not None:
        keep &= np.abs(sample.kink(*mesh)) > sample.band

    try:
        div = np.zeros(mesh[0].shape)
        for i, lam in enumerate(lambda_fns):
            up = [m + h if j == i else m for j, m in enumerate(mesh)]
            down = [m - h if j == i else m for j, m in enumerate(mesh)]
            div += (lam(*up) - lam(*down)) / (2.0 * h)
        density = reduce(np.multiply, (problem.density(i)(mesh[i]) for i in range(n)))
        target = problem.alpha_fn(*mesh) - alpha_bar_fn(*mesh)
        residual = np.abs(div / density - target)[keep]
        worst = float(residual.max()) if residual.size else 0.0
        report.add("divergence_identity", worst <= 1e-6, value=worst, tolerance=1e-6)
        report.extras["samples"] = int(keep.sum())
    except Exception as e:
        report.fail("divergence_identity", e)

    try:
        lowest = min(float(np.min(lam(*mesh))) for lam in lambda_fns)
        report.add("non_negative", lowest >= -1e-12, value=lowest, tolerance=1e-12)
    except Exception as e:
        report.fail("non_negative", e)

    try:
        worst_face = 0.0
        for i, lam in enumerate(lambda_fns):
            for face in (0.0, 1.0):
                coords = [np.full_like(m, face) if j == i else m for j, m in enumerate(mesh)]
                worst_face = max(worst_face, float(np.max(np.abs(lam(*coords)))))
        report.add("boundary_faces", worst_face <= 1e-12, value=worst_face, tolerance=1e-12)
    except Exception as e:
        report.fail("boundary_faces", e)
    return report


def cell_center_mask(grid: TypeGrid, condition: Callable[..., np.ndarray]) -> np.ndarray:
    """Evaluate a predicate on the cell centers"""
    return np.asarray(condition(*grid.mesh()), dtype=bool)


def sup_error_on(values: np.ndarray, target_fn: GridFn, grid: TypeGrid, mask: np.ndarray) -> float:
    values = check_shape(values, grid, "values")
    target = target_fn(*grid.mesh())
    return float(np.max(np.abs(values - target)[mask])) if mask.any() else 0.0
