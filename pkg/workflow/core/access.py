"""
Ironing with discriminatory access rights.

Each agent's alpha_i is ironed along its own coordinate only,
    g_i = alpha_i - lower-delta_i lambda_i / f,
jointly minimizing E[(sum_i max(0, g_i))^2]. The transfer pattern then yields an
ultramodular partition, the optimal quality q* and the access probabilities eta*.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from workflow.core.errors import (
    ClosureDiverged,
    InfeasibleEta,
    IronkitError,
    MeanMismatch,
    NonFiniteInput,
    NotConverged,
    ShapeMismatch,
)
from workflow.core.grid import TypeGrid, check_shape, line_view, lower_closure, partial_delta, upper_closure
from workflow.core.iron import (
    CostModel,
    IroningOptions,
    IroningResult,
    Partition,
    grid_edges,
    iron,
    optimal_q,
    partition_from_graph,
    principal_value,
)
from workflow.core.majorize import majorizes_in_coordinate
from workflow.core.reports import VerificationReport
from workflow.core.transfers import TransferField

logger = logging.getLogger(__name__)


class AccessOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(default=1e-9, gt=0, description="Relative duality gap accepted at convergence")
    max_sweeps: int = Field(default=100_000, ge=1)
    update_tol: float = Field(default=1e-11, gt=0, description="Largest relative move of alpha_tilde in the last sweep")
    lambda_tol: float = Field(default=1e-9, gt=0)
    zero_tol: float = Field(default=1e-8, gt=0, description="Relative band treated as alpha_tilde = 0")
    check_tol: float = Field(default=1e-6, gt=0)

    def zero_band(self) -> float:
        """Relative zero band, never tighter than what the solver resolves"""
        return max(self.zero_tol, 100.0 * self.update_tol)


@dataclass(frozen=True, eq=False)
class AccessResult:
    alphas: List[np.ndarray] = field(repr=False)
    alphas_tilde: List[np.ndarray]
    transfers: TransferField = field(repr=False)
    q_star: np.ndarray
    eta: List[np.ndarray]
    partition: Partition
    objective: float
    sweeps: int = 0
    eta_intervals: List[Dict[str, Any]] = field(default_factory=list)
    negative_entries: int = 0

    @property
    def alpha_tilde_sum(self) -> np.ndarray:
        return sum(self.alphas_tilde)


def _check_alphas(alphas: Sequence[np.ndarray], grid: TypeGrid) -> List[np.ndarray]:
    if len(alphas) != grid.n_agents:
        raise ShapeMismatch(f"Expected {grid.n_agents} alpha functions, got {len(alphas)}", path="/alphas")
    checked = [check_shape(a, grid, f"alphas/{i}") for i, a in enumerate(alphas)]
    for i, a in enumerate(checked):
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput(f"alphas[{i}] has non-finite values", path=f"/alphas/{i}")
    return checked


def _hinge_objective(gs: Sequence[np.ndarray], f: np.ndarray) -> float:
    total = sum(np.maximum(0.0, g) for g in gs)
    return float(np.sum(f * total ** 2))


def _block_price(o: np.ndarray, w: np.ndarray, mass: float) -> float:
    """Smallest price p >= 0 with sum_k w_k max(0, p/2 - o_k) = mass; zero when mass <= 0"""
    if mass <= 0.0:
        return 0.0
    order = np.argsort(o, kind="stable")
    o_sorted, w_sorted = o[order], w[order]
    level = (mass + np.cumsum(w_sorted * o_sorted)) / np.cumsum(w_sorted)
    upper = np.append(o_sorted[1:], np.inf)
    return 2.0 * float(level[int(np.argmax(level <= upper))])


def _solve_line(a: np.ndarray, w: np.ndarray, o: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact minimizer of sum_k w_k (o_k + max(0, g_k))^2 over the g that keep the
    mass of a on the line and only move it up. Adjacent blocks are pooled while
    their prices decrease; blocks priced at zero take the smallest transfers
    that bring every entry to or below zero. Returns (g, lambda, prices).
    """
    starts: List[int] = []
    masses: List[float] = []
    prices: List[float] = []
    for k in range(a.size):
        start, mass = k, float(w[k] * a[k])
        price = 2.0 * (o[k] + a[k]) if mass > 0.0 else 0.0
        while prices and prices[-1] > price:
            start = starts.pop()
            mass += masses.pop()
            prices.pop()
            price = _block_price(o[start:k + 1], w[start:k + 1], mass)
        starts.append(start)
        masses.append(mass)
        prices.append(price)

    g = np.empty_like(a)
    p = np.empty_like(a)
    for start, end, mass, price in zip(starts, starts[1:] + [a.size], masses, prices):
        block = slice(start, end)
        p[block] = price
        if price > 0.0:
            g[block] = np.maximum(0.0, price / 2.0 - o[block])
        else:
            running = np.minimum(0.0, np.minimum.accumulate(np.cumsum(w[block] * a[block])))
            kept = np.maximum(mass, running)
            g[block] = np.diff(kept, prepend=0.0) / w[block]

    lam = np.cumsum(w * (a - g))
    lam[-1] = 0.0
    return g, np.maximum(lam, 0.0), p


def _dual_value(alphas: Sequence[np.ndarray], prices: Sequence[np.ndarray], f: np.ndarray) -> float:
    """Lower bound on the hinge objective from non-negative prices nondecreasing along each agent's axis"""
    top = np.maximum.reduce(list(prices))
    return float(np.sum(f * (sum(p * a for p, a in zip(prices, alphas)) - top ** 2 / 4.0)))


def iron_access(alphas: Sequence[np.ndarray], grid: TypeGrid,
                options: Optional[AccessOptions] = None) -> Tuple[List[np.ndarray], TransferField, float, int]:
    """
    Block descent over agents: each sweep re-solves every line of one agent exactly
    with the other agents held fixed. Stops once a sweep moves nothing and the
    line prices close the duality gap. Returns (alphas_tilde, lambda, objective, sweeps).
    """
    options = options or AccessOptions()
    alphas = _check_alphas(alphas, grid)
    f = grid.f
    gs = [a.copy() for a in alphas]
    lambdas = [np.zeros(grid.shape) for _ in alphas]
    prices = [np.zeros(grid.shape) for _ in alphas]
    scale = 1.0 + max(float(np.max(np.abs(a))) for a in alphas)

    objective, gap, max_update = _hinge_objective(gs, f), float("inf"), float("inf")
    for sweep in range(1, options.max_sweeps + 1):
        max_update = 0.0
        for i, alpha in enumerate(alphas):
            n = grid.shape[i]
            others = np.zeros(grid.shape) + sum(np.maximum(0.0, g) for j, g in enumerate(gs) if j != i)
            lines = zip(line_view(alpha, i).reshape(-1, n), line_view(f, i).reshape(-1, n),
                        line_view(others, i).reshape(-1, n))
            solved = [_solve_line(a, w, o) for a, w, o in lines]
            shape = line_view(alpha, i).shape
            g, lam, price = (np.moveaxis(np.stack(part).reshape(shape), -1, i) for part in zip(*solved))
            max_update = max(max_update, float(np.max(np.abs(g - gs[i]))))
            gs[i], lambdas[i], prices[i] = g, lam, price

        objective = _hinge_objective(gs, f)
        gap = objective - _dual_value(alphas, prices, f)
        logger.debug(f"Access sweep {sweep}: objective={objective:.12g}, gap={gap:.3e}, update={max_update:.3e}")
        if max_update <= options.update_tol * scale and gap <= options.tol * (1.0 + objective):
            break
    else:
        raise NotConverged(
            f"Access ironing did not converge in {options.max_sweeps} sweeps",
            details={"sweeps": options.max_sweeps, "duality_gap": gap, "last_update": max_update},
        )

    alphas_tilde = [a - partial_delta(lam, i, "lower") / f for i, (a, lam) in enumerate(zip(alphas, lambdas))]
    logger.info(f"Access ironing converged after {sweep} sweeps, objective={objective:.10g}, duality gap={gap:.3e}")
    return alphas_tilde, TransferField.from_arrays(lambdas), _hinge_objective(alphas_tilde, f), sweep


def _close_cells(labels: np.ndarray, max_rounds: int) -> np.ndarray:
    """Merge cells with their order hulls until every cell is ultramodular"""
    for _ in range(max_rounds):
        changed = False
        graph = nx.Graph()
        graph.add_nodes_from(range(labels.size))
        flat = labels.ravel()
        for k in np.unique(flat):
            mask = labels == k
            hull = lower_closure(mask) & upper_closure(mask)
            members = np.flatnonzero(hull.ravel())
            graph.add_edges_from(zip(members[:-1].tolist(), members[1:].tolist()))
            if not np.array_equal(hull, mask):
                changed = True
        components = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])
        relabelled = np.empty(labels.size, dtype=int)
        for k, component in enumerate(components):
            relabelled[component] = k
        labels = relabelled.reshape(labels.shape)
        if not changed:
            return labels
    raise ClosureDiverged(f"Order-hull completion did not settle after {max_rounds} rounds")


def access_partition(transfers: TransferField, grid: TypeGrid, alphas: Sequence[np.ndarray],
                     alphas_tilde: Sequence[np.ndarray], tol: Optional[float] = None,
                     options: Optional[AccessOptions] = None) -> Partition:
    """
    Per-agent runs of positive transfers form intervals on each line; overlaying
    them gives connected cells, completed with knife-edge profiles until each
    cell is ultramodular.
    """
    options = options or AccessOptions()
    lam_threshold = (tol if tol is not None else options.lambda_tol) * (1.0 + transfers.sup_norm())

    graph = nx.Graph()
    graph.add_nodes_from(range(grid.size))
    for i in range(grid.n_agents):
        lower, upper = grid_edges(grid, i)
        if lower.size == 0:
            continue
        linked = transfers[i].ravel()[lower] > lam_threshold
        graph.add_edges_from(zip(lower[linked].tolist(), upper[linked].tolist()))

    base = partition_from_graph(graph, grid, sum(alphas), sum(alphas_tilde))
    labels = _close_cells(base.labels, max_rounds=grid.size + 1)

    closed = nx.Graph()
    closed.add_nodes_from(range(grid.size))
    flat = labels.ravel()
    for k in np.unique(flat):
        members = np.flatnonzero(flat == k)
        closed.add_edges_from(zip(members[:-1].tolist(), members[1:].tolist()))
    partition = partition_from_graph(closed, grid, sum(alphas), sum(alphas_tilde))

    outflow = sum(partial_delta(lam, i, "lower") for i, lam in enumerate(transfers.fields))
    threshold = options.check_tol * (1.0 + max(float(np.max(np.abs(a))) for a in alphas))
    for k, mask in enumerate(partition.cell_masks()):
        cell_sum = float(outflow[mask].sum() / grid.f[mask].sum())
        if abs(cell_sum) > threshold or abs(partition.means[k] - partition.values[k]) > threshold:
            raise MeanMismatch(
                f"Access cell {k} does not preserve the mean of alpha",
                details={"cell": k, "divergence_mean": cell_sum,
                         "alpha_mean": float(partition.means[k]), "alpha_tilde_mean": float(partition.values[k])},
            )
    logger.debug(f"Access partition has {partition.n_cells} cells")
    return partition


def assign_access(alphas_tilde: Sequence[np.ndarray], q_star: np.ndarray, partition: Partition,
                  grid: TypeGrid, tol: float = 1e-8) -> Tuple[List[np.ndarray], List[Dict[str, Any]]]:
    """
    eta_i = 1 where alpha_tilde_i > 0 and 0 where it is negative. Zero entries take
    the level q* eta_i of a line-mate in the same cell; with no such mate, the
    smallest level the neighbours on the line allow. Returns (eta, intervals),
    intervals listing the feasible level range of every mate-less group.
    """
    q_star = check_shape(q_star, grid, "q_star")
    scale = 1.0 + max(float(np.max(np.abs(a))) for a in alphas_tilde)
    zero_band = tol * scale
    q_band = tol * (1.0 + float(np.max(np.abs(q_star))))
    q_active = np.where(q_star > q_band, q_star, 0.0)
    etas: List[np.ndarray] = []
    intervals: List[Dict[str, Any]] = []

    for i, alpha_t in enumerate(alphas_tilde):
        n = grid.shape[i]
        a_lines = line_view(alpha_t, i).reshape(-1, n)
        q_lines = line_view(q_active, i).reshape(-1, n)
        label_lines = line_view(partition.labels, i).reshape(-1, n)
        line_index = list(np.ndindex(*line_view(q_star, i).shape[:-1]))
        eta_lines = np.zeros_like(q_lines)

        for r in range(a_lines.shape[0]):
            a, q, labels = a_lines[r], q_lines[r], label_lines[r]
            level = np.full(n, np.nan)
            positive = a > zero_band
            level[positive] = q[positive]
            level[a < -zero_band] = 0.0
            zero = np.isnan(level)

            pending = []
            for cell in np.unique(labels[zero]):
                group = np.flatnonzero(zero & (labels == cell))
                mates = np.flatnonzero(~zero & (labels == cell))
                if mates.size:
                    below = mates[mates < group.min()]
                    value = level[below].max() if below.size else level[mates].min()
                    level[group] = value
                else:
                    pending.append(group)

            for group in sorted(pending, key=lambda g: g[0]):
                known = ~np.isnan(level)
                before = known & (np.arange(n) < group.min())
                after = known & (np.arange(n) > group.max())
                low = float(level[before].max()) if before.any() else 0.0
                high = float(level[after].min()) if after.any() else float("inf")
                cap = float(q[group].min())
                if low > min(high, cap) + q_band:
                    raise InfeasibleEta(
                        f"No feasible access level for agent {i} on line {line_index[r]}",
                        details={"lower": low, "upper": min(high, cap)},
                    )
                level[group] = min(low, cap)
                intervals.append({
                    "agent": i,
                    "line": [int(v) for v in line_index[r]],
                    "positions": group.tolist(),
                    "level": min(low, cap),
                    "interval": [min(low, cap), min(high, cap)],
                })

            excess = float(np.max(level - q))
            if excess > q_band:
                raise InfeasibleEta(
                    f"Access level above the quality for agent {i} on line {line_index[r]}",
                    details={"excess": excess, "tolerance": q_band},
                )
            level = np.minimum(level, q)
            with np.errstate(divide="ignore", invalid="ignore"):
                eta = np.where(q > 0, level / np.where(q > 0, q, 1.0), 0.0)
            eta_lines[r] = np.clip(eta, 0.0, 1.0)

        shape = line_view(q_star, i).shape
        etas.append(np.moveaxis(eta_lines.reshape(shape), -1, i))
    return etas, intervals


def access_objective(alphas: Sequence[np.ndarray], q: np.ndarray, eta: Sequence[np.ndarray],
                     cost: CostModel, grid: TypeGrid) -> float:
    """E[q sum_i eta_i alpha_i - C(q)]"""
    weighted = sum(e * a for e, a in zip(eta, alphas))
    return float(np.sum(grid.f * (q * weighted - cost.value(q))))


def solve_access(alphas: Sequence[np.ndarray], grid: TypeGrid, cost: Optional[CostModel] = None,
                 options: Optional[AccessOptions] = None) -> AccessResult:
    options = options or AccessOptions()
    cost = cost or CostModel()
    alphas = _check_alphas(alphas, grid)

    alphas_tilde, transfers, _, sweeps = iron_access(alphas, grid, options)
    partition = access_partition(transfers, grid, alphas, alphas_tilde, options=options)
    band = options.zero_band() * (1.0 + max(float(np.max(np.abs(a))) for a in alphas_tilde))
    q_star = cost.marginal_inverse(sum(np.where(a > band, a, 0.0) for a in alphas_tilde))
    eta, intervals = assign_access(alphas_tilde, q_star, partition, grid, tol=options.zero_band())

    negative = int(sum(np.count_nonzero(a < -band) for a in alphas_tilde))
    if negative:
        logger.info(f"{negative} negative alpha_tilde entries are screened out; their values are not unique")
    return AccessResult(
        alphas=alphas,
        alphas_tilde=alphas_tilde,
        transfers=transfers,
        q_star=q_star,
        eta=eta,
        partition=partition,
        objective=access_objective(alphas, q_star, eta, cost, grid),
        sweeps=sweeps,
        eta_intervals=intervals,
        negative_entries=negative,
    )


def no_access_baseline(alphas: Sequence[np.ndarray], grid: TypeGrid, cost: Optional[CostModel] = None,
                       options: Optional[IroningOptions] = None) -> Tuple[IroningResult, float]:
    """Irons sum_i alpha_i with eta = 1 and returns the result with its principal value"""
    cost = cost or CostModel()
    alphas = _check_alphas(alphas, grid)
    total = sum(alphas)
    result = iron(total, grid, options=options)
    q = optimal_q(result.alpha_bar, cost)
    return result, principal_value(total, q, cost, grid)


def verify_access(alphas: Sequence[np.ndarray], result: AccessResult, grid: TypeGrid,
                  cost: Optional[CostModel] = None, tol: float = 1e-7) -> VerificationReport:
    report = VerificationReport(subject="access")
    cost = cost or CostModel()
    alphas = [np.asarray(a, dtype=float) for a in alphas]
    threshold = tol * (1.0 + max(float(np.max(np.abs(a))) for a in alphas))

    try:
        ok = all(majorizes_in_coordinate(result.alphas_tilde[i], alphas[i], i, grid, tol)
                 for i in range(grid.n_agents))
        report.add("coordinate_majorization", ok, tolerance=tol)
    except IronkitError as e:
        report.fail("coordinate_majorization", e)

    try:
        worst = 0.0
        for i, eta in enumerate(result.eta):
            if grid.shape[i] > 1:
                worst = min(worst, float(np.diff(result.q_star * eta, axis=i).min()))
        report.add("access_monotone", worst >= -1e-9 * (1.0 + float(np.max(result.q_star))), value=worst)
    except IronkitError as e:
        report.fail("access_monotone", e)

    try:
        in_range = all(np.all((e >= 0.0) & (e <= 1.0)) for e in result.eta)
        report.add("eta_in_unit_interval", bool(in_range))
    except IronkitError as e:
        report.fail("eta_in_unit_interval", e)

    try:
        q = result.q_star
        ironed = sum(e * a for e, a in zip(result.eta, result.alphas_tilde))
        original = sum(e * a for e, a in zip(result.eta, alphas))
        gap = abs(float(np.sum(grid.f * q * (ironed - original))))
        report.add("no_gap", gap <= threshold * (1.0 + float(np.max(q))), value=gap, tolerance=threshold)
    except IronkitError as e:
        report.fail("no_gap", e)

    try:
        worst = float(np.max(np.abs(result.partition.means - result.partition.values)))
        report.add("cell_means", worst <= threshold, value=worst, tolerance=threshold)
    except IronkitError as e:
        report.fail("cell_means", e)

    try:
        _, baseline = no_access_baseline(alphas, grid, cost)
        report.add("access_never_hurts", result.objective >= baseline - threshold,
                   value=result.objective - baseline, tolerance=threshold)
    except IronkitError as e:
        report.fail("access_never_hurts", e)

    if not report.passed:
        logger.warning(f"Access verification failed: {report.failed_checks()}")
    return report
