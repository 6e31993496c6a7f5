"""
Ironing: the minimal non-decreasing majorant of a virtual-value function.

The transfer field lambda is found by cyclic coordinate descent on
    E[phi(alpha - sum_i lower-delta_i lambda_i / f)],  lambda >= 0,
and the ironed function alpha_bar is read off the optimum. A second, independent
route solves the weighted least-squares projection through its NNLS dual.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Literal, Optional, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import nnls

from workflow.core.errors import (
    InvalidModel,
    IronkitError,
    MeanMismatch,
    NonFiniteInput,
    NotConverged,
    TooManyLowerSets,
    UltramodularityViolated,
)
from workflow.core.grid import TypeGrid, check_shape, is_nondecreasing, is_order_convex
from workflow.core.majorize import majorizes
from workflow.core.reports import VerificationReport
from workflow.core.transfers import TransferField, divergence, divergence_operator, top_type_violation

logger = logging.getLogger(__name__)

PHI = {
    "quadratic": lambda r: r ** 2,
    "quartic": lambda r: r ** 4,
}


class IroningOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(default=1e-10, gt=0, description="Relative objective decrease between checks")
    kkt_tol: float = Field(default=1e-9, gt=0)
    max_sweeps: int = Field(default=100_000, ge=1)
    min_update: float = Field(default=1e-13, ge=0, description="Smallest coordinate move, value units")
    cell_tol: float = Field(default=1e-7, gt=0, description="Relative tolerance for equal ironed values")
    lambda_tol: float = Field(default=1e-9, gt=0, description="Relative threshold for a positive transfer")
    check_tol: float = Field(default=1e-6, gt=0)
    relaxation: float = Field(default=1.5, gt=0, lt=2, description="Over-relaxation factor, quadratic phi only")
    check_every: int = Field(default=10, ge=1, description="Sweeps between convergence checks")
    validate_partition: bool = True


class CostModel(BaseModel):
    """Convex production cost with C(0) = C'(0) = 0"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["quadratic", "power"] = "quadratic"
    scale: float = Field(default=1.0, gt=0)
    exponent: float = Field(default=2.0, gt=1)

    def value(self, q: np.ndarray) -> np.ndarray:
        q = np.clip(np.asarray(q, dtype=float), 0.0, None)
        if self.kind == "quadratic":
            return self.scale * q ** 2 / 2.0
        return self.scale * q ** self.exponent / self.exponent

    def marginal(self, q: np.ndarray) -> np.ndarray:
        q = np.clip(np.asarray(q, dtype=float), 0.0, None)
        if self.kind == "quadratic":
            return self.scale * q
        return self.scale * q ** (self.exponent - 1.0)

    def marginal_inverse(self, y: np.ndarray) -> np.ndarray:
        y = np.clip(np.asarray(y, dtype=float), 0.0, None)
        if self.kind == "quadratic":
            return y / self.scale
        return (y / self.scale) ** (1.0 / (self.exponent - 1.0))


@dataclass(frozen=True, eq=False)
class Partition:
    """
    Cells of the grid as integer labels, numbered by their first profile in
    canonical order. means[k] is E[alpha | cell k], values[k] the ironed value.
    """
    labels: np.ndarray
    means: np.ndarray
    values: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.means.size)

    def cell_masks(self) -> List[np.ndarray]:
        return [self.labels == k for k in range(self.n_cells)]

    def cells(self) -> List[List[Tuple[int, ...]]]:
        return [[tuple(int(v) for v in idx) for idx in np.argwhere(mask)] for mask in self.cell_masks()]

    def cell_of(self, profile: Tuple[int, ...]) -> int:
        return int(self.labels[tuple(profile)])

    def level_sets(self, tol: float = 1e-7) -> List[List[int]]:
        """Cells grouped by equal ironed value, the level-set view of the same partition"""
        groups: List[List[int]] = []
        for k in np.argsort(self.values, kind="stable"):
            k = int(k)
            if groups and abs(self.values[k] - self.values[groups[-1][0]]) <= tol * (1.0 + abs(self.values[k])):
                groups[-1].append(k)
            else:
                groups.append([k])
        return sorted((sorted(g) for g in groups), key=lambda g: g[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cells": [[list(p) for p in cell] for cell in self.cells()],
            "means": self.means.tolist(),
            "values": self.values.tolist(),
            "level_sets": self.level_sets(),
        }


@dataclass(frozen=True, eq=False)
class IroningResult:
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray
    transfers: TransferField = field(repr=False)
    objective: float
    sweeps: int
    kkt: Dict[str, float]
    phi: str = "quadratic"
    stop_reason: str = "converged"
    partition: Optional[Partition] = None


def singleton_partition(alpha: np.ndarray, grid: TypeGrid) -> Partition:
    alpha = check_shape(alpha, grid, "alpha")
    labels = np.arange(grid.size).reshape(grid.shape)
    return Partition(labels=labels, means=alpha.ravel().copy(), values=alpha.ravel().copy())


def partition_from_graph(graph: nx.Graph, grid: TypeGrid, alpha: np.ndarray, values: np.ndarray) -> Partition:
    """Connected components of a graph on flat profile indices, labelled canonically"""
    components = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])
    labels = np.empty(grid.size, dtype=int)
    for k, component in enumerate(components):
        labels[component] = k
    labels = labels.reshape(grid.shape)
    f = grid.f
    means = np.array([float(np.sum(f[labels == k] * alpha[labels == k]) / np.sum(f[labels == k]))
                      for k in range(len(components))])
    cell_values = np.array([float(np.sum(f[labels == k] * values[labels == k]) / np.sum(f[labels == k]))
                            for k in range(len(components))])
    return Partition(labels=labels, means=means, values=cell_values)


def grid_edges(grid: TypeGrid, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat indices of (x, x_i^+) pairs along agent i"""
    flat_index = np.arange(grid.size).reshape(grid.shape)
    lower = np.take(flat_index, np.arange(grid.shape[i] - 1), axis=i).ravel()
    upper = np.take(flat_index, np.arange(1, grid.shape[i]), axis=i).ravel()
    return lower, upper


def validate_partition(partition: Partition, grid: TypeGrid, alpha: np.ndarray, values: np.ndarray,
                       check_tol: float) -> None:
    """Every cell ultramodular; the ironed function constant on it and equal to E[alpha | cell]"""
    threshold = check_tol * (1.0 + float(np.max(np.abs(alpha))))
    for k, mask in enumerate(partition.cell_masks()):
        if not is_order_convex(mask):
            raise UltramodularityViolated(
                f"Cell {k} is not ultramodular",
                details={"cell": [list(map(int, p)) for p in np.argwhere(mask)]},
            )
        spread = float(np.max(np.abs(values[mask] - partition.means[k])))
        if spread > threshold:
            raise MeanMismatch(
                f"Cell {k}: ironed values differ from the cell mean by {spread:.3e}",
                details={"cell": k, "spread": spread, "mean": float(partition.means[k])},
            )


def extract_partition(result: IroningResult, grid: TypeGrid, tol: Optional[float] = None,
                      options: Optional[IroningOptions] = None) -> Partition:
    """
    Cells are connected components of the graph linking x to x_i^+ whenever
    lambda_i(x) is positive or the ironed values agree.
    """
    options = options or IroningOptions()
    cell_tol = tol if tol is not None else options.cell_tol
    alpha_bar = result.alpha_bar
    lam_threshold = options.lambda_tol * (1.0 + result.transfers.sup_norm())

    graph = nx.Graph()
    graph.add_nodes_from(range(grid.size))
    flat_bar = alpha_bar.ravel()
    for i in range(grid.n_agents):
        lower, upper = grid_edges(grid, i)
        if lower.size == 0:
            continue
        lam = result.transfers[i].ravel()[lower]
        gap = np.abs(flat_bar[upper] - flat_bar[lower])
        same = gap <= cell_tol * (1.0 + np.maximum(np.abs(flat_bar[lower]), np.abs(flat_bar[upper])))
        linked = (lam > lam_threshold) | same
        graph.add_edges_from(zip(lower[linked].tolist(), upper[linked].tolist()))

    partition = partition_from_graph(graph, grid, result.alpha, alpha_bar)
    validate_partition(partition, grid, result.alpha, alpha_bar, options.check_tol)
    logger.debug(f"Partition has {partition.n_cells} cells")
    return partition


def _parity_blocks(grid: TypeGrid) -> List[Tuple[int, np.ndarray]]:
    """Agent, then even/odd lower position; coordinates in one block share no cell"""
    blocks = []
    for i, n in enumerate(grid.shape):
        for parity in (0, 1):
            lo = np.arange(parity, n - 1, 2)
            if lo.size:
                blocks.append((i, lo))
    return blocks


def _kkt(alpha_bar: np.ndarray, lambdas: List[np.ndarray], grid: TypeGrid) -> Dict[str, float]:
    min_delta = 0.0
    comp_slack = 0.0
    for i, lam in enumerate(lambdas):
        if grid.shape[i] < 2:
            continue
        upper_delta = np.diff(alpha_bar, axis=i)
        lam_values = np.take(lam / grid.f, np.arange(grid.shape[i] - 1), axis=i)
        min_delta = min(min_delta, float(upper_delta.min()))
        comp_slack = max(comp_slack, float(np.max(lam_values * np.abs(upper_delta))))
    return {"min_upper_delta": min_delta, "max_comp_slack": comp_slack}


def _objective(residual: np.ndarray, f: np.ndarray, phi: str) -> float:
    return float(np.sum(f * PHI[phi](residual)))


def iron(alpha: np.ndarray, grid: TypeGrid, phi: str = "quadratic",
         options: Optional[IroningOptions] = None) -> IroningResult:
    """
    Cyclic coordinate descent over lambda_i(x). A single coordinate only moves
    the residuals at x and x_i^+, and for any strictly convex phi its optimum
    equalizes those two residuals, clipped at lambda = 0.
    """
    options = options or IroningOptions()
    alpha = check_shape(alpha, grid, "alpha")
    if not np.all(np.isfinite(alpha)):
        raise NonFiniteInput("alpha has non-finite values", path="/alpha")
    if phi not in PHI:
        raise InvalidModel(f"Unknown phi: {phi}", path="/options/phi")

    f = grid.f
    lambdas = [np.zeros(grid.shape) for _ in range(grid.n_agents)]
    residual = alpha.copy()
    scale = 1.0 + float(np.max(np.abs(alpha)))
    objective = _objective(residual, f, phi)

    blocks = []
    for i, lo in _parity_blocks(grid):
        f_view = np.moveaxis(f, i, -1)
        f_lo, f_hi = f_view[..., lo], f_view[..., lo + 1]
        blocks.append((i, lo, lo + 1, f_lo, f_hi, 1.0 / (1.0 / f_lo + 1.0 / f_hi)))

    stop_reason = None
    kkt = _kkt(residual, lambdas, grid)
    decrease = 0.0
    sweep = 0
    # projected SOR stays monotone for the quadratic objective only
    omega = options.relaxation if phi == "quadratic" else 1.0
    for sweep in range(1, options.max_sweeps + 1):
        max_update = 0.0
        for i, lo, hi, f_lo, f_hi, weight in blocks:
            r_view = np.moveaxis(residual, i, -1)
            l_view = np.moveaxis(lambdas[i], i, -1)
            current = l_view[..., lo]
            updated = np.maximum(0.0, current + omega * (r_view[..., lo] - r_view[..., hi]) * weight)
            step = updated - current
            l_view[..., lo] = updated
            r_view[..., lo] -= step / f_lo
            r_view[..., hi] += step / f_hi
            max_update = max(max_update, float(np.max(np.abs(step / f_lo))))

        stationary = max_update < options.min_update
        if not stationary and sweep % options.check_every:
            continue

        previous, objective = objective, _objective(residual, f, phi)
        decrease = previous - objective
        kkt = _kkt(residual, lambdas, grid)

        if stationary:
            stop_reason = "stationary"
            break
        kkt_ok = (kkt["min_upper_delta"] >= -options.kkt_tol * scale
                  and kkt["max_comp_slack"] <= options.kkt_tol * scale ** 2)
        if decrease <= options.tol * (1.0 + abs(objective)) and kkt_ok:
            stop_reason = "converged"
            break
        if sweep % 10_000 == 0:
            logger.debug(f"Sweep {sweep}: objective={objective:.12e} decrease={decrease:.3e}")

    if stop_reason is None:
        raise NotConverged(
            f"Ironing did not converge in {options.max_sweeps} sweeps",
            details={"sweeps": sweep, "last_decrease": decrease, **kkt},
        )

    alpha_bar = alpha - divergence(lambdas) / f
    transfers = TransferField.from_arrays(lambdas)
    kkt = _kkt(alpha_bar, lambdas, grid)
    result = IroningResult(
        alpha=alpha,
        alpha_bar=alpha_bar,
        transfers=transfers,
        objective=_objective(alpha_bar, f, phi),
        sweeps=sweep,
        kkt=kkt,
        phi=phi,
        stop_reason=stop_reason,
    )
    logger.info(f"Ironing {stop_reason} after {sweep} sweeps, objective={result.objective:.10g}")

    if options.validate_partition:
        result = replace(result, partition=extract_partition(result, grid, options=options))
    return result


def iron_rls(alpha: np.ndarray, grid: TypeGrid, options: Optional[IroningOptions] = None) -> np.ndarray:
    """
    Probability-weighted least-squares projection of alpha onto the
    coordinate-wise non-decreasing cone, solved exactly as NNLS on its dual.
    """
    alpha = check_shape(alpha, grid, "alpha")
    if not np.all(np.isfinite(alpha)):
        raise NonFiniteInput("alpha has non-finite values", path="/alpha")
    operator, _ = divergence_operator(grid)
    if operator.shape[1] == 0:
        return alpha.copy()

    sqrt_f = np.sqrt(grid.f.ravel())
    design = operator.toarray() / sqrt_f[:, None]
    target = sqrt_f * alpha.ravel()
    try:
        solution, _ = nnls(design, target, maxiter=50 * max(design.shape))
    except RuntimeError as e:
        raise NotConverged(f"Restricted least squares did not converge: {e}")
    return alpha - (operator @ solution).reshape(grid.shape) / grid.f


def optimal_q(alpha_bar: np.ndarray, cost: CostModel) -> np.ndarray:
    """q*(x) = C'^-1(max(alpha_bar(x), 0))"""
    return cost.marginal_inverse(np.maximum(np.asarray(alpha_bar, dtype=float), 0.0))


def principal_value(alpha: np.ndarray, q: np.ndarray, cost: CostModel, grid: TypeGrid) -> float:
    """E[q alpha - C(q)]"""
    alpha = check_shape(alpha, grid, "alpha")
    q = check_shape(q, grid, "q")
    return float(np.sum(grid.f * (q * alpha - cost.value(q))))


def verify_ironing(alpha: np.ndarray, result: IroningResult, grid: TypeGrid, mode: str = "oracle",
                   cost: Optional[CostModel] = None, tol: float = 1e-7) -> VerificationReport:
    report = VerificationReport(subject="ironing")
    cost = cost or CostModel()
    alpha = np.asarray(alpha, dtype=float)
    alpha_bar = np.asarray(result.alpha_bar, dtype=float)
    threshold = tol * (1.0 + float(np.max(np.abs(alpha))))

    try:
        if mode == "transfers":
            # with the reconstruction check below, a non-negative field with top-type zeros certifies majorization
            fields = result.transfers.in_value_units(grid)
            negative = max(0.0, -min(float(np.min(lam)) for lam in fields))
            residual = max(negative, top_type_violation(fields, grid))
            report.add("majorizes", residual <= threshold, value=residual, tolerance=threshold, detail=mode)
        else:
            method = mode
            try:
                certificate = majorizes(alpha_bar, alpha, grid, tol=tol, method=method)
            except TooManyLowerSets:
                method = "flow"
                report.notes.append("Lower sets not enumerable; majorization checked by flow")
                certificate = majorizes(alpha_bar, alpha, grid, tol=tol, method=method)
            report.add("majorizes", certificate.verdict, value=certificate.residual, tolerance=tol, detail=method)
    except IronkitError as e:
        report.fail("majorizes", e)

    try:
        min_delta = min((float(np.diff(alpha_bar, axis=i).min()) for i in range(grid.n_agents)
                         if grid.shape[i] > 1), default=0.0)
        report.add("monotone", is_nondecreasing(alpha_bar, threshold), value=min_delta, tolerance=threshold)
    except IronkitError as e:
        report.fail("monotone", e)

    try:
        gap = abs(float(np.sum(grid.f * (alpha_bar - alpha))))
        report.add("mean_preserved", gap <= threshold, value=gap, tolerance=threshold)
    except IronkitError as e:
        report.fail("mean_preserved", e)

    try:
        rebuilt = alpha - divergence(result.transfers.fields) / grid.f
        drift = float(np.max(np.abs(rebuilt - alpha_bar)))
        report.add("reconstruction", drift <= 1e-10 * (1.0 + float(np.max(np.abs(alpha)))), value=drift)
    except IronkitError as e:
        report.fail("reconstruction", e)

    try:
        partition = result.partition or extract_partition(result, grid)
        worst = 0.0
        for k, mask in enumerate(partition.cell_masks()):
            mean_alpha = float(np.sum(grid.f[mask] * alpha[mask]) / np.sum(grid.f[mask]))
            worst = max(worst, float(np.max(np.abs(alpha_bar[mask] - mean_alpha))))
        report.add("cell_means", worst <= threshold, value=worst, tolerance=threshold)
    except IronkitError as e:
        report.fail("cell_means", e)

    try:
        q = optimal_q(alpha_bar, cost)
        gap = abs(principal_value(alpha_bar, q, cost, grid) - principal_value(alpha, q, cost, grid))
        report.add("no_gap", gap <= threshold * (1.0 + float(np.max(q))), value=gap, tolerance=threshold)
    except IronkitError as e:
        report.fail("no_gap", e)

    if not report.passed:
        logger.warning(f"Ironing verification failed: {report.failed_checks()}")
    return report
