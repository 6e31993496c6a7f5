"""
Mechanisms built on ironing: mass-produced goods with interdependent values and
multi-agent contracting over a duration. Derives virtual values, solves through
iron/access, computes telescoping transfers and checks ex-post IC and IR.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect

from workflow.core.access import AccessOptions, AccessResult, solve_access
from workflow.core.errors import InvalidModel, IronkitError, NonFiniteInput, ShapeMismatch
from workflow.core.grid import TypeGrid, check_shape, line_view, partial_delta
from workflow.core.iron import CostModel, IroningOptions, IroningResult, iron, optimal_q
from workflow.core.reports import VerificationReport

logger = logging.getLogger(__name__)


class ProductionModel(BaseModel):
    """
    Output y(d) of a duration d with decreasing marginal product.
    log: a ln(1 + d); power: a d^b with 0 < b < 1; tabulated: piecewise-linear
    marginal product through (durations, marginal_products).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["log", "power", "tabulated"] = "log"
    scale: float = Field(default=1.0, gt=0)
    exponent: float = Field(default=0.5, gt=0, lt=1)
    durations: Optional[List[float]] = None
    marginal_products: Optional[List[float]] = None
    bisect_tol: float = Field(default=1e-10, gt=0)

    @model_validator(mode="after")
    def _check_table(self) -> "ProductionModel":
        if self.kind != "tabulated":
            return self
        if not self.durations or not self.marginal_products or len(self.durations) != len(self.marginal_products):
            raise ValueError("tabulated production needs durations and marginal_products of equal length")
        if len(self.durations) < 2:
            raise ValueError("tabulated production needs at least two points")
        if np.any(np.diff(self.durations) <= 0) or self.durations[0] < 0:
            raise ValueError("durations must start at a non-negative value and increase")
        if np.any(np.diff(self.marginal_products) >= 0):
            raise ValueError("marginal_products must be strictly decreasing")
        return self

    def marginal(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.kind == "log":
            return self.scale / (1.0 + d)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return self.scale * self.exponent * d ** (self.exponent - 1.0)
        return np.interp(d, self.durations, self.marginal_products)

    def value(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.kind == "log":
            return self.scale * np.log1p(d)
        if self.kind == "power":
            return self.scale * d ** self.exponent
        knots = np.asarray(self.durations)
        slopes = np.asarray(self.marginal_products)
        cumulative = np.concatenate([[0.0], np.cumsum(np.diff(knots) * (slopes[1:] + slopes[:-1]) / 2.0)])
        base = np.interp(d, knots, cumulative)
        # beyond the table the last marginal product continues
        return base + np.clip(d - knots[-1], 0.0, None) * slopes[-1]

    def _inverse_scalar(self, m: float) -> float:
        knots = self.durations
        top, bottom = self.marginal_products[0], self.marginal_products[-1]
        if m >= top:
            return float(knots[0])
        if m <= bottom:
            raise InvalidModel(f"Marginal cost {m} is below the tabulated marginal product range")
        return float(bisect(lambda d: float(np.interp(d, knots, self.marginal_products)) - m,
                            knots[0], knots[-1], xtol=self.bisect_tol))

    def marginal_inverse(self, m: np.ndarray) -> np.ndarray:
        """d with y'(d) = m, clipped at 0 where m exceeds y'(0)"""
        m = np.asarray(m, dtype=float)
        if np.any(m <= 0):
            raise InvalidModel("Marginal cost must be positive for a finite duration", path="/production")
        if self.kind == "log":
            return np.clip(self.scale / m - 1.0, 0.0, None)
        if self.kind == "power":
            return (m / (self.scale * self.exponent)) ** (1.0 / (self.exponent - 1.0))
        return np.vectorize(self._inverse_scalar, otypes=[float])(m)


@dataclass(frozen=True, eq=False)
class GoodsSpec:
    values: List[np.ndarray]
    grid: TypeGrid
    cost: CostModel = field(default_factory=CostModel)
    marginal_revenues: Optional[List[np.ndarray]] = None


@dataclass(frozen=True, eq=False)
class ContractSpec:
    costs: List[np.ndarray]
    grid: TypeGrid
    production: ProductionModel = field(default_factory=ProductionModel)


@dataclass(frozen=True, eq=False)
class MechanismOutcome:
    kind: str
    q: np.ndarray
    eta: List[np.ndarray]
    transfers: List[np.ndarray]
    profit: float
    profit_virtual: float
    virtual_values: Union[List[np.ndarray], np.ndarray] = field(repr=False)
    ironing: Optional[IroningResult] = field(default=None, repr=False)
    access: Optional[AccessResult] = field(default=None, repr=False)
    warnings: List[str] = field(default_factory=list)

    @property
    def profit_gap(self) -> float:
        return abs(self.profit - self.profit_virtual)


def _check_per_agent(functions: Sequence[np.ndarray], grid: TypeGrid, name: str) -> List[np.ndarray]:
    if len(functions) != grid.n_agents:
        raise ShapeMismatch(f"Expected {grid.n_agents} {name} functions, got {len(functions)}", path=f"/{name}")
    checked = [check_shape(v, grid, f"{name}/{i}") for i, v in enumerate(functions)]
    for i, v in enumerate(checked):
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput(f"{name}[{i}] has non-finite values", path=f"/{name}/{i}")
    return checked


def own_monotonicity_warnings(functions: Sequence[np.ndarray], grid: TypeGrid, name: str,
                              direction: str = "increasing", tol: float = 1e-12) -> List[str]:
    """Own-coordinate monotonicity is an assumption of the model, reported rather than enforced"""
    warnings = []
    for i, v in enumerate(functions):
        if grid.shape[i] < 2:
            continue
        steps = np.diff(v, axis=i)
        bad = np.any(steps < -tol) if direction == "increasing" else np.any(steps > tol)
        if bad:
            warnings.append(f"{name}[{i}] is not non-{'de' if direction == 'increasing' else 'in'}creasing "
                            f"in agent {i}'s own type")
    for message in warnings:
        logger.warning(message)
    return warnings


def virtual_value(v: np.ndarray, i: int, grid: TypeGrid) -> np.ndarray:
    """v - (1 - F_i)/f_i * upper-delta_i v"""
    hazard = grid.marginal(i, grid.axes[i].inverse_hazard)
    return v - hazard * partial_delta(v, i, "upper")


def marginal_revenue(spec: GoodsSpec) -> List[np.ndarray]:
    values = _check_per_agent(spec.values, spec.grid, "values")
    return [virtual_value(v, i, spec.grid) for i, v in enumerate(values)]


def marginal_cost(spec: ContractSpec) -> np.ndarray:
    """MC = sum_i c_i - (1 - F_i)/f_i * upper-delta_i c_i"""
    costs = _check_per_agent(spec.costs, spec.grid, "costs")
    return sum(virtual_value(c, i, spec.grid) for i, c in enumerate(costs))


def _prefix_before(values: np.ndarray, i: int) -> np.ndarray:
    """sum over s_i < x_i of values(s_i, x_-i)"""
    return np.cumsum(values, axis=i) - values


def goods_transfers(values: Sequence[np.ndarray], q: np.ndarray, eta: Sequence[np.ndarray],
                    grid: TypeGrid) -> List[np.ndarray]:
    """t_i = v_i q eta_i - sum_{s_i < x_i} upper-delta_i v_i(s) q(s) eta_i(s)"""
    transfers = []
    for i, (v, e) in enumerate(zip(values, eta)):
        allocation = q * e
        transfers.append(v * allocation - _prefix_before(partial_delta(v, i, "upper") * allocation, i))
    return transfers


def contract_transfers(costs: Sequence[np.ndarray], d: np.ndarray, grid: TypeGrid) -> List[np.ndarray]:
    """Payment to agent i: c_i d - sum_{s_i < x_i} upper-delta_i c_i(s) d(s)"""
    return [c * d - _prefix_before(partial_delta(c, i, "upper") * d, i) for i, c in enumerate(costs)]


def mechanism_profit_views(kind: str, grid: TypeGrid, q: np.ndarray, transfers: Sequence[np.ndarray],
                           eta: Optional[Sequence[np.ndarray]] = None,
                           virtual: Optional[Union[Sequence[np.ndarray], np.ndarray]] = None,
                           cost: Optional[CostModel] = None,
                           production: Optional[ProductionModel] = None) -> Dict[str, float]:
    """Profit from the transfers and from the virtual-value representation"""
    f = grid.f
    if kind == "goods":
        cost = cost or CostModel()
        transfer_sum = float(np.sum(f * (sum(transfers) - cost.value(q))))
        weighted = sum(e * mr for e, mr in zip(eta, virtual))
        virtual_sum = float(np.sum(f * (q * weighted - cost.value(q))))
    elif kind == "contract":
        production = production or ProductionModel()
        output = production.value(q)
        transfer_sum = float(np.sum(f * (output - sum(transfers))))
        virtual_sum = float(np.sum(f * (output - q * virtual)))
    else:
        raise ValueError(f"Unknown mechanism kind: {kind}")
    return {"transfer_sum": transfer_sum, "virtual": virtual_sum}


def goods_mechanism(spec: GoodsSpec, with_access: bool = False, phi: str = "quadratic",
                    iron_options: Optional[IroningOptions] = None,
                    access_options: Optional[AccessOptions] = None) -> MechanismOutcome:
    grid = spec.grid
    values = _check_per_agent(spec.values, grid, "values")
    warnings = own_monotonicity_warnings(values, grid, "values", "increasing")
    discrete_mr = marginal_revenue(spec)
    solver_mr = (_check_per_agent(spec.marginal_revenues, grid, "marginal_revenues")
                 if spec.marginal_revenues is not None else discrete_mr)

    ironing = access = None
    if with_access:
        access = solve_access(solver_mr, grid, spec.cost, access_options)
        q, eta = access.q_star, access.eta
    else:
        ironing = iron(sum(solver_mr), grid, phi=phi, options=iron_options)
        q = optimal_q(ironing.alpha_bar, spec.cost)
        eta = [np.ones(grid.shape) for _ in range(grid.n_agents)]

    transfers = goods_transfers(values, q, eta, grid)
    views = mechanism_profit_views("goods", grid, q, transfers, eta=eta, virtual=discrete_mr, cost=spec.cost)
    logger.info(f"Goods mechanism solved (access={with_access}): profit={views['transfer_sum']:.10g}")
    return MechanismOutcome(
        kind="goods",
        q=q,
        eta=eta,
        transfers=transfers,
        profit=views["transfer_sum"],
        profit_virtual=views["virtual"],
        virtual_values=discrete_mr,
        ironing=ironing,
        access=access,
        warnings=warnings,
    )


def contracting_solution(spec: ContractSpec, phi: str = "quadratic",
                         iron_options: Optional[IroningOptions] = None) -> MechanismOutcome:
    grid = spec.grid
    costs = _check_per_agent(spec.costs, grid, "costs")
    warnings = own_monotonicity_warnings(costs, grid, "costs", "decreasing")
    mc = marginal_cost(spec)

    ironing = iron(-mc, grid, phi=phi, options=iron_options)
    duration = spec.production.marginal_inverse(-ironing.alpha_bar)
    transfers = contract_transfers(costs, duration, grid)
    views = mechanism_profit_views("contract", grid, duration, transfers, virtual=mc, production=spec.production)
    logger.info(f"Contract solved: profit={views['transfer_sum']:.10g}")
    return MechanismOutcome(
        kind="contract",
        q=duration,
        eta=[],
        transfers=transfers,
        profit=views["transfer_sum"],
        profit_virtual=views["virtual"],
        virtual_values=mc,
        ironing=ironing,
        warnings=warnings,
    )


def _line_utilities(own: np.ndarray, allocation: np.ndarray, payment: np.ndarray, i: int, sign: float):
    """
    Utility of every (true type, report) pair on each line of agent i.
    goods (sign=+1): v(true) w(report) - t(report); contract (sign=-1): t(report) - c(true) d(report).
    """
    n = own.shape[i]
    own_l = line_view(own, i).reshape(-1, n)
    alloc_l = line_view(allocation, i).reshape(-1, n)
    pay_l = line_view(payment, i).reshape(-1, n)
    if sign > 0:
        return own_l[:, :, None] * alloc_l[:, None, :] - pay_l[:, None, :]
    return pay_l[:, None, :] - own_l[:, :, None] * alloc_l[:, None, :]


def verify_ic_ir(spec: Union[GoodsSpec, ContractSpec], outcome: MechanismOutcome,
                 tol: float = 1e-8) -> VerificationReport:
    """Exhaustive misreport check on every line of every agent"""
    report = VerificationReport(subject="incentives")
    grid = spec.grid
    worst_ic, worst_ir = 0.0, 0.0
    where: Dict[str, Any] = {}
    try:
        for i in range(grid.n_agents):
            if isinstance(spec, GoodsSpec):
                utilities = _line_utilities(np.asarray(spec.values[i], dtype=float), outcome.q * outcome.eta[i],
                                            outcome.transfers[i], i, +1.0)
            else:
                utilities = _line_utilities(np.asarray(spec.costs[i], dtype=float), outcome.q,
                                            outcome.transfers[i], i, -1.0)
            truthful = np.diagonal(utilities, axis1=1, axis2=2)
            gains = utilities - truthful[:, :, None]
            line, true_type, lie = np.unravel_index(int(np.argmax(gains)), gains.shape)
            if gains[line, true_type, lie] > worst_ic:
                worst_ic = float(gains[line, true_type, lie])
                where = {"agent": i, "line": int(line), "true_type": int(true_type), "report": int(lie)}
            worst_ir = min(worst_ir, float(truthful.min()))
        report.add("incentive_compatible", worst_ic <= tol, value=worst_ic, tolerance=tol)
        report.add("individually_rational", worst_ir >= -tol, value=worst_ir, tolerance=tol)
        if where:
            report.extras["worst_violation"] = where
    except IronkitError as e:
        report.fail("incentive_compatible", e)

    scale = 1.0 + abs(outcome.profit)
    report.add("profit_cross_check", outcome.profit_gap <= 1e-8 * scale, value=outcome.profit_gap)

    if not report.passed:
        logger.warning(f"Incentive verification failed: {report.failed_checks()}")
    return report
