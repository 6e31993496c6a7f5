"""
Multivariate stochastic dominance on a shared type grid.

Grid weights act as the integration measure; a distribution's pmf is carried
separately. Second-order dominance is majorization of survival complements.
"""

import logging
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from workflow.core.errors import BadProbs, GridMismatch, InvalidModel, SolverFailure
from workflow.core.grid import (
    LOWER_SET_CAP,
    LowerSet,
    TypeGrid,
    check_shape,
    is_nondecreasing,
    lower_set_matrix,
    same_grid,
)
from workflow.core.majorize import DEFAULT_TOL, MajorizationCertificate, majorizes
from workflow.core.reports import VerificationReport

logger = logging.getLogger(__name__)

ORDERS = ("first", "second")
PMF_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class JointDistribution:
    grid: TypeGrid
    pmf: np.ndarray = field(repr=False)

    def __post_init__(self):
        pmf = check_shape(self.pmf, self.grid, "pmf")
        if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
            raise BadProbs("Distribution masses must be finite and non-negative", path="/pmf")
        total = float(pmf.sum())
        if abs(total - 1.0) > PMF_TOLERANCE * max(1, pmf.size):
            raise BadProbs(f"Distribution masses sum to {total}", path="/pmf")
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def product(cls, grid: TypeGrid, marginals: List[np.ndarray]) -> "JointDistribution":
        """Independent coordinates with the given marginal pmfs"""
        joint = reduce(np.multiply.outer, [np.asarray(m, dtype=float) for m in marginals])
        return cls(grid=grid, pmf=joint)

    def expect(self, u: np.ndarray) -> float:
        return float(np.sum(self.pmf * check_shape(u, self.grid, "u")))


def survival_complement(dist: JointDistribution) -> np.ndarray:
    """
    1 - P(Z > x), with ">" strict in every coordinate. Profiles with any
    coordinate at its top type get 1; in one dimension this is the CDF.
    """
    tail = dist.pmf
    for axis in range(tail.ndim):
        tail = np.flip(np.cumsum(np.flip(tail, axis), axis=axis), axis)
    # shift one step up every axis: P(Z >= x + 1)
    padded = np.pad(tail, [(0, 1)] * tail.ndim)
    strict = padded[tuple(slice(1, None) for _ in range(tail.ndim))]
    return 1.0 - strict


def _check_pair(g_dist: JointDistribution, f_dist: JointDistribution) -> TypeGrid:
    if not same_grid(g_dist.grid, f_dist.grid):
        raise GridMismatch("Both distributions must live on the same grid", path="/distributions")
    return g_dist.grid


def dominates(g_dist: JointDistribution, f_dist: JointDistribution, order: str = "second",
              tol: float = DEFAULT_TOL, cap: int = LOWER_SET_CAP) -> MajorizationCertificate:
    """
    Does G dominate F?

    first: G puts no more mass than F on every lower set.
    second: grid-weighted sums of G's survival complement never exceed F's
    over lower sets, with equality on the whole grid.
    """
    grid = _check_pair(g_dist, f_dist)
    if order == "second":
        certificate = majorizes(survival_complement(g_dist), survival_complement(f_dist), grid, tol=tol, cap=cap)
        return MajorizationCertificate(verdict=certificate.verdict, method="second_order",
                                       residual=certificate.residual, witness=certificate.witness)
    if order != "first":
        raise InvalidModel(f"Unknown dominance order: {order}", path="/options/order")

    matrix = lower_set_matrix(grid, cap)
    gaps = matrix @ (f_dist.pmf - g_dist.pmf).ravel()
    worst = int(np.argmin(gaps))
    shortfall = max(0.0, -float(gaps[worst]))
    witness = LowerSet(mask=matrix[worst].reshape(grid.shape).copy()) if shortfall > tol else None
    return MajorizationCertificate(verdict=witness is None, method="first_order", residual=shortfall, witness=witness)


def cobb_douglas(grid: TypeGrid, exponents: np.ndarray) -> np.ndarray:
    """u(x) = prod_i x_i^beta_i on the grid"""
    mesh = grid.mesh()
    return reduce(np.multiply, (x ** b for x, b in zip(mesh, exponents)))


def is_ortho_concave(u: np.ndarray, grid: TypeGrid, tol: float = 1e-12) -> bool:
    """
    For every nonempty set S of coordinates, the mixed difference of u over S on
    the face where the other coordinates sit at their lowest type, divided by
    the cell weights, is non-increasing.
    """
    u = check_shape(u, grid, "u")
    n = grid.n_agents
    scale = tol * (1.0 + float(np.max(np.abs(u))))
    for k in range(1, n + 1):
        for subset in combinations(range(n), k):
            face = u[tuple(slice(None) if i in subset else 0 for i in range(n))]
            if any(grid.shape[i] < 2 for i in subset):
                continue
            for axis in range(face.ndim):
                face = np.diff(face, axis=axis)
            weights = reduce(np.multiply.outer, [grid.axes[i].probs[1:] for i in subset])
            if not is_nondecreasing(-face / weights, scale / float(np.min(weights))):
                return False
    return True


def utility_battery(g_dist: JointDistribution, f_dist: JointDistribution, family: str = "cobb_douglas",
                    count: int = 100, seed: int = 0, tol: float = 1e-10,
                    dominance: Optional[MajorizationCertificate] = None) -> VerificationReport:
    """
    E_G[u] - E_F[u] over seeded random ortho-concave utilities. A negative gap
    while G second-order dominates F marks an implementation fault; the battery
    can falsify dominance but never prove it.
    """
    grid = _check_pair(g_dist, f_dist)
    if family != "cobb_douglas":
        raise InvalidModel(f"Unknown utility family: {family}", path="/options/family")
    if count < 1:
        raise InvalidModel("Utility battery needs at least one draw", path="/options/count")
    for i, axis in enumerate(grid.axes):
        if axis.points[0] < 0 or axis.points[-1] > 1:
            raise InvalidModel(f"Axis {i} points must lie in [0, 1] for Cobb-Douglas utilities", path=f"/axes/{i}/points")

    dominance = dominance or dominates(g_dist, f_dist, "second")
    rng = np.random.default_rng(seed)
    exponents = rng.uniform(0.0, 1.0, size=(count, grid.n_agents))

    gaps, judged = [], []
    for beta in exponents:
        u = cobb_douglas(grid, beta)
        gaps.append(g_dist.expect(u) - f_dist.expect(u))
        judged.append(is_ortho_concave(u, grid))
    gaps = np.asarray(gaps)
    judged = np.asarray(judged, dtype=bool)

    report = VerificationReport(subject="utility_battery")
    report.notes.append("Sampled utilities can falsify dominance but never prove it")
    faults = judged & (gaps < -tol) if dominance.verdict else np.zeros_like(judged)
    report.add("consistent_with_dominance", not faults.any(),
               value=float(gaps[judged].min()) if judged.any() else None, tolerance=tol)
    report.extras.update({
        "dominates": dominance.verdict,
        "seed": seed,
        "count": count,
        "judged": int(judged.sum()),
        "not_judged": int((~judged).sum()),
        "negative_gaps": int((gaps < -tol).sum()),
        "min_gap": float(gaps.min()),
        "gaps": [float(x) for x in gaps],
    })
    if faults.any():
        logger.error(f"{int(faults.sum())} ortho-concave utilities prefer F although G dominates")
    return report


@dataclass(frozen=True, eq=False)
class DSFactorization:
    """F = T G with T doubly stochastic, or the prefix that rules it out"""
    feasible: bool
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    witness: Optional[Tuple[int, ...]] = None
    residual: float = 0.0

    def to_dict(self) -> dict:
        payload = {"feasible": self.feasible, "residual": self.residual}
        if self.matrix is not None:
            payload["matrix"] = self.matrix.tolist()
        if self.witness is not None:
            payload["witness"] = list(self.witness)
        return payload


def _prefix_witness(f_vals: np.ndarray, g_vals: np.ndarray, tol: float) -> Optional[Tuple[int, ...]]:
    """Indices of the k smallest entries of F whose sum falls below G's k smallest"""
    order = np.argsort(f_vals, kind="stable")
    gap = np.cumsum(f_vals[order]) - np.cumsum(np.sort(g_vals))
    threshold = tol * (1.0 + float(np.max(np.abs(np.concatenate([f_vals, g_vals])))))
    if abs(float(gap[-1])) > threshold:
        return tuple(int(k) for k in range(len(f_vals)))
    bad = np.flatnonzero(gap < -threshold)
    if bad.size == 0:
        return None
    k = int(bad[np.argmin(gap[bad])]) + 1
    return tuple(sorted(int(j) for j in order[:k]))


def ds_factorization(f_vals: np.ndarray, g_vals: np.ndarray, tol: float = DEFAULT_TOL) -> DSFactorization:
    """
    Find a non-negative T with unit row and column sums and F = T G. Feasible
    exactly when G majorizes F as value sequences.
    """
    f_vals = np.asarray(f_vals, dtype=float).ravel()
    g_vals = np.asarray(g_vals, dtype=float).ravel()
    if f_vals.shape != g_vals.shape:
        raise InvalidModel(f"F has {f_vals.size} values, G has {g_vals.size}", path="/values")
    n = f_vals.size

    eye = np.eye(n)
    ones = np.ones((1, n))
    rows = np.kron(eye, ones)
    cols = np.kron(ones, eye)
    mapping = np.kron(eye, g_vals[None, :])
    a_eq = np.vstack([rows, cols, mapping])
    b_eq = np.concatenate([np.ones(n), np.ones(n), f_vals])

    result = linprog(np.zeros(n * n), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    witness = _prefix_witness(f_vals, g_vals, tol)
    if result.status == 2:
        return DSFactorization(feasible=False, witness=witness)
    if result.status != 0:
        raise SolverFailure(f"Doubly-stochastic feasibility LP failed: {result.message}")

    matrix = np.clip(result.x.reshape(n, n), 0.0, None)
    residual = float(np.max(np.abs(matrix @ g_vals - f_vals)))
    if witness is not None:
        logger.warning(f"LP found a factorization although prefix sums disagree at {witness}")
    return DSFactorization(feasible=True, matrix=matrix, residual=residual)


def birkhoff_decomposition(matrix: np.ndarray, tol: float = 1e-9) -> List[Tuple[float, np.ndarray]]:
    """Split a doubly-stochastic matrix into weighted permutations (weight, column of each row)"""
    work = np.array(matrix, dtype=float)
    n = work.shape[0]
    if work.ndim != 2 or work.shape[1] != n:
        raise InvalidModel("Birkhoff decomposition needs a square matrix")
    if np.any(work < -tol) or not (np.allclose(work.sum(axis=0), 1.0, atol=1e-7)
                                   and np.allclose(work.sum(axis=1), 1.0, atol=1e-7)):
        raise InvalidModel("Matrix is not doubly stochastic")

    terms = []
    for _ in range(n * n + 1):
        if np.all(work <= tol):
            return terms
        support = work > tol
        cost = np.where(support, -work, n * n + 1.0)
        rows, cols = linear_sum_assignment(cost)
        if not np.all(support[rows, cols]):
            raise SolverFailure("No permutation on the remaining support")
        weight = float(work[rows, cols].min())
        terms.append((weight, cols.copy()))
        work[rows, cols] -= weight
        work[np.abs(work) <= tol] = 0.0
    raise SolverFailure("Birkhoff decomposition did not terminate")
