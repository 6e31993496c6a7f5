"""
Multivariate majorization on product type grids.

Convention: h majorizes g (h is the "major" function) when for every lower set L
    E[g | L] >= E[h | L], with equality on the whole grid.
Equivalently there is a transfer field lambda >= 0 with top-type zeros and
    f * (g - h) = sum_i lower-delta_i lambda_i,
which is what the flow certificate recovers.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog, nnls

from workflow.core.errors import (
    DecompositionStalled,
    LPFailure,
    NotMajorized,
    NotMonotone,
    TooManyLowerSets,
)
from workflow.core.grid import (
    LOWER_SET_CAP,
    LowerSet,
    TypeGrid,
    check_shape,
    is_nondecreasing,
    lower_closure,
    lower_set_matrix,
)
from workflow.core.transfers import TransferField, divergence_operator, unpack_columns

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
METHODS = ("oracle", "flow")


@dataclass(frozen=True, eq=False)
class OrthogonalTTransform:
    """Two-point averaging along one agent's line"""
    agent: int
    line: Tuple[int, ...]
    pair: Tuple[int, int]
    weight: float
    delta: float

    def profiles(self) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        low = self.line[:self.agent] + (self.pair[0],) + self.line[self.agent:]
        high = self.line[:self.agent] + (self.pair[1],) + self.line[self.agent:]
        return low, high

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "line": list(self.line),
            "pair": list(self.pair),
            "weight": self.weight,
            "delta": self.delta,
        }


@dataclass(frozen=True, eq=False)
class MajorizationCertificate:
    verdict: bool
    method: str
    residual: float
    witness: Optional[LowerSet] = None
    transfers: Optional[TransferField] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        payload = {"verdict": self.verdict, "method": self.method, "residual": self.residual}
        if self.witness is not None:
            payload["witness"] = [list(p) for p in self.witness.members()]
        return payload


@dataclass(frozen=True, eq=False)
class MinimalityRanges:
    """Per-profile range of g(x) over non-decreasing g with candidate > g > alpha"""
    lower: np.ndarray
    upper: np.ndarray
    candidate: np.ndarray

    def degenerate(self, tol: float = 1e-7) -> np.ndarray:
        scale = 1.0 + np.abs(self.candidate)
        return (np.abs(self.lower - self.candidate) <= tol * scale) & (np.abs(self.upper - self.candidate) <= tol * scale)

    def is_minimal(self, tol: float = 1e-7) -> bool:
        return bool(np.all(self.degenerate(tol)))


def _threshold(tol: float, *arrays: np.ndarray) -> float:
    scale = max((float(np.max(np.abs(a))) for a in arrays), default=0.0)
    return tol * (1.0 + scale)


def _oracle(h: np.ndarray, g: np.ndarray, grid: TypeGrid, tol: float, cap: int) -> MajorizationCertificate:
    matrix = lower_set_matrix(grid, cap)
    # probability-weighted gaps per lower set; a majorant needs every one >= 0
    gaps = matrix @ (grid.f * (g - h)).ravel()
    threshold = _threshold(tol, g, h)

    full_gap = abs(float(gaps[-1]))
    worst = int(np.argmin(gaps))
    shortfall = max(0.0, -float(gaps[worst]))
    residual = max(full_gap, shortfall)

    if full_gap > threshold and full_gap >= shortfall:
        witness = LowerSet(mask=np.ones(grid.shape, dtype=bool))
    elif shortfall > threshold:
        witness = LowerSet(mask=matrix[worst].reshape(grid.shape).copy())
    else:
        witness = None
    return MajorizationCertificate(verdict=witness is None, method="oracle", residual=residual, witness=witness)


def _flow_witness(residual_vec: np.ndarray, b: np.ndarray, grid: TypeGrid, threshold: float) -> LowerSet:
    """
    The NNLS residual r is non-decreasing along every edge at the optimum, so its
    strict lower level sets are lower sets; the one with the most negative
    weighted gap is returned.
    """
    full = LowerSet(mask=np.ones(grid.shape, dtype=bool))
    if abs(float(b.sum())) > threshold:
        return full
    best_mask, best_gap = None, 0.0
    for level in np.unique(residual_vec)[1:]:
        mask = lower_closure((residual_vec < level).reshape(grid.shape))
        gap = float(b[mask.ravel()].sum())
        if gap < best_gap:
            best_mask, best_gap = mask, gap
    return full if best_mask is None else LowerSet(mask=best_mask)


def _flow(h: np.ndarray, g: np.ndarray, grid: TypeGrid, tol: float) -> MajorizationCertificate:
    operator, layout = divergence_operator(grid)
    b = (grid.f * (g - h)).ravel()
    if operator.shape[1] == 0:
        solution = np.zeros(0)
        residual_vec = b.copy()
    else:
        dense = operator.toarray()
        solution, _ = nnls(dense, b, maxiter=50 * max(dense.shape))
        residual_vec = b - dense @ solution
    residual = float(np.linalg.norm(residual_vec))
    threshold = _threshold(tol, g, h)
    verdict = residual <= threshold

    transfers = unpack_columns(solution, layout, grid)
    witness = None if verdict else _flow_witness(residual_vec, b, grid, threshold)
    return MajorizationCertificate(
        verdict=verdict, method="flow", residual=residual, witness=witness, transfers=transfers,
    )


def majorizes(h: np.ndarray, g: np.ndarray, grid: TypeGrid, tol: float = DEFAULT_TOL,
              method: str = "oracle", cap: int = LOWER_SET_CAP) -> MajorizationCertificate:
    """
    Does h majorize g on the grid?

    oracle: checks every lower set.
    flow: non-negative least squares for the transfer field; the fitted field is
    returned with the certificate.
    """
    h = check_shape(h, grid, "h")
    g = check_shape(g, grid, "g")
    if method == "oracle":
        certificate = _oracle(h, g, grid, tol, cap)
    elif method == "flow":
        certificate = _flow(h, g, grid, tol)
    else:
        raise ValueError(f"Unknown majorization method: {method}")
    logger.debug(f"majorizes[{method}] verdict={certificate.verdict} residual={certificate.residual:.3e}")
    return certificate


def majorizes_in_coordinate(g: np.ndarray, h: np.ndarray, i: int, grid: TypeGrid,
                            tol: float = DEFAULT_TOL) -> bool:
    """
    g majorizes h in coordinate i: along every line of agent i, the prefix means
    of g never exceed those of h, and the line totals agree.
    """
    g = check_shape(g, grid, "g")
    h = check_shape(h, grid, "h")
    weights = grid.marginal(i, grid.axes[i].probs)
    prefix = np.cumsum(weights * (g - h), axis=i)
    threshold = _threshold(tol, g, h)
    totals = np.take(prefix, -1, axis=i)
    return bool(np.all(prefix <= threshold) and np.all(np.abs(totals) <= threshold))


class _MajorizationCheck:
    """Reusable check against a fixed minor function, oracle when enumerable"""

    def __init__(self, g: np.ndarray, grid: TypeGrid, tol: float):
        self.g = g
        self.grid = grid
        self.tol = tol
        try:
            self.matrix = lower_set_matrix(grid)
        except TooManyLowerSets:
            self.matrix = None

    def __call__(self, h: np.ndarray) -> bool:
        if self.matrix is None:
            return majorizes(h, self.g, self.grid, self.tol, method="flow").verdict
        gaps = self.matrix @ (self.grid.f * (self.g - h)).ravel()
        threshold = _threshold(self.tol, self.g, h)
        return bool(gaps.min() >= -threshold and abs(gaps[-1]) <= threshold)

    def shift_limit(self, h: np.ndarray, low: Tuple[int, ...], high: Tuple[int, ...]) -> float:
        """Largest mass movable from high down to low before some lower-set gap turns negative"""
        gaps = self.matrix @ (self.grid.f * (self.g - h)).ravel()
        shape = self.grid.shape
        affected = self.matrix[:, np.ravel_multi_index(low, shape)] & ~self.matrix[:, np.ravel_multi_index(high, shape)]
        if not affected.any():
            return float("inf")
        return max(0.0, float(gaps[affected].min()))


def _candidates(h: np.ndarray, g: np.ndarray, grid: TypeGrid, eps: float, exhaustive: bool):
    """
    Mismatch pairs (agent, low, high): h too high at the high profile and too low
    at the low profile on the same agent line. Agent-major, then profile order;
    by default only the nearest low profile below each high profile.
    """
    excess = h - g
    for i in range(grid.n_agents):
        for high in zip(*np.nonzero(excess > eps)):
            for k in range(high[i] - 1, -1, -1):
                low = high[:i] + (k,) + high[i + 1:]
                if excess[low] < -eps:
                    yield i, tuple(int(v) for v in low), tuple(int(v) for v in high)
                    if not exhaustive:
                        break


def _relay_step(h: np.ndarray, g: np.ndarray, grid: TypeGrid, eps: float, check: _MajorizationCheck):
    """
    Stall fallback: move mass from a profile where h exceeds g to a lower profile on
    the same line that does not fall short, as far as every lower-set gap allows.
    The receiving profile passes the surplus on in a later step.
    """
    if check.matrix is None:
        return None
    f = grid.f
    excess = h - g
    for i in range(grid.n_agents):
        for high in zip(*np.nonzero(excess > eps)):
            high = tuple(int(v) for v in high)
            for k in range(high[i] - 1, -1, -1):
                low = high[:i] + (k,) + high[i + 1:]
                spread = h[high] - h[low]
                if spread <= eps:
                    continue
                mass = min(f[high] * excess[high], f[low] * spread, check.shift_limit(h, low, high))
                if mass <= eps * f[high]:
                    continue
                trial = h.copy()
                trial[low] += mass / f[low]
                trial[high] -= mass / f[high]
                if check(trial):
                    return i, low, high, mass, trial
    return None


def decompose_t_transforms(h: np.ndarray, g: np.ndarray, grid: TypeGrid,
                           tol: float = DEFAULT_TOL) -> List[OrthogonalTTransform]:
    """
    Write g as h followed by a series of orthogonal T-transforms.

    Each step moves probability mass from a profile where h exceeds g down its
    agent line to a profile where h falls short, as much as both gaps allow, and
    keeps only steps after which the intermediate function still majorizes g.
    When no such pair exists on a single line, mass is relayed through a profile
    that already matches g.
    """
    h = check_shape(h, grid, "h").copy()
    g = check_shape(g, grid, "g")
    if not is_nondecreasing(h, tol) or not is_nondecreasing(g, tol):
        raise NotMonotone("Decomposition needs non-decreasing h and g")
    if not majorizes(h, g, grid, tol, method="flow").verdict:
        raise NotMajorized("h does not majorize g")

    f = grid.f
    eps = _threshold(tol, g, h)
    still_majorizes = _MajorizationCheck(g, grid, tol)
    transforms: List[OrthogonalTTransform] = []
    guard = 16 * grid.size + 16

    while np.max(np.abs(h - g)) > eps:
        if len(transforms) >= guard:
            raise DecompositionStalled(
                f"No convergence after {len(transforms)} transforms",
                details={"sup_gap": float(np.max(np.abs(h - g)))},
            )
        step = None
        for exhaustive in (False, True):
            for i, low, high in _candidates(h, g, grid, eps, exhaustive):
                mass = min(f[high] * (h[high] - g[high]), f[low] * (g[low] - h[low]))
                trial = h.copy()
                trial[low] += mass / f[low]
                trial[high] -= mass / f[high]
                if still_majorizes(trial):
                    step = (i, low, high, mass, trial)
                    break
            if step is not None:
                break
        if step is None:
            step = _relay_step(h, g, grid, eps, still_majorizes)
        if step is None:
            raise DecompositionStalled(
                "No mismatch pair keeps the intermediate function a majorant",
                details={"transforms": len(transforms)},
            )

        i, low, high, mass, trial = step
        delta = mass / f[low]
        weight = delta / (h[high] - h[low])
        transforms.append(OrthogonalTTransform(
            agent=i,
            line=low[:i] + low[i + 1:],
            pair=(low[i], high[i]),
            weight=float(weight),
            delta=float(delta),
        ))
        h = trial

    logger.info(f"Decomposed into {len(transforms)} orthogonal T-transforms")
    return transforms


def apply_t_transforms(h: np.ndarray, transforms: List[OrthogonalTTransform], grid: TypeGrid) -> np.ndarray:
    """Replay a decomposition; each transform conserves probability mass on its pair"""
    out = check_shape(h, grid, "h").copy()
    f = grid.f
    for transform in transforms:
        low, high = transform.profiles()
        shift = transform.weight * (out[high] - out[low])
        out[low] += shift
        out[high] -= shift * f[low] / f[high]
    return out


def minimality_ranges(candidate: np.ndarray, alpha: np.ndarray, grid: TypeGrid,
                      tol: float = DEFAULT_TOL, cap: int = LOWER_SET_CAP) -> MinimalityRanges:
    """
    For each profile, the smallest and largest value g(x) can take over
    non-decreasing g lying between candidate and alpha in the majorization order.
    """
    candidate = check_shape(candidate, grid, "candidate")
    alpha = check_shape(alpha, grid, "alpha")
    if not is_nondecreasing(candidate, tol):
        raise NotMonotone("Minimality candidate must be non-decreasing")
    if not majorizes(candidate, alpha, grid, tol, cap=cap).verdict:
        raise NotMajorized("Minimality candidate does not majorize alpha")

    size = grid.size
    f = grid.f.ravel()
    matrix = lower_set_matrix(grid, cap).astype(float)
    proper = matrix[1:-1]
    weighted = proper * f

    # monotone: g(x) - g(x+) <= 0 along every agent edge
    flat_index = np.arange(size).reshape(grid.shape)
    edges = []
    for i in range(grid.n_agents):
        lower = np.take(flat_index, np.arange(grid.shape[i] - 1), axis=i).ravel()
        upper = np.take(flat_index, np.arange(1, grid.shape[i]), axis=i).ravel()
        rows = np.zeros((lower.size, size))
        rows[np.arange(lower.size), lower] = 1.0
        rows[np.arange(lower.size), upper] = -1.0
        edges.append(rows)

    a_ub = np.vstack(edges + [-weighted, weighted])
    b_ub = np.concatenate([
        np.zeros(sum(e.shape[0] for e in edges)),
        -(weighted @ candidate.ravel()),
        weighted @ alpha.ravel(),
    ])
    a_eq = f[None, :]
    b_eq = np.array([float(f @ alpha.ravel())])

    lower_vals = np.empty(size)
    upper_vals = np.empty(size)
    for k in range(size):
        objective = np.zeros(size)
        for sign, target in ((1.0, lower_vals), (-1.0, upper_vals)):
            objective[k] = sign
            res = linprog(objective, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                          bounds=[(None, None)] * size, method="highs")
            if res.status != 0:
                raise LPFailure(f"Minimality LP failed at profile {k}: {res.message}")
            target[k] = sign * res.fun
    ranges = MinimalityRanges(
        lower=lower_vals.reshape(grid.shape),
        upper=upper_vals.reshape(grid.shape),
        candidate=candidate,
    )
    logger.debug(f"Minimality ranges computed for {size} profiles")
    return ranges
