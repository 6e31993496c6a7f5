"""
Discrete product type spaces.
Pure functions over TypeGrid and grid functions (numpy arrays shaped like the grid):
partial differences, monotonicity, expectations and lower-set enumeration.

Profiles are 0-based index tuples; agent 0 is the outermost axis, so the canonical
profile order is numpy's C (row-major) order.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from workflow.core.errors import (
    BadProbs,
    EmptyAxis,
    EmptySubset,
    NonIncreasingPoints,
    ShapeMismatch,
    TooManyLowerSets,
)

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-9
LOWER_SET_CAP = 1_000_000

Profile = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Axis:
    """One agent's ordered types and their probabilities"""
    points: np.ndarray
    probs: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)

    @cached_property
    def cdf(self) -> np.ndarray:
        """F_i(x_i): cumulative probability through each type"""
        return np.cumsum(self.probs)

    @cached_property
    def inverse_hazard(self) -> np.ndarray:
        """(1 - F_i(x_i)) / f_i(x_i), zero at the top type"""
        tail = np.clip(1.0 - self.cdf, 0.0, None)
        tail[-1] = 0.0
        return tail / self.probs


@dataclass(frozen=True, eq=False)
class TypeGrid:
    """Product type space with independent per-agent distributions"""
    axes: Tuple[Axis, ...]

    @property
    def n_agents(self) -> int:
        return len(self.axes)

    @cached_property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.size for axis in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def f(self) -> np.ndarray:
        """Joint probability of every profile"""
        joint = np.ones(())
        for axis in self.axes:
            joint = np.multiply.outer(joint, axis.probs)
        return joint

    def profiles(self) -> List[Profile]:
        return list(np.ndindex(*self.shape))

    def points_of(self, profile: Profile) -> Tuple[float, ...]:
        return tuple(float(axis.points[k]) for axis, k in zip(self.axes, profile))

    def mesh(self) -> List[np.ndarray]:
        """Type coordinates broadcast to the grid shape, one array per agent"""
        return np.meshgrid(*[axis.points for axis in self.axes], indexing="ij")

    def marginal(self, i: int, values: np.ndarray) -> np.ndarray:
        """Broadcast a per-type array of agent i onto the grid"""
        shape = [1] * self.n_agents
        shape[i] = self.shape[i]
        return np.broadcast_to(np.reshape(values, shape), self.shape)


@dataclass(frozen=True, eq=False)
class LowerSet:
    """Downward-closed set of profiles, stored as a boolean membership mask"""
    mask: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def members(self) -> List[Profile]:
        return [tuple(int(k) for k in idx) for idx in np.argwhere(self.mask)]

    def contains(self, profile: Profile) -> bool:
        return bool(self.mask[profile])

    @cached_property
    def frontier(self) -> Tuple[Profile, ...]:
        """Maximal members: no successor along any axis is in the set"""
        maximal = self.mask.copy()
        for axis in range(self.mask.ndim):
            successor_in = np.zeros_like(self.mask)
            head = [slice(None)] * self.mask.ndim
            tail = [slice(None)] * self.mask.ndim
            head[axis] = slice(0, -1)
            tail[axis] = slice(1, None)
            successor_in[tuple(head)] = self.mask[tuple(tail)]
            maximal &= ~successor_in
        return tuple(tuple(int(k) for k in idx) for idx in np.argwhere(maximal))


def make_grid(axes: Sequence[Tuple[Sequence[float], Sequence[float]]],
              prob_tolerance: float = PROB_TOLERANCE) -> TypeGrid:
    """
    Build a TypeGrid from (points, probs) pairs, one per agent.
    Probabilities within prob_tolerance of summing to one are rescaled.
    """
    built = []
    for i, (points, probs) in enumerate(axes):
        points = np.asarray(points, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if points.size == 0:
            raise EmptyAxis(f"Axis {i} has no points", path=f"/axes/{i}/points")
        if not np.all(np.isfinite(points)) or np.any(np.diff(points) <= 0):
            raise NonIncreasingPoints(f"Axis {i} points must be strictly increasing", path=f"/axes/{i}/points")
        if probs.shape != points.shape:
            raise BadProbs(f"Axis {i} has {probs.size} probabilities for {points.size} points", path=f"/axes/{i}/probs")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise BadProbs(f"Axis {i} probabilities must be positive", path=f"/axes/{i}/probs")
        total = float(probs.sum())
        if abs(total - 1.0) > prob_tolerance:
            raise BadProbs(f"Axis {i} probabilities sum to {total}", path=f"/axes/{i}/probs")
        built.append(Axis(points=points, probs=probs / total))
    if not built:
        raise EmptyAxis("A grid needs at least one agent", path="/axes")
    return TypeGrid(axes=tuple(built))


def uniform_grid(shape: Sequence[int]) -> TypeGrid:
    """Grid with types 0..n-1 per agent, uniformly distributed"""
    return make_grid([(np.arange(n, dtype=float), np.full(n, 1.0 / n)) for n in shape])


def check_shape(g: np.ndarray, grid: TypeGrid, name: str = "g") -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != grid.shape:
        raise ShapeMismatch(f"{name} has shape {g.shape}, grid has {grid.shape}", path=f"/{name}")
    return g


def partial_delta(g: np.ndarray, i: int, side: str = "lower") -> np.ndarray:
    """
    Discrete partial difference along agent i.

    lower: g(x) - g(x_i^-), equal to g itself at the lowest type.
    upper: g(x_i^+) - g(x), zero at the highest type.
    """
    g = np.asarray(g, dtype=float)
    if not 0 <= i < g.ndim:
        raise ShapeMismatch(f"Agent index {i} out of range for {g.ndim} agents")
    if side == "lower":
        return np.diff(g, axis=i, prepend=0.0)
    if side == "upper":
        last = np.take(g, [-1], axis=i)
        return np.diff(g, axis=i, append=last)
    raise ValueError(f"Unknown side: {side}")


def mixed_lower_delta(g: np.ndarray) -> np.ndarray:
    """Lower difference along every axis; g(z) is the sum of the result over the box below z"""
    out = np.asarray(g, dtype=float)
    for i in range(out.ndim):
        out = partial_delta(out, i, "lower")
    return out


def line_view(g: np.ndarray, i: int) -> np.ndarray:
    """View with agent i's axis last"""
    return np.moveaxis(np.asarray(g), i, -1)


def is_nondecreasing(g: np.ndarray, tol: float = 0.0) -> bool:
    g = np.asarray(g, dtype=float)
    return all(np.all(np.diff(g, axis=i) >= -tol) for i in range(g.ndim))


def _as_mask(subset: Union[np.ndarray, Iterable[Profile]], shape: Tuple[int, ...]) -> np.ndarray:
    if isinstance(subset, np.ndarray) and subset.dtype == bool:
        return subset
    if isinstance(subset, LowerSet):
        return subset.mask
    mask = np.zeros(shape, dtype=bool)
    for profile in subset:
        mask[tuple(profile)] = True
    return mask


def expectation(g: np.ndarray, grid: TypeGrid,
                subset: Optional[Union[np.ndarray, Iterable[Profile], LowerSet]] = None) -> float:
    """E[g], or E[g | subset] when a subset (mask or profiles) is given"""
    g = check_shape(g, grid)
    f = grid.f
    if subset is None:
        return float(np.sum(f * g))
    mask = _as_mask(subset, grid.shape)
    mass = float(f[mask].sum())
    if mass <= 0:
        raise EmptySubset("Conditional expectation over an empty subset")
    return float(np.sum(f[mask] * g[mask]) / mass)


def lower_closure(mask: np.ndarray) -> np.ndarray:
    """All profiles below some member"""
    out = np.asarray(mask, dtype=bool)
    for axis in range(out.ndim):
        out = np.flip(np.logical_or.accumulate(np.flip(out, axis), axis=axis), axis)
    return out


def upper_closure(mask: np.ndarray) -> np.ndarray:
    """All profiles above some member"""
    out = np.asarray(mask, dtype=bool)
    for axis in range(out.ndim):
        out = np.logical_or.accumulate(out, axis=axis)
    return out


def is_order_convex(mask: np.ndarray) -> bool:
    """True iff x <= e <= y with x, y in the set implies e in the set (ultramodular)"""
    mask = np.asarray(mask, dtype=bool)
    hull = lower_closure(mask) & upper_closure(mask)
    return bool(np.array_equal(hull, mask))


def _enumerate_heights(shape: Tuple[int, ...], cap: int) -> List[Tuple[int, ...]]:
    """
    A lower set is fixed by how many types of the last agent it holds on each
    line; those counts form a non-increasing function of the other agents' profile.
    """
    base_shape = shape[:-1]
    top = shape[-1]
    base_profiles = list(np.ndindex(*base_shape)) if base_shape else [()]
    index = {p: k for k, p in enumerate(base_profiles)}
    predecessors = [
        [index[p[:j] + (p[j] - 1,) + p[j + 1:]] for j in range(len(p)) if p[j] > 0]
        for p in base_profiles
    ]
    heights = [0] * len(base_profiles)
    found: List[Tuple[int, ...]] = []

    def extend(k: int) -> None:
        if k == len(base_profiles):
            found.append(tuple(heights))
            if len(found) > cap:
                raise TooManyLowerSets(
                    f"More than {cap} lower sets on grid {shape}; use the flow-based check instead"
                )
            return
        bound = min((heights[q] for q in predecessors[k]), default=top)
        for value in range(bound + 1):
            heights[k] = value
            extend(k + 1)
        heights[k] = 0

    extend(0)
    return found


def lower_set_matrix(grid_or_shape: Union[TypeGrid, Tuple[int, ...]], cap: int = LOWER_SET_CAP) -> np.ndarray:
    """
    Membership matrix of every lower set, one row per set (flattened canonical order).
    Rows are ordered by size, then by the sorted list of member indices.
    """
    shape = grid_or_shape.shape if isinstance(grid_or_shape, TypeGrid) else tuple(grid_or_shape)
    heights = np.array(_enumerate_heights(shape, cap), dtype=int)
    n_sets = heights.shape[0]
    heights = heights.reshape((n_sets,) + shape[:-1])
    masks = np.arange(shape[-1]) < heights[..., None]
    flat = masks.reshape(n_sets, -1)

    sizes = flat.sum(axis=1)
    keys = sorted(range(n_sets), key=lambda r: (int(sizes[r]), tuple(np.flatnonzero(flat[r]))))
    logger.debug(f"Enumerated {n_sets} lower sets on grid {shape}")
    return flat[keys]


def enumerate_lower_sets(grid: TypeGrid, cap: int = LOWER_SET_CAP) -> List[LowerSet]:
    """Every downward-closed subset exactly once, empty set and full grid included"""
    matrix = lower_set_matrix(grid, cap)
    return [LowerSet(mask=row.reshape(grid.shape)) for row in matrix]


def same_grid(a: TypeGrid, b: TypeGrid, tol: float = 1e-12) -> bool:
    if a.shape != b.shape:
        return False
    return all(
        np.allclose(x.points, y.points, atol=tol, rtol=0) and np.allclose(x.probs, y.probs, atol=tol, rtol=0)
        for x, y in zip(a.axes, b.axes)
    )
