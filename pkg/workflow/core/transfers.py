"""
Transfer fields: non-negative mass moved from each type to the next higher type of
the same agent. Shared by the majorization certificate, ironing and access solvers.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse

from workflow.core.grid import TypeGrid, partial_delta


@dataclass(frozen=True, eq=False)
class TransferField:
    """lambda_i(x) per agent, zero at each agent's top type"""
    fields: Tuple[np.ndarray, ...]

    @classmethod
    def zeros(cls, grid: TypeGrid) -> "TransferField":
        return cls(fields=tuple(np.zeros(grid.shape) for _ in range(grid.n_agents)))

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "TransferField":
        return cls(fields=tuple(np.asarray(a, dtype=float) for a in arrays))

    def __getitem__(self, i: int) -> np.ndarray:
        return self.fields[i]

    def __len__(self) -> int:
        return len(self.fields)

    def sup_norm(self) -> float:
        return max((float(np.max(np.abs(a))) for a in self.fields), default=0.0)

    def in_value_units(self, grid: TypeGrid) -> List[np.ndarray]:
        """lambda / f, the scale the worked examples print on uniform grids"""
        return [a / grid.f for a in self.fields]

    def to_lists(self) -> List[list]:
        return [a.tolist() for a in self.fields]


def divergence(fields: Sequence[np.ndarray]) -> np.ndarray:
    """sum_i lower-delta_i lambda_i"""
    return sum(partial_delta(lam, i, "lower") for i, lam in enumerate(fields))


def top_type_mask(grid: TypeGrid, i: int) -> np.ndarray:
    """True where agent i sits at the highest type"""
    mask = np.zeros(grid.shape, dtype=bool)
    index = [slice(None)] * grid.n_agents
    index[i] = -1
    mask[tuple(index)] = True
    return mask


def top_type_violation(fields: Sequence[np.ndarray], grid: TypeGrid) -> float:
    return max(
        (float(np.max(np.abs(lam[top_type_mask(grid, i)]))) for i, lam in enumerate(fields)),
        default=0.0,
    )


def divergence_operator(grid: TypeGrid) -> Tuple[sparse.csr_matrix, List[Tuple[int, np.ndarray]]]:
    """
    Sparse matrix A with A @ lam_flat = divergence(lam) flattened.

    Columns cover every (agent, profile) pair whose profile is below the agent's top
    type; the second return value lists, per agent, the flat profile indices of
    those columns in order.
    """
    size = grid.size
    flat_index = np.arange(size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    layout = []
    offset = 0
    for i in range(grid.n_agents):
        index = [slice(None)] * grid.n_agents
        index[i] = slice(0, -1)
        lower = flat_index[tuple(index)].ravel()
        index[i] = slice(1, None)
        upper = flat_index[tuple(index)].ravel()
        count = lower.size
        col = offset + np.arange(count)
        rows.extend([lower, upper])
        cols.extend([col, col])
        vals.extend([np.ones(count), -np.ones(count)])
        layout.append((i, lower))
        offset += count
    if offset == 0:
        return sparse.csr_matrix((size, 0)), layout
    matrix = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, offset),
    )
    return matrix, layout


def unpack_columns(solution: np.ndarray, layout: List[Tuple[int, np.ndarray]], grid: TypeGrid) -> TransferField:
    """Scatter a column vector from divergence_operator back into per-agent fields"""
    arrays = [np.zeros(grid.size) for _ in range(grid.n_agents)]
    offset = 0
    for i, lower in layout:
        arrays[i][lower] = solution[offset:offset + lower.size]
        offset += lower.size
    return TransferField.from_arrays([a.reshape(grid.shape) for a in arrays])
