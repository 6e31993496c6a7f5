"""
Result formatting: grid payloads, per-mode output sections and CSV plot rows.
"""

from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from workflow.core.access import AccessResult
from workflow.core.continuum import LevelSolution
from workflow.core.grid import TypeGrid
from workflow.core.iron import IroningResult, Partition
from workflow.core.mech import MechanismOutcome
from workflow.core.transfers import TransferField


def grid_payload(values: np.ndarray) -> Dict[str, Any]:
    """Shape header plus values in canonical row-major order"""
    values = np.asarray(values, dtype=float)
    return {"shape": list(values.shape), "values": values.ravel(order="C").tolist()}


def grid_from_payload(payload: Dict[str, Any]) -> np.ndarray:
    return np.asarray(payload["values"], dtype=float).reshape(payload["shape"])


def transfers_payload(transfers: TransferField, grid: TypeGrid) -> List[Dict[str, Any]]:
    """Per-agent transfer fields in value units (lambda / f)"""
    return [grid_payload(field) for field in transfers.in_value_units(grid)]


def partition_payload(partition: Optional[Partition]) -> Optional[Dict[str, Any]]:
    return None if partition is None else partition.to_dict()


def format_ironing(result: IroningResult, grid: TypeGrid) -> Dict[str, Any]:
    return {
        "alpha_bar": grid_payload(result.alpha_bar),
        "transfers": transfers_payload(result.transfers, grid),
        "partition": partition_payload(result.partition),
    }


def ironing_diagnostics(result: IroningResult) -> Dict[str, Any]:
    return {
        "objective": result.objective,
        "sweeps": result.sweeps,
        "stop_reason": result.stop_reason,
        "phi": result.phi,
        "kkt": dict(result.kkt),
    }


def format_access(result: AccessResult, grid: TypeGrid) -> Dict[str, Any]:
    return {
        "alphas_tilde": [grid_payload(a) for a in result.alphas_tilde],
        "transfers": transfers_payload(result.transfers, grid),
        "q": grid_payload(result.q_star),
        "eta": [grid_payload(e) for e in result.eta],
        "partition": partition_payload(result.partition),
        "eta_intervals": list(result.eta_intervals),
    }


def format_mechanism(outcome: MechanismOutcome, grid: TypeGrid) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "q": grid_payload(outcome.q),
        "transfers_paid": [grid_payload(t) for t in outcome.transfers],
        "profit": outcome.profit,
        "profit_virtual": outcome.profit_virtual,
    }
    if outcome.kind == "goods":
        payload["eta"] = [grid_payload(e) for e in outcome.eta]
        payload["marginal_revenues"] = [grid_payload(v) for v in outcome.virtual_values]
    else:
        payload["marginal_cost"] = grid_payload(outcome.virtual_values)
    if outcome.ironing is not None:
        payload["ironing"] = format_ironing(outcome.ironing, grid)
    if outcome.access is not None:
        payload["access"] = format_access(outcome.access, grid)
    return payload


def format_levels(solutions: Sequence[LevelSolution]) -> List[Dict[str, Any]]:
    return [
        {
            "level": s.level,
            "points": [axis.points.tolist() for axis in s.grid.axes],
            "alpha": grid_payload(s.alpha),
            "alpha_bar": grid_payload(s.result.alpha_bar),
        }
        for s in solutions
    ]


def profile_frame(grid: TypeGrid, columns: Dict[str, np.ndarray],
                  labels: Optional[np.ndarray] = None) -> pd.DataFrame:
    """One row per profile in canonical order: indices, coordinates, then the given columns"""
    index = np.array(grid.profiles(), dtype=int).reshape(grid.size, grid.n_agents)
    data: Dict[str, Any] = {}
    for i in range(grid.n_agents):
        data[f"i{i}"] = index[:, i]
    for i, coords in enumerate(grid.mesh()):
        data[f"x{i}"] = coords.ravel()
    for name, values in columns.items():
        data[name] = np.asarray(values, dtype=float).ravel()
    if labels is not None:
        data["cell"] = np.asarray(labels, dtype=int).ravel()
    return pd.DataFrame(data)


def write_csv(frame: pd.DataFrame, path: str, float_format: str = "%.17g") -> None:
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
