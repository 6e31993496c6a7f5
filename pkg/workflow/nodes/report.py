"""
Report node: assembles the result document, renders it deterministically and
writes the optional CSV plot rows.
"""

import logging
from datetime import datetime
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.utils import settings
from src.utils.data_models import ResultDocument
from src.utils.json_helper import render_json
from workflow.core.formatters import (
    format_access,
    format_ironing,
    format_levels,
    format_mechanism,
    grid_payload,
    ironing_diagnostics,
    profile_frame,
    write_csv,
)
from workflow.nodes import record_error

logger = logging.getLogger(__name__)


def _iron_sections(state: Dict[str, Any]) -> Tuple[Dict, Dict, Dict[str, np.ndarray], Optional[np.ndarray]]:
    solution, grid = state["solution"], state["grid"]
    result = solution["ironing"]
    outputs = format_ironing(result, grid)
    outputs["q"] = grid_payload(solution["q"])
    outputs["principal_value"] = solution["value"]
    columns = {"alpha": state["arrays"]["alpha"], "alpha_bar": result.alpha_bar, "q": solution["q"]}
    return outputs, ironing_diagnostics(result), columns, result.partition.labels if result.partition else None


def _access_sections(state: Dict[str, Any]):
    solution, grid = state["solution"], state["grid"]
    result = solution["access"]
    outputs = format_access(result, grid)
    outputs["objective"] = result.objective
    outputs["no_access"] = {"alpha_bar": grid_payload(solution["baseline"].alpha_bar),
                            "objective": solution["baseline_value"]}
    diagnostics = {"sweeps": result.sweeps, "negative_entries": result.negative_entries}
    columns: Dict[str, np.ndarray] = {"q": result.q_star}
    for i, (alpha, tilde, eta) in enumerate(zip(result.alphas, result.alphas_tilde, result.eta)):
        columns[f"alpha_{i}"] = alpha
        columns[f"alpha_tilde_{i}"] = tilde
        columns[f"eta_{i}"] = eta
    return outputs, diagnostics, columns, result.partition.labels


def _mechanism_sections(state: Dict[str, Any]):
    solution, grid = state["solution"], state["grid"]
    outcome = solution["mechanism"]
    outputs = format_mechanism(outcome, grid)
    columns: Dict[str, np.ndarray] = {"q": outcome.q}
    labels = None
    if outcome.ironing is not None:
        diagnostics = ironing_diagnostics(outcome.ironing)
        columns["alpha"] = outcome.ironing.alpha
        columns["alpha_bar"] = outcome.ironing.alpha_bar
        labels = outcome.ironing.partition.labels if outcome.ironing.partition else None
    else:
        diagnostics = {"sweeps": outcome.access.sweeps, "negative_entries": outcome.access.negative_entries}
        labels = outcome.access.partition.labels
    for i, eta in enumerate(outcome.eta):
        columns[f"eta_{i}"] = eta
    for i, t in enumerate(outcome.transfers):
        columns[f"t_{i}"] = t
    return outputs, diagnostics, columns, labels


def _sosd_sections(state: Dict[str, Any]):
    solution = state["solution"]
    outputs: Dict[str, Any] = {
        "g_bar": grid_payload(solution["g_bar"]),
        "f_bar": grid_payload(solution["f_bar"]),
        "first_order": solution["first_order"].to_dict(),
        "second_order": solution["second_order"].to_dict(),
    }
    if "factorization" in solution:
        outputs["factorization"] = solution["factorization"].to_dict()
    columns = {"g": solution["g"].pmf, "f": solution["f"].pmf,
               "g_bar": solution["g_bar"], "f_bar": solution["f_bar"]}
    return outputs, {}, columns, None


def _dyadic_sections(state: Dict[str, Any]):
    solution = state["solution"]
    finest = solution["finest"]
    outputs = format_ironing(finest.result, finest.grid)
    outputs["level"] = finest.level
    outputs["points"] = [axis.points.tolist() for axis in finest.grid.axes]
    outputs["alpha"] = grid_payload(finest.alpha)
    if solution["convergence"]:
        outputs["convergence"] = list(solution["convergence"])
        outputs["levels"] = format_levels(solution["levels"][:-1])
    columns = {"alpha": finest.alpha, "alpha_bar": finest.result.alpha_bar}
    labels = finest.result.partition.labels if finest.result.partition else None
    return outputs, ironing_diagnostics(finest.result), columns, labels


SECTIONS = {
    "iron": _iron_sections,
    "access": _access_sections,
    "goods": _mechanism_sections,
    "contract": _mechanism_sections,
    "sosd": _sosd_sections,
    "dyadic": _dyadic_sections,
}


def _certificates(reports: Dict[str, Any]) -> Dict[str, Any]:
    return {name: report.to_dict() for name, report in reports.items()}


def build_result_document(state: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray], Optional[np.ndarray]]:
    instance = state["instance"]
    outputs, diagnostics, columns, labels = SECTIONS[instance.mode](state)
    if state.get("timings"):
        diagnostics["wall_time"] = dict(state["processing_time"])
    document = ResultDocument(
        instance_digest=state["instance_digest"],
        name=instance.name,
        mode=instance.mode,
        status="verified" if state.get("verified") else "unverified",
        outputs=outputs,
        certificates=_certificates(state.get("reports", {})),
        diagnostics=diagnostics,
        warnings=list(state.get("warnings", [])),
    )
    return document.model_dump(), columns, labels


def error_document(state: Dict[str, Any]) -> Dict[str, Any]:
    instance = state.get("instance")
    return {
        "version": "ironkit-1",
        "instance_digest": state.get("instance_digest"),
        "name": getattr(instance, "name", None),
        "mode": getattr(instance, "mode", None),
        "status": "error",
        "error": state["error"],
    }


def report_node(state: Dict[str, Any]) -> Dict[str, Any]:
    start_time = datetime.now()
    logger.info(f"=== REPORT NODE STARTED - {state['source']} ===")

    try:
        state["current_stage"] = "report"
        document, columns, labels = build_result_document(state)
        state["result_document"] = document
        state["output_text"] = render_json(document)

        csv_path = state.get("csv_path")
        if csv_path:
            frame = profile_frame(state["grid"], columns, labels)
            write_csv(frame, csv_path, settings.section("cli").get("csv_float_format", "%.17g"))
            logger.info(f"Wrote {len(frame)} CSV rows to {csv_path}")

        processing_time = (datetime.now() - start_time).total_seconds()
        state["processing_time"]["report"] = processing_time
        state["messages"].append(f"Report completed in {processing_time:.2f}s - status {document['status']}")
        logger.info(f"=== REPORT NODE COMPLETED - {processing_time:.2f}s ===")
        return state

    except Exception as e:
        logger.error(f"Error in report node: {str(e)}", exc_info=True)
        return record_error(state, "report", e)
