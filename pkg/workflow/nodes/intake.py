"""
Intake node: parses the instance, checks version, schema and shapes,
builds the grid and resolves solver options.
"""

import logging
from datetime import datetime
from typing import Any, Dict

from src.utils.json_helper import canonical_digest, parse_json
from workflow.core.validators import build_grid, check_instance_shapes, require_valid, validate_instance
from workflow.nodes import record_error

logger = logging.getLogger(__name__)


def resolve_options(instance_options: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Instance options, then CLI flags; unset values fall through to the YAML defaults"""
    options = {k: v for k, v in instance_options.items() if v is not None}
    options.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return options


def intake_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    Intake node that turns raw instance text into a validated problem.

    Steps: parse JSON, validate version / mode / schema, digest the canonical
    document, build the grid, check payload shapes, merge options.
    """
    start_time = datetime.now()
    logger.info(f"=== INTAKE NODE STARTED - {state['source']} ===")

    try:
        state["current_stage"] = "intake"

        document = parse_json(state["instance_text"], source=state["source"])
        instance = validate_instance(document)
        state["instance"] = instance
        state["instance_digest"] = canonical_digest(document)
        logger.info(f"Instance {instance.name or state['source']} mode={instance.mode}")

        grid = build_grid(instance)
        state["grid"] = grid
        state["arrays"] = require_valid(check_instance_shapes(instance, grid))
        state["options"] = resolve_options(instance.options.model_dump(), state.get("overrides"))

        processing_time = (datetime.now() - start_time).total_seconds()
        state["processing_time"]["intake"] = processing_time
        shape = grid.shape if grid is not None else "dyadic"
        state["messages"].append(f"Intake completed in {processing_time:.2f}s - mode {instance.mode}, grid {shape}")
        logger.info(f"=== INTAKE NODE COMPLETED - {processing_time:.2f}s ===")
        return state

    except Exception as e:
        logger.error(f"Error in intake node: {str(e)}", exc_info=True)
        return record_error(state, "intake", e)
