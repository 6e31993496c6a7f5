"""
Pipeline nodes. Each takes the SolveState and returns it updated.
"""

import logging
from typing import Any, Dict

from workflow.core.errors import EXIT_INVARIANT, IronkitError

logger = logging.getLogger(__name__)


def record_error(state: Dict[str, Any], stage: str, error: Exception) -> Dict[str, Any]:
    """Store an exception as {type, message, path, exit_code} and mark the stage failed"""
    if isinstance(error, IronkitError):
        payload = error.to_dict()
    else:
        payload = {"type": type(error).__name__, "message": str(error), "exit_code": EXIT_INVARIANT}
    payload.setdefault("path", None)
    state["error"] = payload
    state["messages"].append(f"ERROR in {stage}: {payload['message']}")
    state["current_stage"] = f"{stage}_error"
    return state
