"""
LangGraph pipeline orchestration for ironkit.
Defines the node execution order and state flow: intake -> solve -> verification -> report.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from langgraph.graph import END, StateGraph

from src.utils import settings
from src.utils.json_helper import render_json
from workflow.core.errors import EXIT_INVARIANT, EXIT_OK
from workflow.nodes.intake import intake_node
from workflow.nodes.report import error_document, report_node
from workflow.nodes.solve import solve_node
from workflow.nodes.verification import verification_node
from workflow.state import SolveState

logger = logging.getLogger(__name__)

NODES: List[Tuple[str, Callable[[Dict[str, Any]], Dict[str, Any]]]] = [
    ("intake", intake_node),
    ("solve", solve_node),
    ("verification", verification_node),
    ("report", report_node),
]


def _next_stage(name: str, following: str) -> Callable[[SolveState], str]:
    def route(state: SolveState) -> str:
        if state.get("error"):
            logger.error(f"Pipeline stopped at {name}: {state['error']['message']}")
            return END
        return following
    return route


def create_workflow():
    """
    Creates the LangGraph workflow for one instance.

    Returns:
        Compiled StateGraph ready for execution
    """
    workflow = StateGraph(SolveState)
    for name, node in NODES:
        workflow.add_node(name, node)

    workflow.set_entry_point(NODES[0][0])
    for (name, _), (following, _) in zip(NODES, NODES[1:]):
        workflow.add_conditional_edges(name, _next_stage(name, following), {following: following, END: END})
    workflow.add_edge(NODES[-1][0], END)
    return workflow.compile()


def initial_state(instance_text: Any, source: str = "instance", overrides: Optional[Dict[str, Any]] = None,
                  csv_path: Optional[str] = None, timings: bool = False) -> SolveState:
    return {
        "source": source,
        "instance_text": instance_text,
        "overrides": dict(overrides or {}),
        "csv_path": csv_path,
        "timings": timings,
        "arrays": {},
        "options": {},
        "solution": {},
        "reports": {},
        "current_stage": "intake",
        "error": None,
        "processing_time": {},
        "messages": [],
        "warnings": [],
    }


def run_pipeline(state: SolveState) -> SolveState:
    """Run the compiled graph; it ends early at the first node that records an error"""
    app = create_workflow()
    return app.invoke(state)


def exit_code(state: SolveState) -> int:
    if state.get("error"):
        return int(state["error"].get("exit_code", EXIT_INVARIANT))
    return EXIT_OK if state.get("verified") else EXIT_INVARIANT


def output_text(state: SolveState) -> str:
    if state.get("error"):
        return render_json(error_document(state))
    return state["output_text"]


def process_instance(instance_text: Any, source: str = "instance", overrides: Optional[Dict[str, Any]] = None,
                     csv_path: Optional[str] = None, timings: bool = False) -> SolveState:
    """
    Entry point for one instance.

    Args:
        instance_text: JSON text, bytes or an already parsed document
        overrides: option values from the command line, applied last

    Returns:
        Final pipeline state; output_text(state) and exit_code(state) give the CLI view
    """
    start_time = datetime.now()
    logger.info(f"Starting pipeline for {source}")
    state = run_pipeline(initial_state(instance_text, source, overrides, csv_path, timings))
    total_time = (datetime.now() - start_time).total_seconds()
    logger.info(f"Pipeline finished for {source} in {total_time:.2f}s with exit code {exit_code(state)}")
    return state


def process_batch(documents: Sequence[Any], overrides: Optional[Dict[str, Any]] = None,
                  timings: bool = False, max_workers: Optional[int] = None) -> List[SolveState]:
    """Solve independent instances concurrently; results keep the input order"""
    workers = max_workers or int(settings.section("cli").get("batch_workers", 4))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [
            executor.submit(process_instance, document, f"batch[{k}]", overrides, None, timings)
            for k, document in enumerate(documents)
        ]
        return [future.result() for future in futures]
