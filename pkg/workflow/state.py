"""
Pipeline state for one ironkit instance.
Single source of truth for all data flowing through intake -> solve -> verification -> report.
"""

from typing import Any, Dict, List, Optional, TypedDict

from src.utils.data_models import InstanceBase
from workflow.core.grid import TypeGrid


class SolveState(TypedDict, total=False):
    """
    Complete state for one solve.
    All data flows through this state as it passes between nodes.
    """
    # Input data
    source: str
    instance_text: Any
    overrides: Dict[str, Any]
    csv_path: Optional[str]
    timings: bool

    # Node outputs
    instance: Optional[InstanceBase]
    instance_digest: Optional[str]
    grid: Optional[TypeGrid]
    arrays: Dict[str, Any]
    options: Dict[str, Any]
    solution: Dict[str, Any]
    reports: Dict[str, Any]
    verified: Optional[bool]
    result_document: Optional[Dict[str, Any]]
    output_text: Optional[str]

    # Execution metadata
    current_stage: str
    error: Optional[Dict[str, Any]]
    processing_time: Dict[str, float]
    messages: List[str]
    warnings: List[str]
