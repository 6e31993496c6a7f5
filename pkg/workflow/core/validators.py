"""
Instance validation: version, mode, document schema and array shapes.
Schema problems are reported with JSON-pointer paths.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from src.utils.data_models import INSTANCE_MODELS, VERSION, InstanceBase
from src.utils.json_helper import parse_json
from workflow.core.errors import SchemaError, VersionError
from workflow.core.grid import TypeGrid, make_grid

logger = logging.getLogger(__name__)


def pointer(loc: Sequence[Any]) -> str:
    """('axes', 0, 'probs') -> /axes/0/probs"""
    return "/" + "/".join(str(part).replace("~", "~0").replace("/", "~1") for part in loc)


def validate_instance(document: Any) -> InstanceBase:
    """Version first, then mode, then the mode's model"""
    if not isinstance(document, dict):
        raise SchemaError("Instance must be a JSON object", path="/")

    version = document.get("version")
    if version != VERSION:
        raise VersionError(f"Unsupported version tag {version!r}, expected {VERSION!r}", path="/version")

    mode = document.get("mode")
    model = INSTANCE_MODELS.get(mode)
    if model is None:
        raise SchemaError(f"Unknown mode {mode!r}; expected one of {', '.join(INSTANCE_MODELS)}", path="/mode")

    try:
        instance = model.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(f"{first['msg']}", path=pointer(first["loc"]),
                          details={"errors": len(e.errors())})

    if instance.requires_axes() and not instance.axes:
        raise SchemaError(f"Mode {mode} needs axes", path="/axes")
    if not instance.requires_axes() and instance.axes:
        raise SchemaError(f"Mode {mode} builds its own grid; axes are not allowed", path="/axes")
    return instance


def parse_instance(text: Any) -> InstanceBase:
    return validate_instance(parse_json(text, source="instance"))


def build_grid(instance: InstanceBase) -> Optional[TypeGrid]:
    if not instance.axes:
        return None
    return make_grid([(axis.points, axis.probs) for axis in instance.axes])


def _as_array(value: Any, path: str, problems: List[Tuple[str, str]]) -> Optional[np.ndarray]:
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        problems.append((path, "not a rectangular numeric array"))
        return None
    if not np.all(np.isfinite(array)):
        problems.append((path, "has non-finite values"))
        return None
    return array


def _expect_grid_shape(value: Any, grid: TypeGrid, path: str,
                       problems: List[Tuple[str, str]]) -> Optional[np.ndarray]:
    array = _as_array(value, path, problems)
    if array is not None and array.shape != grid.shape:
        problems.append((path, f"shape {array.shape} does not match grid shape {grid.shape}"))
        return None
    return array


def _expect_per_agent(values: List[Any], grid: TypeGrid, path: str,
                      problems: List[Tuple[str, str]]) -> List[np.ndarray]:
    if len(values) != grid.n_agents:
        problems.append((path, f"{len(values)} functions for {grid.n_agents} agents"))
        return []
    arrays = [_expect_grid_shape(v, grid, f"{path}/{i}", problems) for i, v in enumerate(values)]
    return [a for a in arrays if a is not None]


def check_instance_shapes(instance: InstanceBase,
                          grid: Optional[TypeGrid]) -> Tuple[bool, List[Tuple[str, str]], Dict[str, Any]]:
    """
    Validate the mode's payload against the grid.

    Returns:
        Tuple of (is_valid, problems as (path, message), arrays keyed by payload name)
    """
    problems: List[Tuple[str, str]] = []
    arrays: Dict[str, Any] = {}
    mode = instance.mode

    if mode == "iron":
        arrays["alpha"] = _expect_grid_shape(instance.alpha, grid, "/alpha", problems)
    elif mode == "access":
        arrays["alphas"] = _expect_per_agent(instance.alphas, grid, "/alphas", problems)
    elif mode == "goods" and instance.values is not None:
        arrays["values"] = _expect_per_agent(instance.values, grid, "/values", problems)
        if instance.marginal_revenues is not None:
            arrays["marginal_revenues"] = _expect_per_agent(instance.marginal_revenues, grid,
                                                            "/marginal_revenues", problems)
    elif mode == "goods":
        spec = instance.continuum
        if len(spec.values) != spec.dimension:
            problems.append(("/continuum/values", f"{len(spec.values)} functions for {spec.dimension} agents"))
        if spec.marginal_revenues is not None and len(spec.marginal_revenues) != spec.dimension:
            problems.append(("/continuum/marginal_revenues",
                             f"{len(spec.marginal_revenues)} functions for {spec.dimension} agents"))
    elif mode == "contract":
        arrays["costs"] = _expect_per_agent(instance.costs, grid, "/costs", problems)
    elif mode == "sosd":
        for key in ("g", "f"):
            array = _expect_grid_shape(getattr(instance.distributions, key), grid, f"/distributions/{key}", problems)
            if array is not None and np.any(array < 0):
                problems.append((f"/distributions/{key}", "has negative masses"))
            arrays[key] = array
    elif mode == "dyadic":
        if instance.densities is not None and len(instance.densities) != instance.dimension:
            problems.append(("/densities", f"{len(instance.densities)} densities for {instance.dimension} axes"))
        levels = instance.options.levels
        if levels is not None and (len(levels) < 2 or levels != sorted(set(levels))):
            problems.append(("/options/levels", "levels must be at least two ascending integers"))

    is_valid = len(problems) == 0
    if not is_valid:
        logger.error(f"Instance shape check failed: {problems}")
    return is_valid, problems, arrays


def require_valid(result: Tuple[bool, List[Tuple[str, str]], Dict[str, Any]]) -> Dict[str, Any]:
    is_valid, problems, arrays = result
    if not is_valid:
        path, message = problems[0]
        raise SchemaError(f"{path} {message}", path=path, details={"problems": len(problems)})
    return arrays
