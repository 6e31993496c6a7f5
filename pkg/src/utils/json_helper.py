import hashlib
import logging
import math
from typing import Any

import numpy as np
import orjson

from workflow.core.errors import ParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def parse_json(text: Any, source: str = "instance") -> Any:
    """Parse JSON text (str or bytes) with detailed error logging"""
    if isinstance(text, (dict, list)):
        return text
    if text is None or (isinstance(text, (str, bytes)) and not text.strip()):
        logger.warning(f"{source}: Received empty input")
        raise ParseError(f"{source} is empty")

    try:
        logger.debug(f"{source}: Parsing input: {text[:100]!r}...")
        return orjson.loads(text)
    except orjson.JSONDecodeError as e:
        logger.error(f"{source}: JSON parse error: {e}")
        raise ParseError(f"{source} is not valid JSON: {e}", details={"position": e.pos})


def _scalar(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        if value == 0.0:
            return "0"
        return FLOAT_FORMAT % value
    if value is None:
        return "null"
    return orjson.dumps(str(value)).decode()


def _render(value: Any, depth: int, indent: int) -> str:
    if isinstance(value, np.ndarray):
        value = value.tolist()
    pad = " " * (indent * (depth + 1))
    close = " " * (indent * depth)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{_scalar(str(k))}: {_render(v, depth + 1, indent)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        # flat numeric rows stay on one line
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return "[" + ", ".join(_scalar(v) for v in value) + "]"
        items = [f"{pad}{_render(v, depth + 1, indent)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    return _scalar(value)


def render_json(payload: Any, indent: int = 2) -> str:
    """
    Deterministic JSON text: insertion-ordered keys, floats at 17 significant
    digits, so equal payloads always give equal bytes.
    """
    return _render(payload, 0, indent) + "\n"


def canonical_digest(document: Any) -> str:
    """sha256 of the instance with sorted keys and no insignificant whitespace"""
    canonical = orjson.dumps(document, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    return hashlib.sha256(canonical).hexdigest()
