"""
Machine-readable run summaries (JSON).
"""

import json
from pathlib import Path
from typing import Any, Dict

import numpy as np


def to_builtin(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and paths to JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_summary(path, summary: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_builtin(summary), indent=2, sort_keys=True))
    return path


def read_summary(path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text())
