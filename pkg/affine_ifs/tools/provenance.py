import hashlib
import json
import math
from typing import Any

import numpy as np


def _canonical(value: Any) -> Any:
    """Convert nested numpy/pydantic data into JSON-stable primitives."""
    if hasattr(value, "model_dump"):
        return _canonical(value.model_dump())
    if isinstance(value, np.ndarray):
        return _canonical(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return "-inf" if value < 0 else "inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def digest(payload: Any, method: str) -> str:
    """
    Provenance digest: method tag plus a short sha256 of the canonical inputs.
    Identical inputs always give identical digests.
    """
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"))
    return f"{method}:{hashlib.sha256(blob.encode('utf-8')).hexdigest()[:16]}"
