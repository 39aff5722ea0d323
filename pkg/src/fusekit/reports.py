"""Machine (JSON) and human (aligned table) report emission."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj

def dump_json(report: dict, path: str | Path | None) -> str:
    """Serialize a report deterministically (sorted keys, round-trip floats).

    Returns the JSON text; writes it to path when given.
    """
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def render_table(rows: list[tuple], headers: list[str], precision: int = 4) -> str:
    """Right-aligned plain-text table; floats at fixed precision."""
    def fmt(cell):
        if isinstance(cell, (float, np.floating)):
            if math.isnan(float(cell)):
                return "-"
            return f"{float(cell):.{precision}f}"
        return str(cell)

    table = [headers] + [[fmt(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
