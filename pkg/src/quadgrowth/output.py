"""Deterministic serialization: JSON with sorted keys and 17-digit floats, CSV tables."""

from __future__ import annotations

import hashlib
import io
import json
import math

import numpy as np

__all__ = ["dumps", "csv_bytes", "fmt", "sha256"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _norm(obj):
    if isinstance(obj, dict):
        return {str(k): _norm(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_norm(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_norm(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _emit(obj, out: list, indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(f"{pad}  {json.dumps(k)}: ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _emit(v, out, 0)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad + "  ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(fmt(obj) if math.isfinite(obj) else "null")
    else:
        out.append(json.dumps(obj, ensure_ascii=False))


def dumps(obj) -> str:
    """JSON text with sorted keys; floats carry 17 significant digits; NaN/inf become null."""
    out: list[str] = []
    _emit(_norm(obj), out, 0)
    return "".join(out) + "\n"


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        cells = []
        for v in r:
            if isinstance(v, (bool, np.bool_)):
                cells.append(str(bool(v)).lower())
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(fmt(v))
            else:
                cells.append(str(v))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue().encode("utf-8")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
