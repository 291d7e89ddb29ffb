"""Deterministic JSON emission with 17-significant-digit floats.

The stdlib encoder writes floats via repr(), whose digit count varies by
value. Artifact files instead use a fixed %.17g format so that every float
round-trips exactly and re-runs produce byte-identical documents.
"""

import json
import math
import os
import tempfile

import numpy as np


def _fmt_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(obj, parts):
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts)
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, v in enumerate(obj):
            if i:
                parts.append(", ")
            _emit(v, parts)
        parts.append("]")
    elif isinstance(obj, dict):
        parts.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                parts.append(", ")
            parts.append(json.dumps(str(key)))
            parts.append(": ")
            _emit(obj[key], parts)
        parts.append("}")
    else:
        raise TypeError(f"cannot serialize object of type {type(obj).__name__}")


def dumps(obj):
    """Serialize ``obj`` to a canonical JSON string (sorted keys, %.17g floats)."""
    parts = []
    _emit(obj, parts)
    return "".join(parts)


def dump(obj, path):
    """Atomically write ``obj`` as canonical JSON to ``path``."""
    text = dumps(obj)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    """Read a JSON document written by :func:`dump` (plain ``json.load``)."""
    with open(path, "r") as fh:
        return json.load(fh)
