import json
import math

import numpy as np
import pytest

from lpvuq import _jsonio


def test_float_round_trip():
    values = [0.1, 1.0 / 3.0, 1e-308, 1e300, math.pi, -0.0, 2.0**-52]
    text = _jsonio.dumps(values)
    back = json.loads(text)
    assert back == values  # %.17g is lossless for IEEE doubles


def test_sorted_keys_and_stability():
    a = _jsonio.dumps({"b": 1, "a": [1.5, {"z": 2, "y": 3}]})
    b = _jsonio.dumps({"a": [1.5, {"y": 3, "z": 2}], "b": 1})
    assert a == b
    assert a.index('"a"') < a.index('"b"')


def test_numpy_scalars_and_arrays():
    doc = {"m": np.arange(4, dtype=np.float64).reshape(2, 2), "n": np.int64(7)}
    back = json.loads(_jsonio.dumps(doc))
    assert back == {"m": [[0.0, 1.0], [2.0, 3.0]], "n": 7}


def test_non_finite_floats():
    assert _jsonio.dumps([float("nan")]) == "[NaN]"
    assert _jsonio.dumps([float("inf"), float("-inf")]) == "[Infinity, -Infinity]"


def test_dump_load_round_trip(tmp_path):
    path = tmp_path / "doc.json"
    doc = {"x": [1.25, 2.5], "s": "text", "flag": True, "none": None}
    _jsonio.dump(doc, path)
    assert _jsonio.load(path) == doc
    # a second write of the same document is byte-identical
    first = path.read_bytes()
    _jsonio.dump(doc, path)
    assert path.read_bytes() == first


def test_unserializable_type_raises():
    with pytest.raises(TypeError):
        _jsonio.dumps({"bad": object()})
