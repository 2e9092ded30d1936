import json

import numpy as np

from vecparisi.report import build_report, canonical, config_hash, to_jsonable, write_report


def test_jsonable_handles_numpy_and_nonfinite():
    out = to_jsonable({"a": np.float64(0.1), "b": np.arange(3), "c": np.bool_(True), 2: float("nan")})
    assert out == {"a": 0.1, "b": [0, 1, 2], "c": True, "2": "nan"}


def test_full_precision_round_trip():
    x = 0.1 + 0.2
    assert json.loads(canonical({"x": x}))["x"] == x


def test_canonical_is_key_order_independent():
    assert canonical({"b": 1, "a": [1.5]}) == canonical({"a": [1.5], "b": 1})
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_report_embeds_config_and_versions(tmp_path):
    rep = build_report("eval-psi", {"seed": 3}, {"psi": 0.0})
    assert rep["config"] == {"seed": 3} and "numpy" in rep["versions"]
    write_report(tmp_path / "r" / "x.json", rep)
    assert json.loads((tmp_path / "r" / "x.json").read_text())["result"] == {"psi": 0.0}
