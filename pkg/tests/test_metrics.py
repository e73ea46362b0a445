import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gflid.metrics import (MetricsError, ScoredRun, assemble_report, compare_support, dumps,
                           load_report, mse, r2, save_report)
from gflid.model import STATE_NAMES
from gflid.sindy import SparseModel


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0, 0], [1, 1]) == 1.0
    assert mse([1, 2, 3], [1.1, 1.9, 3.2]) == pytest.approx((0.01 + 0.01 + 0.04) / 3, rel=1e-12)
    with pytest.raises(MetricsError):
        mse([1, 2], [1])
    with pytest.raises(MetricsError):
        mse([], [])


def test_r2_examples():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)
    assert r2(y, -y) < 0
    with pytest.raises(MetricsError, match="zero-variance"):
        r2([3.0, 3.0], [3.0, 3.0])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(2, 50), elements=finite))
def test_perfect_prediction_scores(y):
    assert mse(y, y) == 0
    if np.sum((y - y.mean()) ** 2) > 0:
        assert r2(y, y) == 1


def _truth():
    names = ["1", "a", "b", "a*b"]
    return SparseModel(names, [[0, 2.0, 0, -1.0], [0.5, 0, 0, 0]], ["x", "y"])


def test_compare_identical():
    rec = compare_support(_truth(), _truth())
    assert (rec.precision, rec.recall, rec.max_rel_error) == (1.0, 1.0, 0.0)


def test_compare_spurious_term():
    m = _truth()
    m.coefficients[0, 2] = 0.3
    rec = compare_support(m, _truth())
    assert rec.precision == pytest.approx(3 / 4) and rec.recall == 1.0
    assert rec.per_target["y"]["precision"] == 1.0


def test_compare_relative_error_and_alignment():
    t = _truth()
    m = SparseModel(list(reversed(t.term_names)), t.coefficients[:, ::-1].copy(), ["x", "y"])
    m.coefficients[0, 0] = -1.001  # a*b
    rec = compare_support(m, t)
    assert rec.max_rel_error == pytest.approx(1e-3, rel=1e-9)
    with pytest.raises(MetricsError):
        compare_support(SparseModel(["1", "a"], [[1, 2]], ["x"]), t)


def _runs(n=40):
    t = np.linspace(0, 1, n)
    truth = {s: np.sin((k + 1) * t) for k, s in enumerate(STATE_NAMES)}
    targets = list(reversed(STATE_NAMES))
    exact = np.column_stack([truth[s] for s in targets])
    a = ScoredRun("sindy", targets, exact, runtime=0.5)
    b = ScoredRun("dsr", ["sigma_p", "p_m"], exact[:, [targets.index("sigma_p"),
                                                      targets.index("p_m")]] + 0.1,
                  runtime=6.0, expressions={"sigma_p": "p_ref - p_m"})
    return [a, b], truth, t


def test_single_perfect_run():
    runs, truth, t = _runs()
    rep = assemble_report(runs[:1], truth, t)
    assert all(r["r2"] == 1.0 for r in rep.records)
    assert rep.runtime_ratio is None


def test_report_order_and_ratio():
    runs, truth, t = _runs()
    rep = assemble_report(runs, truth, t, {"seed": 0})
    assert [r["target"] for r in rep.table("sindy")] == list(STATE_NAMES)
    assert rep.runtime_ratio == pytest.approx(12.0)
    assert rep.score("sigma_p", "dsr") < 1.0
    assert "runtime_ratio" in rep.to_dict()
    assert "runtime" not in rep.to_dict(include_timing=False)


def test_report_files(tmp_path):
    runs, truth, t = _runs()
    rep = assemble_report(runs, truth, t)
    save_report(rep, tmp_path)
    doc = load_report(tmp_path / "report.json")
    assert "runtime" not in doc and "runtime_ratio" not in doc
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["runtime_ratio"] == pytest.approx(12.0)
    # load -> save is byte-identical
    text = (tmp_path / "report.json").read_text()
    assert dumps(doc) == text
    with open(tmp_path / "plot_sigma_p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "y_true", "y_sindy", "y_dsr"]
    assert len(rows) == 41 and float(rows[5][1]) == truth["sigma_p"][4]
    with open(tmp_path / "plot_theta_pll.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "y_true", "y_sindy", "y_dsr"]
        assert next(csv.reader(fh))[3] == ""


def test_non_finite_values_serialize():
    text = dumps({"a": float("inf"), "b": float("nan"), "c": np.float64(2.0)})
    assert json.loads(text) == {"a": "inf", "b": None, "c": 2.0}


def test_empty_runs_rejected():
    with pytest.raises(MetricsError):
        assemble_report([], {}, np.zeros(0))
