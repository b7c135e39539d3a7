import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fdd2d import evaluation, models
from fdd2d.rates import Allocation, evaluate


def test_optimal_passthrough(samples):
    ch, pw = evaluation.baseline_predictions("optimal", samples)
    metrics, se = evaluation.method_metrics(samples, ch, pw)
    assert metrics["channel_accuracy"] == 1.0 and metrics["power_accuracy"] == 1.0
    np.testing.assert_allclose(se, samples.optimal_se / 4, rtol=1e-12)


def test_all_off_scores_zero(samples):
    se = evaluation.se_outcomes(samples, *evaluation.baseline_predictions("off", samples))
    assert se.tolist() == [0.0] * len(samples)
    assert evaluation.zero_rate(se) == 1.0


def test_infeasible_prediction_scores_zero(samples):
    # find a sample where everyone at full power breaks the CUE constraint
    cfg = samples.config
    for s in range(len(samples)):
        alloc = Allocation((0, 0), (7, 7, 7, 7))
        rep = evaluate(samples.csi[s], alloc, cfg)
        if not rep.feasible and rep.sum_due_se > 0:
            se = evaluation.se_outcomes(samples.subset([s]), np.array([[0, 0]]), np.array([[7, 7, 7, 7]]))
            assert se[0] == 0.0
            return
    pytest.fail("fixture has no infeasible full-power sample")


def test_feasible_prediction_scores_mean_se(samples):
    ch, pw = np.array([[1, 0]]), np.array([[2, 0, 0, 0]])
    rep = evaluate(samples.csi[0], Allocation(ch[0], pw[0]), samples.config)
    assert rep.feasible
    se = evaluation.se_outcomes(samples.subset([0]), ch, pw)
    assert se[0] == pytest.approx(rep.sum_due_se / 4, rel=1e-14)


@pytest.mark.parametrize("name", ["erp", "random"])
def test_baselines_dominated_by_optimum(samples, name):
    ch, pw = evaluation.baseline_predictions(name, samples, seed=3)
    se = evaluation.se_outcomes(samples, ch, pw)
    assert np.all(se <= samples.optimal_se / 4 + 1e-12)


def test_model_never_beats_optimum(samples):
    m = models.build_model("fc-dnn", samples.config, models.Hyperparams(hidden=8, blocks=1))
    m.set_stats(samples.stats)
    se = evaluation.model_se_outcomes(m, samples)
    assert np.all(se <= samples.optimal_se / 4 + 1e-12)


def test_unknown_baseline(samples):
    with pytest.raises(ValueError):
        evaluation.baseline_predictions("magic", samples)


def test_zero_rate_and_cdf():
    assert evaluation.zero_rate([0, 1, 0, 2]) == 0.5
    assert evaluation.zero_rate([]) == 0.0
    c = evaluation.cdf([3.0, 1.0, 2.0, 1.0])
    np.testing.assert_array_equal(c, [[1, 0.25], [1, 0.5], [2, 0.75], [3, 1.0]])


@given(st.lists(st.floats(0, 20), min_size=1, max_size=50))
def test_cdf_properties(values):
    c = evaluation.cdf(values)
    assert c.shape == (len(values), 2)
    assert np.all(np.diff(c[:, 0]) >= 0) and np.all(np.diff(c[:, 1]) > 0)
    assert c[-1, 1] == 1.0


def test_report_roundtrip(samples, tmp_path):
    methods = {name: evaluation.method_metrics(samples, *evaluation.baseline_predictions(name, samples))
               for name in ("optimal", "erp")}
    report = evaluation.build_report(samples, methods, {"baseline_seed": 0})
    paths = evaluation.write_report(report, tmp_path / "r.json")
    assert [p.name for p in paths] == ["r.json", "r.txt", "r.optimal.cdf.txt", "r.erp.cdf.txt"]
    back = evaluation.read_report(paths[0])
    assert back == json.loads(json.dumps(report))
    for m in back["methods"].values():
        assert all(v >= 0 for k, v in m.items() if isinstance(v, float))
    rows = evaluation.read_cdf(paths[2])
    assert rows.shape == (len(samples), 2)
    np.testing.assert_array_equal(rows, evaluation.cdf(methods["optimal"][1]))
    assert "optimal" in paths[1].read_text()


def test_read_report_rejects_foreign(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"schema": "other"}')
    with pytest.raises(ValueError):
        evaluation.read_report(p)
    p.write_text('{"schema": "fdd2d.metrics", "schema_version": 9}')
    with pytest.raises(ValueError):
        evaluation.read_report(p)


def test_bench_returns_positive(samples):
    assert evaluation.bench(lambda: sum(range(1000)), repeats=3) > 0
    small = samples.subset(range(3))
    assert evaluation.bench_exhaustive(small, repeats=1) > 0
    assert set(evaluation.environment()) >= {"python", "numpy", "backend"}
