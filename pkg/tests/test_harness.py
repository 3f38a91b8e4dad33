from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from slembed.errors import InvalidArgumentError, ValidationError
from slembed.harness import (
    ExperimentPlan,
    eta_threshold,
    fit_linear,
    kuramoto_vs_sl,
    load_plan,
    plan_from_dict,
    row_seed,
    run_plan,
    twisted_census,
)


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.strip() == "# format_version 1"
        return list(csv.DictReader(fh))


# -- plan validation ----------------------------------------------------------


def test_plan_validation():
    with pytest.raises(ValidationError):
        ExperimentPlan("Nope", {"N": [5]})
    with pytest.raises(ValidationError):
        ExperimentPlan("CoherenceSweep", {})
    with pytest.raises(ValidationError):
        ExperimentPlan("CoherenceSweep", {"N": [5], "J": [1.0]})
    with pytest.raises(ValidationError):
        ExperimentPlan("CoherenceSweep", {"N": [5], "J": [], "sigma": [0.0]})
    with pytest.raises(ValidationError):
        ExperimentPlan("CoherenceSweep", {"N": [5], "J": [1.0], "sigma": [0.0], "epsilon": [0.1]})
    with pytest.raises(ValidationError):
        ExperimentPlan("TwistedCensus", {"N": [5], "neighbor_count": [1]}, realizations=0)
    with pytest.raises(ValidationError):
        ExperimentPlan("TwistedCensus", {"N": [5], "neighbor_count": [1]}, sim={"bogus": 1})
    with pytest.raises(ValidationError):
        ExperimentPlan("KuramotoComparison", {"N": [5], "sigma": [0.1]})


def test_plan_json(tmp_path):
    plan = ExperimentPlan("TwistedCensus", {"N": [8], "neighbor_count": [1]}, 3, 5, {"t_end": 20.0})
    p = tmp_path / "plan.json"
    p.write_text(json.dumps(plan.to_dict()))
    back = load_plan(p)
    assert back.to_dict() == plan.to_dict()
    with pytest.raises(ValidationError, match="extra"):
        plan_from_dict({**plan.to_dict(), "extra": 1})
    with pytest.raises(ValidationError):
        plan_from_dict({**plan.to_dict(), "format_version": 99})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ValidationError):
        load_plan(tmp_path / "bad.json")


def test_row_seed():
    assert row_seed(1, 0, 3) == row_seed(1, 7, 3)
    assert row_seed(1, 0, 3, paired=False) != row_seed(1, 7, 3, paired=False)
    assert row_seed(1, 0, 3) != row_seed(2, 0, 3)
    assert row_seed(1, 0, 3) != row_seed(1, 0, 4)


# -- running ------------------------------------------------------------------


def test_rows_and_aggregates(tmp_path):
    plan = ExperimentPlan(
        "CoherenceSweep", {"N": [4], "J": [0.1, 1.0], "sigma": [0.5]}, realizations=3, output_path=str(tmp_path / "r.csv")
    )
    res = run_plan(plan)
    assert len(res.rows) == 2 * 3
    keys = {(r["_point"], r["_realization"]) for r in res.rows}
    assert len(keys) == 6
    rows = read_csv(tmp_path / "r.csv")
    header = list(rows[0].keys())
    assert header[:5] == ["J", "N", "sigma", "seed", "failed"]
    assert header[5:] == sorted(header[5:])
    agg = read_csv(tmp_path / "r_aggregate.csv")
    assert len(agg) == 2 and "r_complete_mean" in agg[0] and "r_complete_std" in agg[0]
    a = res.aggregate(J=1.0)
    vals = res.column("r_complete", J=1.0)
    assert a["r_complete_mean"] == pytest.approx(vals.mean())
    assert a["r_complete_std"] == pytest.approx(vals.std(ddof=1))


def _strip_runtime(rows):
    return [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]


def test_determinism_and_batching():
    axes = {"N": [5], "J_c": [2.0, 5.0]}
    opts = {"bh_iterations": 10}
    a = run_plan(ExperimentPlan("XYErrorSweep", axes, 4, 11, options=opts))
    b = run_plan(ExperimentPlan("XYErrorSweep", axes, 4, 11, options={**opts, "batch_size": 1}))
    c = run_plan(ExperimentPlan("XYErrorSweep", axes, 4, 11, options=opts), workers=2)
    ra = _strip_runtime(a.rows)
    for other in (b, c):
        rb = _strip_runtime(other.rows)
        assert [r["seed"] for r in ra] == [r["seed"] for r in rb]
        for x, y in zip(ra, rb):
            for k in x:
                if isinstance(x[k], float):
                    assert x[k] == pytest.approx(y[k], rel=1e-10, abs=1e-12)
                else:
                    assert x[k] == y[k]
    assert _strip_runtime(run_plan(ExperimentPlan("XYErrorSweep", axes, 4, 11, options=opts)).rows) == ra


def test_divergence_recorded_not_raised():
    # the harness clamps dt to the stable step, so blow up through the start amplitude instead
    plan = ExperimentPlan(
        "TwistedCensus", {"N": [6], "neighbor_count": [1]}, realizations=2, sim={"init_amplitude": 1e200, "t_end": 10.0}
    )
    res = run_plan(plan)
    assert [r["failed"] for r in res.rows] == [1, 1]
    assert res.aggregates[0]["failed"] == 2


def test_eta_sweep_decreases_with_jc():
    res = run_plan(ExperimentPlan("EtaSweep", {"N": [4], "J_c": [1.0, 5.0, 20.0], "sigma": [0.0]}, 3))
    eta = [a["eta_mean"] for a in res.aggregates]
    n, T = 4, 200
    assert all(0 <= e <= np.sqrt(2 / (n * (n - 1) * T)) for e in eta)
    assert eta[0] >= eta[1] >= eta[2]


def test_xy_error_sweep_columns():
    res = run_plan(
        ExperimentPlan("XYErrorSweep", {"N": [4], "J_c": [10.0]}, 2, options={"bh_iterations": 20, "include_complete": True})
    )
    for col in ("err_unemb", "err_emb", "err_complete", "e_bh", "h_unemb", "h_emb"):
        assert col in res.metric_columns
    assert all(r["e_bh"] < 0 for r in res.rows)


def test_feedback_sweep_runs():
    res = run_plan(
        ExperimentPlan(
            "FeedbackSweep", {"N": [3], "J_c": [5.0], "epsilon": [0.0, 0.04]}, 2,
            sim={"t_end": 30.0}, options={"bh_iterations": 10},
        )
    )
    assert len(res.aggregates) == 2 and "spread_complete_mean" in res.aggregates[0]


# -- analysis helpers ---------------------------------------------------------


def test_eta_threshold_examples():
    jc = np.arange(1, 21, dtype=float)
    assert eta_threshold([(x, 0.3) for x in jc]) is None
    assert eta_threshold([(x, np.exp(-x)) for x in jc]) == 20.0
    knee = [(x, np.exp(-x) if x <= 8 else np.exp(-8)) for x in jc]
    assert eta_threshold(knee) == 8.0
    with pytest.raises(InvalidArgumentError):
        eta_threshold([(1, 1), (2, 1)])
    with pytest.raises(InvalidArgumentError):
        eta_threshold([(1, 1), (1, 1), (2, 1)])


def test_fit_linear():
    pts = [(n, 0.34 * n + 2.39) for n in (5, 10, 15, 20)]
    s, b, r = fit_linear(pts)
    assert s == pytest.approx(0.34, abs=1e-12) and b == pytest.approx(2.39, abs=1e-12) and r < 1e-20
    s, b, r = fit_linear([(1, 2), (3, 7)])
    assert r == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(InvalidArgumentError):
        fit_linear([(5, 1), (5, 2)])


def test_kuramoto_vs_sl_pair():
    out = kuramoto_vs_sl([2], realizations=3, sim={"t_end": 50.0})
    assert out[0]["energy_difference_half_mean"] == pytest.approx(0.0, abs=1e-9)


def test_twisted_census_small():
    hist = twisted_census(4, 1, 10, master_seed=1)
    assert sum(hist.values()) == 10
    assert set(hist) <= {-1, 0, 1}
