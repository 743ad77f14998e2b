import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitstab.errors import NonDecaying, ValidationFailure
from orbitstab.sim import ExperimentPlan, decay_rate, run_plan


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(1e-3, 10.0))
def test_decay_rate_of_exponential(rate, d0):
    t = np.linspace(0, 10 / rate, 401)
    fit = decay_rate(t, d0 * np.exp(-rate * t))
    assert abs(fit.exponent + rate) < 1e-3
    assert fit.r2 > 0.999


def test_decay_rate_ignores_noise_floor():
    t = np.linspace(0, 40, 801)
    d = np.maximum(np.exp(-0.5 * t), 1e-12)
    assert abs(decay_rate(t, d).exponent + 0.5) < 1e-3


def test_decay_rate_rejects_constant():
    with pytest.raises(NonDecaying):
        decay_rate(np.linspace(0, 1, 50), np.ones(50))
    with pytest.raises(NonDecaying):
        decay_rate(np.linspace(0, 1, 50), np.exp(np.linspace(0, 1, 50)))


def test_empty_plan(repro, tmp_path):
    res = run_plan(ExperimentPlan(repro, [], out_dir=str(tmp_path)))
    assert res.runs == []
    assert res.aggregates["n_runs"] == 0
    assert json.loads((tmp_path / "summary.json").read_text())["runs"] == []


def test_plan_validation(repro):
    with pytest.raises(ValidationFailure):
        ExperimentPlan(repro, [[0.0, 0.1]], coords="original")
    with pytest.raises(ValidationFailure):
        ExperimentPlan(repro, [[0.0, 0.1]], coords="polar")
    with pytest.raises(ValidationFailure):
        ExperimentPlan(repro, [[0.0, 0.1]], duration=-1.0)


def test_out_of_tube_is_isolated(repro):
    res = run_plan(ExperimentPlan(repro, [[0.0, 0.9], [0.0, 0.1]], duration=4 * np.pi))
    bad, good = res.runs
    assert bad.status == "failed" and "OutOfTube" in bad.error
    assert good.status == "ok"
    assert res.aggregates["n_failed"] == 1


def test_sweep_converges_and_orders_costs(repro, tmp_path):
    ics = [[0.0, s] for s in (-0.4, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4)]
    plan = ExperimentPlan(repro, ics, feedbacks=("linear", "optimal"), out_dir=str(tmp_path), workers=2)
    res = run_plan(plan)
    assert res.aggregates["n_ok"] == 16
    for r in res.by_feedback("linear"):
        assert r.final_dist < 1e-3 * abs(r.ic[1])
        assert abs(r.decay_exp - repro.closed_loop_exponent) < 0.05
    assert res.aggregates["cost_ordering_violations"] == []
    summary = json.loads((tmp_path / "summary.json").read_text())
    run = summary["runs"][0]
    for key in ("id", "ic", "feedback", "final_dist", "decay_exp", "cost", "status"):
        assert key in run
    assert len(list(tmp_path.glob("run_*.csv"))) == 16


def test_deterministic(repro):
    plan = dict(initial_conditions=[[1.0, 0.2], [2.0, -0.1]], feedbacks=("linear",))
    a = run_plan(ExperimentPlan(repro, **plan)).to_dict()
    b = run_plan(ExperimentPlan(repro, workers=2, **plan)).to_dict()
    assert a == b


def test_original_coordinates_and_custom_feedback(generic):
    zero = ("open", lambda x1, x2: np.zeros(1))
    plan = ExperimentPlan(generic, [[1.2, 0.0]], coords="original", feedbacks=("linear", zero),
                          duration=8 * np.pi)
    res = run_plan(plan)
    lin, opn = res.runs
    assert lin.status == "ok" and lin.decay_exp < -1.0
    # without control the radius never shrinks
    assert opn.status == "failed" and "NonDecaying" in opn.error


def test_probes_recorded(repro):
    res = run_plan(ExperimentPlan(repro, [[0.5, 0.15]], feedbacks=("optimal",), probes=4))
    assert res.runs[0].probe_min_gap >= -1e-9
