"""Tests for closed-loop schedule verification and run comparison."""

import numpy as np
import pytest

from fcuc import mlp, verification
from fcuc.grid import bundled_case_path, load_case
from fcuc.ucmodel import Schedule


@pytest.fixture(scope="module")
def case():
    return load_case(bundled_case_path("case6_wind.json"))


def _schedule(case, u, p, preds=None, objective=0.0):
    u = np.asarray(u, dtype=int)
    p = np.asarray(p, dtype=float)
    nt = u.shape[0]
    nb = case.n_buses
    return Schedule(
        gen_names=[g.name for g in case.generators],
        bus_ids=list(case.buses),
        u=u,
        dispatch_mw=p,
        reactive_mvar=np.zeros_like(p),
        startup=np.zeros_like(u),
        voltage_pu=np.ones((nt, nb)),
        angle_rad=np.zeros((nt, nb)),
        picked_mw=None,
        predicted_nadir_hz=None if preds is None else np.asarray(preds, float),
        stability_slack=None,
        stability_logits=None,
        cost_fuel=0.0,
        cost_fixed=0.0,
        cost_startup=0.0,
        cost_stability=0.0,
        objective=objective,
    )


def _headroom_dispatch(case, frac):
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])
    return p_min + frac * (p_max - p_min)


def test_abundant_headroom_all_secure(case):
    nt = 4
    u = np.ones((nt, case.n_gens), dtype=int)
    p = np.tile(_headroom_dispatch(case, 0.3), (nt, 1))
    sched = _schedule(case, u, p)
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-2.0)
    assert len(summary.rows) == nt
    assert summary.n_secure == nt
    assert summary.n_unstable == 0
    for r in summary.rows:
        assert r.status == "ok"
        assert r.secure
        assert np.isfinite(r.simulated_nadir_hz)
        # the largest committed output is the tripped unit
        assert r.trip_gen == case.generators[int(np.argmax(p[0]))].name
    # no predictions -> no error statistics
    assert summary.metrics is None and summary.max_abs_error_hz is None


def test_tiny_unit_capacity_deficit(case):
    nt = 2
    u = np.zeros((nt, case.n_gens), dtype=int)
    u[:, -1] = 1  # smallest unit alone
    p = np.zeros((nt, case.n_gens))
    p[:, -1] = case.generators[-1].p_max
    sched = _schedule(case, u, p)
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    assert summary.n_unstable == nt
    assert summary.n_secure == 0
    for r in summary.rows:
        assert r.status == "capacity-deficit"
        assert np.isnan(r.simulated_nadir_hz)
        assert not r.secure


def test_na_iff_unstable(case):
    u = np.ones((2, case.n_gens), dtype=int)
    p = np.vstack(
        [_headroom_dispatch(case, 0.3), np.zeros(case.n_gens)]
    )
    # second period: only the smallest unit committed, at full output
    u[1] = 0
    u[1, -1] = 1
    p[1, -1] = case.generators[-1].p_max
    sched = _schedule(case, u, p)
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    for r in summary.rows:
        assert np.isnan(r.simulated_nadir_hz) == (r.status != "ok")


def test_prediction_metrics_single_code_path(case):
    nt = 3
    u = np.ones((nt, case.n_gens), dtype=int)
    p = np.vstack([_headroom_dispatch(case, f) for f in (0.25, 0.35, 0.45)])
    preds = np.array([-0.4, -0.5, -0.6])
    sched = _schedule(case, u, p, preds=preds)
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    sim = np.array([r.simulated_nadir_hz for r in summary.rows])
    assert np.all(np.isfinite(sim))
    want = mlp.regression_metrics(sim, preds)
    assert summary.metrics == want
    assert summary.max_abs_error_hz == want["max_e"]


def test_verification_deterministic(case):
    nt = 3
    u = np.ones((nt, case.n_gens), dtype=int)
    p = np.vstack([_headroom_dispatch(case, f) for f in (0.3, 0.4, 0.5)])
    sched = _schedule(case, u, p, preds=[-1.5, -1.7, -2.0])
    a = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    b = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    assert a == b


def test_verification_rejects_bad_shape(case):
    u = np.ones((2, case.n_gens + 1), dtype=int)
    p = np.ones((2, case.n_gens + 1))
    sched = _schedule(case, np.ones((2, case.n_gens)), np.ones((2, case.n_gens)))
    sched = Schedule(**{**sched.__dict__, "u": u, "dispatch_mw": p})
    with pytest.raises(verification.VerificationError, match="shape"):
        verification.verify_schedule(case, sched, f_ufls_hz=-1.0)


def test_verification_csv_roundtrip(case, tmp_path):
    u = np.ones((2, case.n_gens), dtype=int)
    p = np.tile(_headroom_dispatch(case, 0.3), (2, 1))
    u[1] = 0
    u[1, -1] = 1
    p[1] = 0.0
    p[1, -1] = case.generators[-1].p_max
    sched = _schedule(case, u, p, preds=[-0.4, -0.9])
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    path = tmp_path / "verify.csv"
    verification.write_verification_csv(summary, path)
    text = path.read_text().splitlines()
    assert text[0] == "period,pred_nadir_hz,sim_nadir_hz,status,secure,trip_gen"
    assert ",NA," in text[2]  # unstable period marked NA
    back = verification.read_verification_csv(path)
    assert len(back) == 2
    assert back[0].period == 0
    assert back[0].predicted_nadir_hz == pytest.approx(-0.4)
    assert back[0].simulated_nadir_hz == pytest.approx(
        summary.rows[0].simulated_nadir_hz
    )
    assert np.isnan(back[1].simulated_nadir_hz)
    assert back[1].status == summary.rows[1].status
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    with pytest.raises(verification.VerificationError, match="verification"):
        verification.read_verification_csv(junk)


def test_compare_runs_identical_and_mismatched(case):
    nt = 3
    u = np.ones((nt, case.n_gens), dtype=int)
    p = np.tile(_headroom_dispatch(case, 0.3), (nt, 1))
    sched = _schedule(case, u, p, objective=1234.5)
    summary = verification.verify_schedule(case, sched, f_ufls_hz=-1.0)
    run = verification.RunRecord("fcuc", sched, summary)
    rows = verification.compare_runs(run, run)
    for metric, va, vb in rows:
        assert va == vb, metric
    names = [r[0] for r in rows]
    assert "objective" in names and "secure_periods" in names

    short = _schedule(case, u[:2], p[:2])
    short_sum = verification.verify_schedule(case, short, f_ufls_hz=-1.0)
    other = verification.RunRecord("uc", short, short_sum)
    with pytest.raises(verification.VerificationError, match="horizons"):
        verification.compare_runs(run, other)


def test_comparison_outputs(case, tmp_path):
    nt = 2
    u = np.ones((nt, case.n_gens), dtype=int)
    p = np.tile(_headroom_dispatch(case, 0.3), (nt, 1))
    sched_a = _schedule(case, u, p, objective=1000.0)
    sum_a = verification.verify_schedule(case, sched_a, f_ufls_hz=-1.0)
    run_a = verification.RunRecord("fcuc", sched_a, sum_a)
    u2 = u.copy()
    u2[:, -1] = 0
    p2 = p.copy()
    p2[:, -1] = 0.0
    sched_b = _schedule(case, u2, p2, objective=900.0)
    sum_b = verification.verify_schedule(case, sched_b, f_ufls_hz=-1.0)
    run_b = verification.RunRecord("uc", sched_b, sum_b)

    rows = verification.compare_runs(run_a, run_b)
    path = tmp_path / "compare.csv"
    verification.write_comparison_csv(rows, "fcuc", "uc", path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,fcuc,uc"
    assert len(lines) == 1 + len(rows)
    committed = dict((r[0], (r[1], r[2])) for r in rows)["committed_unit_periods"]
    assert committed == (str(int(u.sum())), str(int(u2.sum())))

    md = verification.comparison_markdown(rows, "fcuc", "uc")
    assert md.splitlines()[0] == "| metric | fcuc | uc |"
    assert md.splitlines()[1] == "| --- | --- | --- |"
    assert len(md.splitlines()) == 2 + len(rows)
