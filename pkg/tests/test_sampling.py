"""Tests for operating-condition sampling and labeling campaigns."""

import numpy as np
import pytest

from fcuc import dynamics, mlp, sampling
from fcuc.grid import bundled_case_path, load_case


@pytest.fixture(scope="module")
def case():
    return load_case(bundled_case_path("case6_wind.json"))


# ------------------------------------------------------------ injections

def test_sample_injections_shapes_and_bounds(case):
    n = 500
    batch = sampling.sample_injections(case, n, seed=7)
    ng = case.n_gens
    assert batch.u.shape == (n, ng)
    assert batch.p_mw.shape == (n, ng)
    assert batch.load_mw.shape == (n,)
    assert batch.wind_mw.shape == (n,)
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])
    # off units carry nothing, committed units stay inside their range
    assert np.all(batch.p_mw[~batch.u] == 0.0)
    on = batch.u
    assert np.all(batch.p_mw[on] >= p_min[np.where(on)[1]] - 1e-9)
    assert np.all(batch.p_mw[on] <= p_max[np.where(on)[1]] + 1e-9)
    assert np.all(batch.load_mw >= 0.0)
    caps = sum(w.capacity for w in case.wind)
    assert np.all(batch.wind_mw >= 0.0) and np.all(batch.wind_mw <= caps + 1e-9)


def test_sample_injections_balances_when_fleet_can(case):
    batch = sampling.sample_injections(case, 800, seed=3)
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])
    floor = batch.u @ p_min
    ceil = batch.u @ p_max
    residual = batch.residual_mw
    # where the committed fleet brackets the residual the dispatch matches it
    inside = (residual >= floor) & (residual <= ceil) & batch.u.any(axis=1)
    assert inside.sum() > 100
    total = batch.p_mw.sum(axis=1)
    assert np.allclose(total[inside], residual[inside], atol=1e-9)
    # outside the bracket the dispatch pins to the nearer fleet limit
    over = residual > ceil
    if over.any():
        assert np.allclose(total[over], ceil[over], atol=1e-9)
    under = (residual < floor) & batch.u.any(axis=1)
    if under.any():
        assert np.allclose(total[under], floor[under], atol=1e-9)


def test_sample_injections_commit_rate(case):
    batch = sampling.sample_injections(case, 4000, seed=11, p_on=0.7)
    rate = batch.u.mean()
    assert abs(rate - 0.7) < 0.02


def test_sample_injections_deterministic(case):
    a = sampling.sample_injections(case, 64, seed=42)
    b = sampling.sample_injections(case, 64, seed=42)
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.p_mw, b.p_mw)
    assert np.array_equal(a.load_mw, b.load_mw)
    assert np.array_equal(a.wind_mw, b.wind_mw)
    c = sampling.sample_injections(case, 64, seed=43)
    assert not np.array_equal(a.load_mw, c.load_mw)


def test_sample_injections_rejects_bad_count(case):
    with pytest.raises(sampling.SamplingError):
        sampling.sample_injections(case, 0, seed=1)


# -------------------------------------------------------------- features

def test_feature_vectors_and_names(case):
    u = np.array([[1, 0, 1, 0, 1], [0, 0, 0, 0, 0]], dtype=bool)
    p = np.array([[50.0, 0.0, 30.0, 0.0, 20.0], np.zeros(5)])
    trip = np.array([0, -1])
    xf = sampling.nadir_features(u, p, trip)
    xp = sampling.stability_features(u, p, trip)
    ng = case.n_gens
    assert xf.shape == (2, 2 * ng)
    assert xp.shape == (2, 3 * ng)
    # one-hot block holds only the tripped unit's output
    assert xf[0, ng] == 50.0 and np.all(xf[0, ng + 1 :] == 0.0)
    assert np.all(xf[1, ng:] == 0.0)  # no trip, empty block
    assert np.array_equal(xp[:, : 2 * ng], xf)
    assert np.array_equal(xp[0, 2 * ng :], p[0])
    names_f = sampling.feature_names(case, "nadir")
    names_p = sampling.feature_names(case, "stability")
    assert len(names_f) == 2 * ng and len(names_p) == 3 * ng
    assert names_p[: 2 * ng] == names_f
    assert names_f[0].startswith("u_") and names_f[ng].startswith("theta_")
    with pytest.raises(sampling.SamplingError):
        sampling.feature_names(case, "bogus")


def test_entropy_scores_known_values():
    probs = np.array([[0.5, 0.5], [1.0, 0.0], [0.9, 0.1]])
    h = sampling.entropy_scores(probs)
    assert abs(h[0] - np.log(2.0)) < 1e-12
    assert h[1] == 0.0
    expected = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
    assert abs(h[2] - expected) < 1e-12


def test_pick_top_orders_and_breaks_ties_low_id():
    scores = np.array([0.3, 0.9, 0.9, 0.1, 0.9])
    ids = np.array([10, 40, 20, 30, 50])
    sel = sampling.pick_top(scores, ids, 3)
    # three tied maxima resolve toward the lowest ids
    assert list(sel) == [20, 40, 50]
    assert list(sampling.pick_top(scores, ids, 99)) == [20, 40, 50, 10, 30]


def test_band_counts_edges():
    vals = np.array([-3.0, -1.2, -1.0, -0.8, -0.1, -0.05, -4.0, np.nan])
    counts = sampling.band_counts(vals)
    # half-open bands except the last, which closes at -0.1
    assert list(counts) == [1, 1, 1, 2]
    assert sampling.band_labels() == [
        "[-3.0,-1.2)", "[-1.2,-1.0)", "[-1.0,-0.8)", "[-0.8,-0.1]",
    ]


# -------------------------------------------------------------- campaigns

CAMPAIGN_CFG = mlp.TrainConfig(hidden=(8,), epochs=120, lr=3e-3, batch_size=16,
                               val_fraction=0.2, patience=30, seed=0)


@pytest.fixture(scope="module")
def pool(case):
    return sampling.sample_injections(case, 60, seed=5)


def test_random_campaign_bookkeeping(case, pool):
    res = sampling.random_sampling_campaign(
        case, pool, budget=4, iterations=3, seed=9, f_ufls_hz=-1.0,
        horizon_s=10.0,
    )
    assert res.seed_count == 8
    assert res.ids.shape == (8 + 3 * 4,)
    assert len(np.unique(res.ids)) == res.ids.size  # never relabels
    assert res.histograms.shape == (3, 4)
    assert res.classifier is None
    assert 0.0 <= res.roi_fraction <= 1.0
    assert len(res.reason) == res.ids.size
    # labels line up with an independent labeling of the same rows
    redo = dynamics.label_batch(
        case, pool.u[res.ids], pool.p_mw[res.ids], pool.residual_mw[res.ids],
        -1.0, horizon_s=10.0,
    )
    assert np.array_equal(res.stable, redo.stable)
    assert np.array_equal(res.secure, redo.secure)
    nb = res.nadir_hz
    assert np.array_equal(nb[~np.isnan(nb)], redo.nadir_hz[~np.isnan(redo.nadir_hz)])


def test_active_campaign_trains_and_acquires(case, pool):
    res = sampling.active_sampling_campaign(
        case, pool, budget=4, iterations=2, seed=17, f_ufls_hz=-1.0,
        train_cfg=CAMPAIGN_CFG, horizon_s=10.0,
    )
    assert res.classifier is not None
    assert res.classifier.head == "softmax"
    assert res.ids.shape == (8 + 2 * 4,)
    assert len(np.unique(res.ids)) == res.ids.size
    # recompute the ROI share from the returned arrays
    acq = slice(res.seed_count, None)
    in_roi = (
        res.stable[acq]
        & (res.nadir_hz[acq] >= sampling.ROI_BAND[0])
        & (res.nadir_hz[acq] <= sampling.ROI_BAND[1])
    )
    assert res.roi_fraction == pytest.approx(in_roi.sum() / 8)


def test_campaigns_deterministic(case, pool):
    kw = dict(budget=4, iterations=2, seed=23, f_ufls_hz=-1.0, horizon_s=10.0)
    a = sampling.active_sampling_campaign(case, pool, train_cfg=CAMPAIGN_CFG, **kw)
    b = sampling.active_sampling_campaign(case, pool, train_cfg=CAMPAIGN_CFG, **kw)
    assert np.array_equal(a.ids, b.ids)
    assert np.array_equal(a.nadir_hz, b.nadir_hz, equal_nan=True)
    r1 = sampling.random_sampling_campaign(case, pool, **kw)
    r2 = sampling.random_sampling_campaign(case, pool, **kw)
    assert np.array_equal(r1.ids, r2.ids)
    assert np.array_equal(r1.nadir_hz, r2.nadir_hz, equal_nan=True)


def test_campaign_rejects_small_pool(case, pool):
    with pytest.raises(sampling.SamplingError, match="pool"):
        sampling.random_sampling_campaign(
            case, pool, budget=20, iterations=3, seed=1, f_ufls_hz=-1.0,
        )
    with pytest.raises(sampling.SamplingError):
        sampling.random_sampling_campaign(
            case, pool, budget=0, iterations=3, seed=1, f_ufls_hz=-1.0,
        )


# ---------------------------------------------------------------- file IO

def test_pool_jsonl_roundtrip_unlabeled(case, tmp_path):
    batch = sampling.sample_injections(case, 12, seed=2)
    path = tmp_path / "pool.jsonl"
    sampling.save_pool_jsonl(path, batch)
    ids, back, labels = sampling.load_pool_jsonl(path)
    assert labels is None
    assert np.array_equal(ids, np.arange(12))
    assert np.array_equal(back.u, batch.u)
    assert np.array_equal(back.p_mw, batch.p_mw)
    assert np.array_equal(back.load_mw, batch.load_mw)
    assert np.array_equal(back.wind_mw, batch.wind_mw)


def test_pool_jsonl_roundtrip_labeled(case, tmp_path):
    batch = sampling.sample_injections(case, 10, seed=4)
    labels = dynamics.label_batch(
        case, batch.u, batch.p_mw, batch.residual_mw, -1.0, horizon_s=10.0,
    )
    path = tmp_path / "labeled.jsonl"
    sampling.save_pool_jsonl(path, batch, labels)
    _, back, lab = sampling.load_pool_jsonl(path)
    assert lab is not None
    assert np.array_equal(lab.stable, labels.stable)
    assert lab.reason == labels.reason
    assert np.array_equal(lab.secure, labels.secure)
    assert np.array_equal(lab.trip_index, labels.trip_index)
    assert np.array_equal(lab.nadir_hz, labels.nadir_hz, equal_nan=True)


def test_pool_jsonl_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"sample_id": 0}\n')
    with pytest.raises(sampling.SamplingError, match="missing"):
        sampling.load_pool_jsonl(bad)
    worse = tmp_path / "worse.jsonl"
    worse.write_text("not json at all\n")
    with pytest.raises(sampling.SamplingError, match="line 1"):
        sampling.load_pool_jsonl(worse)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(sampling.SamplingError, match="empty"):
        sampling.load_pool_jsonl(empty)


def test_dataset_csv_roundtrip(case, tmp_path):
    batch = sampling.sample_injections(case, 15, seed=8)
    labels = dynamics.label_batch(
        case, batch.u, batch.p_mw, batch.residual_mw, -1.0, horizon_s=10.0,
    )
    path = tmp_path / "dataset.csv"
    ids = np.arange(15)
    sampling.write_dataset_csv(
        path, case, ids, batch.u, batch.p_mw, labels.trip_index,
        labels.stable, labels.reason, labels.nadir_hz, labels.secure,
    )
    data = sampling.read_dataset_csv(path)
    assert np.array_equal(data["ids"], ids)
    assert np.array_equal(data["u"], batch.u.astype(float))
    assert np.array_equal(data["p_mw"], batch.p_mw)
    theta = sampling.trip_onehot_mw(batch.u, batch.p_mw, labels.trip_index)
    assert np.array_equal(data["theta"], theta)
    assert np.array_equal(data["stable"], labels.stable)
    assert data["reason"] == labels.reason
    assert np.array_equal(data["nadir_hz"], labels.nadir_hz, equal_nan=True)
    assert np.array_equal(data["secure"], labels.secure)

    xf, yf = sampling.dataset_screen_xy(data)
    assert xf.shape == (15, 2 * case.n_gens)
    assert np.array_equal(yf, labels.secure.astype(int))
    xp, yp = sampling.dataset_nadir_xy(data)
    assert xp.shape[0] == int(labels.stable.sum())
    assert xp.shape[1] == 2 * case.n_gens
    assert np.all(np.isfinite(yp))
    xs, ys = sampling.dataset_stability_xy(data)
    assert xs.shape == (15, 3 * case.n_gens)
    assert np.array_equal(ys, labels.stable.astype(int))
    band = (-1.2, 0.0)
    xb, yb = sampling.dataset_nadir_xy(data, band=band)
    assert np.all((yb >= band[0]) & (yb <= band[1]))
    assert xb.shape[0] == yb.size


def test_dataset_csv_rejects_other_files(tmp_path):
    path = tmp_path / "junk.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(sampling.SamplingError, match="not a dataset"):
        sampling.read_dataset_csv(path)
    hdr = tmp_path / "only_header.csv"
    hdr.write_text("sample_id,u_G1,theta_G1,p_G1,stable,reason,nadir_hz,secure\n")
    with pytest.raises(sampling.SamplingError, match="no data"):
        sampling.read_dataset_csv(hdr)


def test_histogram_csv_contents(tmp_path):
    hist = np.array([[1, 2, 3, 4], [0, 0, 5, 0]])
    path = tmp_path / "hist.csv"
    sampling.write_histogram_csv(path, hist)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,band,count"
    assert lines[1] == '1,"[-3.0,-1.2)",1'
    assert lines[4] == '1,"[-0.8,-0.1]",4'
    assert lines[7] == '2,"[-1.0,-0.8)",5'
    assert len(lines) == 1 + 8
    assert np.array_equal(sampling.read_histogram_csv(path), hist)
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(sampling.SamplingError, match="histogram"):
        sampling.read_histogram_csv(junk)
