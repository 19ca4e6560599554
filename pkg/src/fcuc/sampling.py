"""Operating-condition sampling and security-labeling campaigns.

A pool of candidate operating points is drawn first (commitments,
stochastic load and wind, a shared-headroom dispatch).  Labeling a
point means simulating the loss of its largest committed unit and
recording stability, the frequency nadir, and the security flag.

Two campaign styles consume the pool with the same budget:

* active_sampling_campaign trains a small screening classifier on what
  is labeled so far and spends each round's budget on the pool points
  it is least sure about (highest predictive entropy);
* random_sampling_campaign spends the same budget uniformly at random.

The active loop exists to concentrate labels near the security
boundary, which the per-round nadir-band histograms make visible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dynamics, mlp
from .grid import GridCase

NADIR_BANDS = (-3.0, -1.2, -1.0, -0.8, -0.1)
ROI_BAND = (-1.2, -0.8)


class SamplingError(ValueError):
    """Raised for malformed pools or inconsistent inputs."""


@dataclass
class InjectionBatch:
    """Candidate operating points, row-aligned across all arrays."""

    u: np.ndarray  # (n, g) commitment
    p_mw: np.ndarray  # (n, g) dispatch, zero where off
    load_mw: np.ndarray  # (n,) total load
    wind_mw: np.ndarray  # (n,) total wind

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def residual_mw(self) -> np.ndarray:
        return self.load_mw - self.wind_mw


def sample_injections(
    case: GridCase, n: int, seed: int, p_on: float = 0.7, sigma_ratio: float = 0.3
) -> InjectionBatch:
    """Draw n operating points: Bernoulli commitments, noisy load, free wind.

    Load draws are clipped at zero; committed units share the residual by
    a common fraction of their dispatchable range (clamped to the range
    ends when the fleet cannot balance exactly).
    """
    if n <= 0:
        raise SamplingError("need a positive sample count")
    if sigma_ratio < 0:
        raise SamplingError("load sigma ratio must be nonnegative")
    rng = np.random.default_rng(seed)
    ng = case.n_gens
    u = rng.random((n, ng)) < p_on
    nominal = np.array([ld.p_nominal for ld in case.loads])
    loads = np.clip(
        rng.normal(nominal, sigma_ratio * nominal, (n, nominal.size)), 0.0, None
    )
    load_mw = loads.sum(axis=1)
    caps = np.array([w.capacity for w in case.wind])
    if caps.size:
        wind_mw = rng.uniform(0.0, caps, (n, caps.size)).sum(axis=1)
    else:
        wind_mw = np.zeros(n)
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])
    floor = u @ p_min
    span = u @ (p_max - p_min)
    residual = load_mw - wind_mw
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.clip((residual - floor) / span, 0.0, 1.0)
    alpha[~np.isfinite(alpha)] = 0.0
    p_mw = u * (p_min[None, :] + alpha[:, None] * (p_max - p_min)[None, :])
    return InjectionBatch(u, p_mw, load_mw, wind_mw)


# ------------------------------------------------------------------ features

def trip_onehot_mw(u: np.ndarray, p_mw: np.ndarray, trip_index: np.ndarray) -> np.ndarray:
    """One slot per generator holding its pre-trip output if it is the
    tripped unit, zero otherwise."""
    theta = np.zeros_like(np.asarray(p_mw, dtype=float))
    rows = np.flatnonzero(np.asarray(trip_index) >= 0)
    theta[rows, np.asarray(trip_index)[rows]] = p_mw[rows, np.asarray(trip_index)[rows]]
    return theta


def nadir_features(u: np.ndarray, p_mw: np.ndarray, trip_index: np.ndarray) -> np.ndarray:
    """Nadir-regressor input: [commitment, tripped-power one-hot], MW.

    Dispatch is omitted: with headroom guaranteed by the commitment
    problem, the response depends on who is online and what tripped.
    The campaign screening classifier shares this layout.
    """
    theta = trip_onehot_mw(u, p_mw, trip_index)
    return np.concatenate([np.asarray(u, dtype=float), theta], axis=1)


def stability_features(u: np.ndarray, p_mw: np.ndarray, trip_index: np.ndarray) -> np.ndarray:
    """Stability-classifier input: [commitment, tripped-power one-hot,
    dispatch]; the injection pattern drives angle and voltage margins."""
    theta = trip_onehot_mw(u, p_mw, trip_index)
    return np.concatenate(
        [np.asarray(u, dtype=float), theta, np.asarray(p_mw, dtype=float)], axis=1
    )


def feature_names(case: GridCase, kind: str) -> list[str]:
    gens = [g.name for g in case.generators]
    cols = [f"u_{n}" for n in gens] + [f"theta_{n}" for n in gens]
    if kind == "stability":
        cols += [f"p_{n}" for n in gens]
    elif kind != "nadir":
        raise SamplingError(f"unknown feature kind {kind!r}")
    return cols


# --------------------------------------------------------------- acquisition

def entropy_scores(probs: np.ndarray) -> np.ndarray:
    """Predictive entropy per row; zero probability contributes zero."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def pick_top(scores: np.ndarray, ids: np.ndarray, budget: int) -> np.ndarray:
    """Highest-score ids, ties resolved toward the lowest id."""
    order = np.lexsort((ids, -scores))
    return np.asarray(ids)[order[: min(budget, len(order))]]


def band_counts(nadir_hz: np.ndarray) -> np.ndarray:
    """Histogram of stable nadirs over the reporting bands."""
    vals = np.asarray(nadir_hz, dtype=float)
    vals = vals[np.isfinite(vals)]
    counts, _ = np.histogram(vals, bins=NADIR_BANDS)
    return counts


def band_labels() -> list[str]:
    out = []
    for i in range(len(NADIR_BANDS) - 1):
        close = "]" if i == len(NADIR_BANDS) - 2 else ")"
        out.append(f"[{NADIR_BANDS[i]},{NADIR_BANDS[i + 1]}{close}")
    return out


# ----------------------------------------------------------------- campaigns

@dataclass
class CampaignResult:
    ids: np.ndarray  # labeled pool ids, acquisition order (seed first)
    u: np.ndarray
    p_mw: np.ndarray
    trip_index: np.ndarray
    stable: np.ndarray
    reason: list[str]
    nadir_hz: np.ndarray
    secure: np.ndarray
    seed_count: int
    histograms: np.ndarray  # (iterations, bands) stable nadirs per round
    roi_fraction: float  # acquired (post-seed) share landing in ROI_BAND
    classifier: mlp.MlpNetwork | None


DEFAULT_SCREEN_CFG = mlp.TrainConfig(
    hidden=(16,), epochs=300, lr=3e-3, momentum=0.9, batch_size=32,
    val_fraction=0.2, patience=40, seed=0,
)


def _campaign(
    case: GridCase,
    batch: InjectionBatch,
    budget: int,
    iterations: int,
    seed: int,
    f_ufls_hz: float,
    active: bool,
    train_cfg: mlp.TrainConfig | None,
    horizon_s: float,
    dt_s: float,
) -> CampaignResult:
    if budget <= 0 or iterations < 0:
        raise SamplingError("budget must be positive and iterations non-negative")
    if batch.n < 2 * budget + iterations * budget:
        raise SamplingError(
            f"pool of {batch.n} cannot cover 2*{budget} seed plus "
            f"{iterations}*{budget} acquisitions"
        )
    rng = np.random.default_rng(seed)
    cfg = train_cfg if train_cfg is not None else DEFAULT_SCREEN_CFG
    residual = batch.residual_mw
    unlabeled = np.ones(batch.n, dtype=bool)

    taken: list[np.ndarray] = []
    labels: list[dynamics.LabelResult] = []

    def label_ids(ids: np.ndarray) -> dynamics.LabelResult:
        res = dynamics.label_batch(
            case, batch.u[ids], batch.p_mw[ids], residual[ids], f_ufls_hz,
            horizon_s, dt_s,
        )
        taken.append(ids)
        labels.append(res)
        unlabeled[ids] = False
        return res

    seed_ids = np.sort(
        rng.choice(np.flatnonzero(unlabeled), size=2 * budget, replace=False)
    )
    label_ids(seed_ids)

    histograms = np.zeros((iterations, len(NADIR_BANDS) - 1), dtype=int)
    classifier = None
    for it in range(iterations):
        pool_ids = np.flatnonzero(unlabeled)
        if active:
            x_l = nadir_features(
                np.concatenate([batch.u[t] for t in taken]),
                np.concatenate([batch.p_mw[t] for t in taken]),
                np.concatenate([r.trip_index for r in labels]),
            )
            y_l = np.concatenate([r.secure for r in labels]).astype(int)
            classifier = mlp.train_classifier(
                x_l, y_l, replace(cfg, seed=seed * 1000 + it)
            )
            trips_u = dynamics.select_trip(batch.u[pool_ids], batch.p_mw[pool_ids])
            x_u = nadir_features(batch.u[pool_ids], batch.p_mw[pool_ids], trips_u)
            scores = entropy_scores(mlp.mlp_forward(classifier, x_u))
            sel = np.sort(pick_top(scores, pool_ids, budget))
        else:
            sel = np.sort(rng.choice(pool_ids, size=budget, replace=False))
        res = label_ids(sel)
        histograms[it] = band_counts(res.nadir_hz[res.stable])

    ids = np.concatenate(taken)
    stable = np.concatenate([r.stable for r in labels])
    nadir = np.concatenate([r.nadir_hz for r in labels])
    acquired = ids.size - seed_ids.size
    in_roi = (
        stable[seed_ids.size :]
        & (nadir[seed_ids.size :] >= ROI_BAND[0])
        & (nadir[seed_ids.size :] <= ROI_BAND[1])
    )
    return CampaignResult(
        ids=ids,
        u=batch.u[ids],
        p_mw=batch.p_mw[ids],
        trip_index=np.concatenate([r.trip_index for r in labels]),
        stable=stable,
        reason=[s for r in labels for s in r.reason],
        nadir_hz=nadir,
        secure=np.concatenate([r.secure for r in labels]),
        seed_count=int(seed_ids.size),
        histograms=histograms,
        roi_fraction=float(in_roi.sum() / acquired) if acquired else 0.0,
        classifier=classifier,
    )


def active_sampling_campaign(
    case: GridCase,
    batch: InjectionBatch,
    budget: int,
    iterations: int,
    seed: int,
    f_ufls_hz: float,
    train_cfg: mlp.TrainConfig | None = None,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
) -> CampaignResult:
    """Entropy-guided labeling; see the module docstring."""
    return _campaign(case, batch, budget, iterations, seed, f_ufls_hz, True,
                     train_cfg, horizon_s, dt_s)


def random_sampling_campaign(
    case: GridCase,
    batch: InjectionBatch,
    budget: int,
    iterations: int,
    seed: int,
    f_ufls_hz: float,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
) -> CampaignResult:
    """Uniform labeling baseline with the same budget and bookkeeping."""
    return _campaign(case, batch, budget, iterations, seed, f_ufls_hz, False,
                     None, horizon_s, dt_s)


# ------------------------------------------------------------------ file IO

def save_pool_jsonl(
    path: str | Path,
    batch: InjectionBatch,
    labels: dynamics.LabelResult | None = None,
    ids: np.ndarray | None = None,
) -> None:
    """One JSON object per line; label fields are null until labeled."""
    ids = np.arange(batch.n) if ids is None else np.asarray(ids)
    with open(path, "w") as fh:
        for k in range(batch.n):
            rec = {
                "sample_id": int(ids[k]),
                "u": [int(v) for v in batch.u[k]],
                "p_mw": [float(v) for v in batch.p_mw[k]],
                "load_mw": float(batch.load_mw[k]),
                "wind_mw": float(batch.wind_mw[k]),
                "stable": None,
                "reason": None,
                "nadir_hz": None,
                "secure": None,
                "trip_index": None,
            }
            if labels is not None:
                nad = float(labels.nadir_hz[k])
                rec.update(
                    stable=bool(labels.stable[k]),
                    reason=labels.reason[k],
                    nadir_hz=None if np.isnan(nad) else nad,
                    secure=bool(labels.secure[k]),
                    trip_index=int(labels.trip_index[k]),
                )
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_pool_jsonl(
    path: str | Path,
) -> tuple[np.ndarray, InjectionBatch, dynamics.LabelResult | None]:
    recs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                recs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SamplingError(f"{path}: line {lineno}: {exc.msg}") from None
    if not recs:
        raise SamplingError(f"{path}: empty pool")
    need = {"sample_id", "u", "p_mw", "load_mw", "wind_mw"}
    for lineno, rec in enumerate(recs, start=1):
        missing = need - rec.keys()
        if missing:
            raise SamplingError(f"{path}: line {lineno}: missing {sorted(missing)}")
    ids = np.array([r["sample_id"] for r in recs])
    batch = InjectionBatch(
        u=np.array([r["u"] for r in recs], dtype=bool),
        p_mw=np.array([r["p_mw"] for r in recs], dtype=float),
        load_mw=np.array([r["load_mw"] for r in recs], dtype=float),
        wind_mw=np.array([r["wind_mw"] for r in recs], dtype=float),
    )
    if all(r.get("stable") is None for r in recs):
        return ids, batch, None
    labels = dynamics.LabelResult(
        stable=np.array([bool(r["stable"]) for r in recs]),
        reason=[r["reason"] for r in recs],
        nadir_hz=np.array(
            [np.nan if r["nadir_hz"] is None else float(r["nadir_hz"]) for r in recs]
        ),
        secure=np.array([bool(r["secure"]) for r in recs]),
        trip_index=np.array([int(r["trip_index"]) for r in recs]),
    )
    return ids, batch, labels


def write_dataset_csv(
    path: str | Path,
    case: GridCase,
    ids: np.ndarray,
    u: np.ndarray,
    p_mw: np.ndarray,
    trip_index: np.ndarray,
    stable: np.ndarray,
    reason: list[str],
    nadir_hz: np.ndarray,
    secure: np.ndarray,
) -> None:
    """Feature rows plus labels, one line per labeled sample."""
    theta = trip_onehot_mw(u, p_mw, trip_index)
    header = ["sample_id"] + feature_names(case, "stability")
    header += ["stable", "reason", "nadir_hz", "secure"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(ids)):
            row = [int(ids[k])]
            row += [repr(float(v)) for v in u[k].astype(float)]
            row += [repr(float(v)) for v in theta[k]]
            row += [repr(float(v)) for v in p_mw[k]]
            row += [int(stable[k]), reason[k], repr(float(nadir_hz[k])),
                    int(secure[k])]
            w.writerow(row)


def read_dataset_csv(path: str | Path) -> dict:
    """Columns back as arrays; feature blocks identified by prefix."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "sample_id":
        raise SamplingError(f"{path}: not a dataset file")
    header = rows[0]
    ucols = [i for i, h in enumerate(header) if h.startswith("u_")]
    tcols = [i for i, h in enumerate(header) if h.startswith("theta_")]
    pcols = [i for i, h in enumerate(header) if h.startswith("p_")]
    fixed = {name: header.index(name) for name in
             ("sample_id", "stable", "reason", "nadir_hz", "secure")}
    body = rows[1:]
    if not body:
        raise SamplingError(f"{path}: no data rows")
    return {
        "ids": np.array([int(r[fixed["sample_id"]]) for r in body]),
        "u": np.array([[float(r[i]) for i in ucols] for r in body]),
        "theta": np.array([[float(r[i]) for i in tcols] for r in body]),
        "p_mw": np.array([[float(r[i]) for i in pcols] for r in body]),
        "stable": np.array([r[fixed["stable"]] == "1" for r in body]),
        "reason": [r[fixed["reason"]] for r in body],
        "nadir_hz": np.array([float(r[fixed["nadir_hz"]]) for r in body]),
        "secure": np.array([r[fixed["secure"]] == "1" for r in body]),
    }


def dataset_screen_xy(data: dict) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([data["u"], data["theta"]], axis=1)
    return x, data["secure"].astype(int)


def dataset_stability_xy(data: dict) -> tuple[np.ndarray, np.ndarray]:
    """Full feature rows with stable/unstable class labels (all rows)."""
    x = np.concatenate([data["u"], data["theta"], data["p_mw"]], axis=1)
    return x, data["stable"].astype(int)


def dataset_nadir_xy(
    data: dict, band: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stable rows only; optionally restricted to a nadir band."""
    keep = data["stable"] & np.isfinite(data["nadir_hz"])
    if band is not None:
        keep &= (data["nadir_hz"] >= band[0]) & (data["nadir_hz"] <= band[1])
    x = np.concatenate([data["u"], data["theta"]], axis=1)
    return x[keep], data["nadir_hz"][keep]


def write_histogram_csv(path: str | Path, histograms: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "band", "count"])
        for it in range(histograms.shape[0]):
            for b, label in enumerate(band_labels()):
                w.writerow([it + 1, label, int(histograms[it, b])])


def read_histogram_csv(path: str | Path) -> np.ndarray:
    """Counts back as an (iterations, bands) array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["iteration", "band", "count"]:
        raise SamplingError(f"{path}: not a histogram file")
    labels = band_labels()
    n_bands = len(labels)
    body = rows[1:]
    if len(body) % n_bands != 0:
        raise SamplingError(f"{path}: row count not a multiple of {n_bands}")
    out = np.zeros((len(body) // n_bands, n_bands), dtype=int)
    for k, row in enumerate(body):
        it, band, count = int(row[0]) - 1, row[1], int(row[2])
        if not (0 <= it < out.shape[0]) or band != labels[k % n_bands]:
            raise SamplingError(f"{path}: unexpected row {row}")
        out[it, k % n_bands] = count
    return out
