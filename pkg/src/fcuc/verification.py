"""Closed-loop schedule verification.

Every scheduled period is re-simulated under the loss of its largest
committed unit, using the same dynamics surrogate that labeled the
training data.  The circularity is deliberate: the check measures the
pipeline's self-consistency (commitments the networks promised to be
secure really are, under the labeling oracle), not fidelity to a
higher-order simulator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics, mlp
from .grid import GridCase
from .ucmodel import Schedule


class VerificationError(ValueError):
    """Raised for malformed inputs or mismatched comparisons."""


@dataclass
class VerificationRow:
    period: int
    predicted_nadir_hz: float | None  # None when the schedule carries none
    simulated_nadir_hz: float  # NaN exactly when the period is not stable
    status: str  # "ok" | "numeric-failure" | "capacity-deficit"
    secure: bool  # stable and nadir at or above the threshold
    trip_gen: str  # name of the tripped unit, "" if nothing committed


@dataclass
class VerificationSummary:
    rows: list[VerificationRow]
    f_ufls_hz: float
    n_secure: int
    n_unstable: int
    max_abs_error_hz: float | None  # over stable periods with predictions
    metrics: dict | None  # same code path as training metrics


def verify_schedule(
    case: GridCase,
    schedule: Schedule,
    f_ufls_hz: float,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
) -> VerificationSummary:
    """Simulate the worst-case trip for every period of a schedule."""
    u = np.asarray(schedule.u, dtype=bool)
    p = np.asarray(schedule.dispatch_mw, dtype=float)
    if u.shape != p.shape or u.shape[1] != case.n_gens:
        raise VerificationError(
            f"schedule shape {u.shape} does not fit a {case.n_gens}-generator case"
        )
    residual = p.sum(axis=1)  # balanced schedules carry load minus wind
    labels = dynamics.label_batch(
        case, u, p, residual, f_ufls_hz, horizon_s=horizon_s, dt_s=dt_s
    )
    preds = schedule.predicted_nadir_hz
    rows = []
    for t in range(u.shape[0]):
        trip = int(labels.trip_index[t])
        rows.append(
            VerificationRow(
                period=t,
                predicted_nadir_hz=None if preds is None else float(preds[t]),
                simulated_nadir_hz=float(labels.nadir_hz[t]),
                status=labels.reason[t],
                secure=bool(labels.secure[t]),
                trip_gen=case.generators[trip].name if trip >= 0 else "",
            )
        )
    metrics = None
    max_err = None
    if preds is not None and labels.stable.any():
        sim = labels.nadir_hz[labels.stable]
        pred = np.asarray(preds, dtype=float)[labels.stable]
        metrics = mlp.regression_metrics(sim, pred)
        max_err = metrics["max_e"]
    return VerificationSummary(
        rows=rows,
        f_ufls_hz=f_ufls_hz,
        n_secure=int(labels.secure.sum()),
        n_unstable=int((~labels.stable).sum()),
        max_abs_error_hz=max_err,
        metrics=metrics,
    )


# ------------------------------------------------------------------ file IO

def write_verification_csv(summary: VerificationSummary, path: str | Path) -> None:
    """Table layout: one row per period, NA marks unstable periods."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "pred_nadir_hz", "sim_nadir_hz", "status",
                    "secure", "trip_gen"])
        for r in summary.rows:
            pred = "" if r.predicted_nadir_hz is None else repr(r.predicted_nadir_hz)
            sim = "NA" if np.isnan(r.simulated_nadir_hz) else repr(r.simulated_nadir_hz)
            w.writerow([r.period, pred, sim, r.status, int(r.secure), r.trip_gen])


def read_verification_csv(path: str | Path) -> list[VerificationRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["period", "pred_nadir_hz", "sim_nadir_hz"]:
        raise VerificationError(f"{path}: not a verification table")
    out = []
    for r in rows[1:]:
        out.append(
            VerificationRow(
                period=int(r[0]),
                predicted_nadir_hz=None if r[1] == "" else float(r[1]),
                simulated_nadir_hz=float("nan") if r[2] == "NA" else float(r[2]),
                status=r[3],
                secure=r[4] == "1",
                trip_gen=r[5],
            )
        )
    return out


# ------------------------------------------------------------- run compare

@dataclass
class RunRecord:
    """A named schedule plus its verification, ready for comparison."""

    name: str
    schedule: Schedule
    verification: VerificationSummary


def compare_runs(a: RunRecord, b: RunRecord) -> list[tuple[str, str, str]]:
    """Side-by-side table rows (metric, value_a, value_b)."""
    if a.schedule.periods != b.schedule.periods:
        raise VerificationError(
            f"horizons differ: {a.schedule.periods} vs {b.schedule.periods} periods"
        )

    def money(v: float) -> str:
        return f"{v:.2f}"

    rows = [
        ("objective", money(a.schedule.objective), money(b.schedule.objective)),
        ("fuel_cost", money(a.schedule.cost_fuel), money(b.schedule.cost_fuel)),
        ("fixed_cost", money(a.schedule.cost_fixed), money(b.schedule.cost_fixed)),
        ("startup_cost", money(a.schedule.cost_startup),
         money(b.schedule.cost_startup)),
        ("stability_penalty", money(a.schedule.cost_stability),
         money(b.schedule.cost_stability)),
        ("committed_unit_periods", str(int(a.schedule.u.sum())),
         str(int(b.schedule.u.sum()))),
        ("startups", str(int(a.schedule.startup.sum())),
         str(int(b.schedule.startup.sum()))),
        ("secure_periods", str(a.verification.n_secure),
         str(b.verification.n_secure)),
        ("unstable_periods", str(a.verification.n_unstable),
         str(b.verification.n_unstable)),
    ]
    ea = a.verification.max_abs_error_hz
    eb = b.verification.max_abs_error_hz
    rows.append(
        ("max_pred_error_hz",
         "NA" if ea is None else f"{ea:.6f}",
         "NA" if eb is None else f"{eb:.6f}")
    )
    return rows


def write_comparison_csv(
    rows: list[tuple[str, str, str]], name_a: str, name_b: str, path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", name_a, name_b])
        w.writerows(rows)


def comparison_markdown(
    rows: list[tuple[str, str, str]], name_a: str, name_b: str
) -> str:
    head = f"| metric | {name_a} | {name_b} |"
    sep = "| --- | --- | --- |"
    body = [f"| {m} | {va} | {vb} |" for m, va, vb in rows]
    return "\n".join([head, sep] + body) + "\n"
