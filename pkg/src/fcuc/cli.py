"""Operator-facing pipeline driver.

Stages mirror the offline workflow: draw candidate operating points,
label them with the trip simulator, steer labeling toward the security
boundary, fit the two networks, solve the commitment problem, and close
the loop by re-simulating the schedule.  Every stage is deterministic
given its config, so identical configs reproduce identical files byte
for byte.

Exit codes: 0 success, 2 config error, 3 infeasible model, 4 numeric
failure.  Errors go to standard error prefixed with the stage name.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSIONS, __version__, dynamics, milp, mlp, sampling, ucmodel
from . import verification as verif
from .grid import CaseError, bundled_case_path, load_case, load_forecast

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    """Carries the exit code alongside the operator-facing message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    """Everything a pipeline run depends on; no entropy from the environment."""

    case: str = "case6_wind.json"
    forecast: str = "forecast6_day.csv"
    pool: str = "pool.jsonl"
    dataset: str = "dataset.csv"
    histogram: str = "histogram.csv"
    nadir_model: str = "nadir_model.json"
    stability_model: str = "stability_model.json"
    schedule: str = "schedule.json"
    verification: str = "verification.csv"
    report_dir: str = "report"
    seed: int = 0
    jobs: int = 1
    samples: int = 500
    budget: int = 50
    iterations: int = 10
    p_on: float = 0.7
    sigma_ratio: float = 0.3
    f_ufls_hz: float = -1.0
    margin_hz: float = 0.0
    horizon_s: float = 30.0
    dt_s: float = 0.01
    gamma: float = 1000.0
    hidden: tuple = (16,)
    epochs: int = 3000
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    val_fraction: float = 0.2
    patience: int | None = None
    nadir_band: tuple | None = None
    rel_gap: float = 1e-6
    node_limit: int | None = None
    time_limit_s: float | None = None


def _tuple_ints(value) -> tuple:
    if isinstance(value, str):
        value = value.split(",")
    try:
        out = tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise CliError(EXIT_CONFIG, f"bad layer sizes {value!r}") from None
    if not out or any(v < 1 for v in out):
        raise CliError(EXIT_CONFIG, f"bad layer sizes {value!r}")
    return out


def _band(value) -> tuple:
    if isinstance(value, str):
        value = value.split(",")
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise CliError(EXIT_CONFIG, f"bad band {value!r}") from None
    if not lo < hi:
        raise CliError(EXIT_CONFIG, f"band {value!r} needs low < high")
    return (lo, hi)


def load_config_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"{path}: config must be a JSON object")
    allowed = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise CliError(EXIT_CONFIG, f"{path}: unknown config keys {unknown}")
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    """File values first, command-line flags on top; flags win."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if "hidden" in values:
        values["hidden"] = _tuple_ints(values["hidden"])
    if values.get("nadir_band") is not None:
        values["nadir_band"] = _band(values["nadir_band"])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    def need(ok: bool, what: str):
        if not ok:
            raise CliError(EXIT_CONFIG, what)

    need(cfg.samples > 0, f"samples must be positive, got {cfg.samples}")
    need(cfg.budget > 0, f"budget must be positive, got {cfg.budget}")
    need(cfg.iterations >= 0, f"iterations must be nonnegative, got {cfg.iterations}")
    need(cfg.jobs >= 1, f"jobs must be at least 1, got {cfg.jobs}")
    need(0.0 <= cfg.p_on <= 1.0, f"p_on must lie in [0, 1], got {cfg.p_on}")
    need(cfg.sigma_ratio >= 0.0, f"sigma_ratio must be nonnegative, got {cfg.sigma_ratio}")
    need(cfg.horizon_s > 0.0, f"horizon_s must be positive, got {cfg.horizon_s}")
    need(cfg.dt_s > 0.0, f"dt_s must be positive, got {cfg.dt_s}")
    need(cfg.gamma >= 0.0, f"gamma must be nonnegative, got {cfg.gamma}")
    need(cfg.epochs > 0, f"epochs must be positive, got {cfg.epochs}")
    need(cfg.lr > 0.0, f"lr must be positive, got {cfg.lr}")
    need(cfg.batch_size > 0, f"batch_size must be positive, got {cfg.batch_size}")
    need(0.0 <= cfg.val_fraction < 1.0,
         f"val_fraction must lie in [0, 1), got {cfg.val_fraction}")
    need(cfg.patience is None or cfg.patience > 0,
         f"patience must be positive, got {cfg.patience}")
    need(cfg.margin_hz >= 0.0, f"margin_hz must be nonnegative, got {cfg.margin_hz}")
    need(cfg.rel_gap >= 0.0, f"rel_gap must be nonnegative, got {cfg.rel_gap}")
    need(cfg.node_limit is None or cfg.node_limit > 0,
         f"node_limit must be positive, got {cfg.node_limit}")
    need(cfg.time_limit_s is None or cfg.time_limit_s > 0,
         f"time_limit_s must be positive, got {cfg.time_limit_s}")


def _train_config(cfg: RunConfig) -> mlp.TrainConfig:
    return mlp.TrainConfig(
        hidden=tuple(cfg.hidden),
        epochs=cfg.epochs,
        lr=cfg.lr,
        momentum=cfg.momentum,
        batch_size=cfg.batch_size,
        val_fraction=cfg.val_fraction,
        patience=cfg.patience,
        seed=cfg.seed,
    )


# ------------------------------------------------------------------ loading

def _input_path(path: str, bundled: bool = False) -> Path:
    """Paths resolve literally first, then against the bundled data."""
    p = Path(path)
    if p.exists():
        return p
    if bundled:
        try:
            return bundled_case_path(p.name)
        except CaseError:
            pass
    raise CliError(EXIT_CONFIG, f"missing input file {path!r}")


def _load_case_cfg(cfg: RunConfig):
    try:
        return load_case(_input_path(cfg.case, bundled=True))
    except CaseError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_forecast_cfg(cfg: RunConfig, case):
    try:
        return load_forecast(_input_path(cfg.forecast, bundled=True), case)
    except CaseError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_model_cfg(path: str) -> mlp.MlpNetwork:
    try:
        return mlp.load_model(_input_path(path))
    except mlp.ModelError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


# ------------------------------------------------------------------ stages

def cmd_sample(cfg: RunConfig, args) -> int:
    case = _load_case_cfg(cfg)
    try:
        batch = sampling.sample_injections(
            case, cfg.samples, cfg.seed, cfg.p_on, cfg.sigma_ratio
        )
        sampling.save_pool_jsonl(cfg.pool, batch)
    except (sampling.SamplingError, OSError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(f"sample: wrote {batch.n} operating points to {cfg.pool}")
    return EXIT_OK


def _label_worker(work):
    case, u, p_mw, residual, f_ufls, horizon, dt = work
    return dynamics.label_batch(
        case, u, p_mw, residual, f_ufls, horizon_s=horizon, dt_s=dt
    )


def _label_pool(case, batch, cfg: RunConfig) -> dynamics.LabelResult:
    """Chunked across processes when jobs > 1; merge order is fixed, so
    the result is identical to a serial run."""
    if cfg.jobs <= 1 or batch.n < 2:
        return dynamics.label_batch(
            case, batch.u, batch.p_mw, batch.residual_mw, cfg.f_ufls_hz,
            horizon_s=cfg.horizon_s, dt_s=cfg.dt_s,
        )
    chunks = [s for s in np.array_split(np.arange(batch.n), cfg.jobs) if s.size]
    work = [
        (case, batch.u[s], batch.p_mw[s], batch.residual_mw[s],
         cfg.f_ufls_hz, cfg.horizon_s, cfg.dt_s)
        for s in chunks
    ]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_label_worker, work))
    return dynamics.LabelResult(
        stable=np.concatenate([p.stable for p in parts]),
        reason=[r for p in parts for r in p.reason],
        nadir_hz=np.concatenate([p.nadir_hz for p in parts]),
        secure=np.concatenate([p.secure for p in parts]),
        trip_index=np.concatenate([p.trip_index for p in parts]),
    )


def cmd_label(cfg: RunConfig, args) -> int:
    case = _load_case_cfg(cfg)
    try:
        ids, batch, _ = sampling.load_pool_jsonl(_input_path(cfg.pool))
    except sampling.SamplingError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    labels = _label_pool(case, batch, cfg)
    try:
        sampling.write_dataset_csv(
            cfg.dataset, case, ids, batch.u, batch.p_mw, labels.trip_index,
            labels.stable, labels.reason, labels.nadir_hz, labels.secure,
        )
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(
        f"label: {batch.n} samples, {int(labels.stable.sum())} stable, "
        f"{int(labels.secure.sum())} secure -> {cfg.dataset}"
    )
    return EXIT_OK


def cmd_active_sample(cfg: RunConfig, args) -> int:
    case = _load_case_cfg(cfg)
    try:
        batch = sampling.sample_injections(
            case, cfg.samples, cfg.seed, cfg.p_on, cfg.sigma_ratio
        )
        res = sampling.active_sampling_campaign(
            case, batch, cfg.budget, cfg.iterations, cfg.seed, cfg.f_ufls_hz,
            horizon_s=cfg.horizon_s, dt_s=cfg.dt_s,
        )
        sampling.write_dataset_csv(
            cfg.dataset, case, res.ids, res.u, res.p_mw, res.trip_index,
            res.stable, res.reason, res.nadir_hz, res.secure,
        )
        sampling.write_histogram_csv(cfg.histogram, res.histograms)
    except sampling.SamplingError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except mlp.ModelError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(
        f"active-sample: labeled {res.ids.size} of {batch.n} candidates, "
        f"roi fraction {res.roi_fraction:.4f} -> {cfg.dataset}, {cfg.histogram}"
    )
    return EXIT_OK


def _read_dataset(cfg: RunConfig) -> dict:
    try:
        return sampling.read_dataset_csv(_input_path(cfg.dataset))
    except sampling.SamplingError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def cmd_train_nadir(cfg: RunConfig, args) -> int:
    data = _read_dataset(cfg)
    x, y = sampling.dataset_nadir_xy(data, band=cfg.nadir_band)
    if x.shape[0] < 5:
        raise CliError(EXIT_CONFIG, f"only {x.shape[0]} stable rows; need at least 5")
    try:
        net = mlp.train_regressor(x, y, _train_config(cfg))
    except mlp.ModelError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    metrics = mlp.regression_metrics(y, mlp.mlp_forward(net, x).ravel())
    try:
        mlp.save_model(net, cfg.nadir_model)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(
        f"train-nadir: {x.shape[0]} rows, fit r2 {metrics['r2']:.4f}, "
        f"max err {metrics['max_e']:.4f} Hz -> {cfg.nadir_model}"
    )
    return EXIT_OK


def cmd_train_stability(cfg: RunConfig, args) -> int:
    data = _read_dataset(cfg)
    x, y = sampling.dataset_stability_xy(data)
    if x.shape[0] < 5:
        raise CliError(EXIT_CONFIG, f"only {x.shape[0]} rows; need at least 5")
    try:
        net = mlp.train_classifier(x, y, _train_config(cfg))
    except mlp.ModelError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    acc = mlp.classification_accuracy(net, x, y)
    try:
        mlp.save_model(net, cfg.stability_model)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(
        f"train-stability: {x.shape[0]} rows, fit accuracy {acc:.4f} "
        f"-> {cfg.stability_model}"
    )
    return EXIT_OK


def cmd_solve_uc(cfg: RunConfig, args) -> int:
    case = _load_case_cfg(cfg)
    forecast = _load_forecast_cfg(cfg, case)
    frequency_constrained = getattr(args, "frequency_constrained", False)
    nets = ()
    heur_nets: tuple = (None, None)
    try:
        if frequency_constrained:
            nadir_net = _load_model_cfg(cfg.nadir_model)
            stability_net = _load_model_cfg(cfg.stability_model)
            model = ucmodel.build_fcuc(
                case, forecast, nadir_net, stability_net, cfg.f_ufls_hz,
                cfg.gamma, cfg.margin_hz,
            )
            nets = (nadir_net, stability_net, cfg.gamma)
            heur_nets = (nadir_net, stability_net)
        else:
            model = ucmodel.build_ordinary_uc(case, forecast)
    except ucmodel.UcError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        sol = milp.solve_milp(
            model, rel_gap=cfg.rel_gap, node_limit=cfg.node_limit,
            time_limit=cfg.time_limit_s,
            heuristic=ucmodel.rounding_heuristic(case, forecast, model, *heur_nets),
            branch_priority=ucmodel.branch_priorities(model),
        )
    except milp.NumericalFailure as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    if sol.status in ("infeasible", "unbounded"):
        raise CliError(EXIT_INFEASIBLE, f"model {sol.status}")
    if sol.x is None:
        raise CliError(EXIT_NUMERIC, f"stopped at {sol.status} without an incumbent")
    try:
        schedule = ucmodel.extract_schedule(case, forecast, model, sol, *nets)
    except ucmodel.UcError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    try:
        ucmodel.save_schedule(schedule, cfg.schedule)
        ucmodel.schedule_to_csv(schedule, Path(cfg.schedule).with_suffix(".csv"))
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    if sol.status != "optimal":
        print(
            f"solve-uc: warning: stopped at {sol.status}, gap {sol.gap:.3e}",
            file=sys.stderr,
        )
    kind = "frequency-constrained" if frequency_constrained else "ordinary"
    print(
        f"solve-uc: {kind} {sol.status}, objective {schedule.objective:.2f} "
        f"({sol.nodes} nodes) -> {cfg.schedule}"
    )
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    case = _load_case_cfg(cfg)
    try:
        schedule = ucmodel.load_schedule(_input_path(cfg.schedule))
    except ucmodel.UcError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        summary = verif.verify_schedule(
            case, schedule, cfg.f_ufls_hz, horizon_s=cfg.horizon_s, dt_s=cfg.dt_s
        )
        verif.write_verification_csv(summary, cfg.verification)
    except verif.VerificationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    err = (
        "no predictions"
        if summary.max_abs_error_hz is None
        else f"max nadir error {summary.max_abs_error_hz:.4f} Hz"
    )
    print(
        f"verify: {summary.n_secure}/{len(summary.rows)} periods secure, "
        f"{summary.n_unstable} unstable, {err} -> {cfg.verification}"
    )
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    hist_path = _input_path(cfg.histogram)
    sched_path = _input_path(cfg.schedule)
    ver_path = _input_path(cfg.verification)
    try:
        hist = sampling.read_histogram_csv(hist_path)
        schedule = ucmodel.load_schedule(sched_path)
        rows = verif.read_verification_csv(ver_path)
    except (sampling.SamplingError, ucmodel.UcError, verif.VerificationError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    outdir = Path(cfg.report_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        _report_bands(outdir, hist)
        _report_scatter(outdir, rows)
        _report_gantt(outdir, schedule)
        _report_table(outdir, rows, ver_path)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(f"report: wrote 8 files to {outdir}")
    return EXIT_OK


# ------------------------------------------------------------------ plotting

_PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44",
            "#66ccee", "#aa3377", "#bbbbbb", "#222222")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _svg_doc(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="monospace" font-size="11">'
    )
    bg = f'<rect width="{width}" height="{height}" fill="white"/>'
    return "\n".join([head, bg, *body, "</svg>"]) + "\n"


def _text(x, y, s, anchor="start", size=11, extra="") -> str:
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}" '
        f'font-size="{size}"{extra}>{_esc(str(s))}</text>'
    )


def _line(x1, y1, x2, y2, color="#000000") -> str:
    return (
        f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
        f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="1"/>'
    )


def _rect(x, y, w, h, fill, opacity=None) -> str:
    op = "" if opacity is None else f' fill-opacity="{_fmt(opacity)}"'
    return (
        f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
        f'height="{_fmt(h)}" fill="{fill}"{op}/>'
    )


def _circle(cx, cy, r, fill) -> str:
    return f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{r}" fill="{fill}"/>'


def _report_bands(outdir: Path, hist: np.ndarray) -> None:
    """Grouped bar chart: labeled-sample counts per nadir band, one bar
    color per campaign iteration."""
    sampling.write_histogram_csv(outdir / "bands.csv", hist)
    labels = sampling.band_labels()
    n_it, n_bands = hist.shape
    width, height = 640, 400
    left, right, top, bottom = 60, 160, 40, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    maxc = max(1, int(hist.max()))
    step = max(1, -(-maxc // 5))
    body = [_text(left, 22, "labeled samples per nadir band (Hz)", size=13)]
    body.append(_line(left, top, left, top + plot_h))
    body.append(_line(left, top + plot_h, left + plot_w, top + plot_h))
    for tick in range(0, maxc + step, step):
        y = top + plot_h - plot_h * min(tick, maxc) / maxc
        body.append(_line(left - 4, y, left, y))
        body.append(_text(left - 8, y + 4, str(tick), anchor="end"))
    group_w = plot_w / n_bands
    bar_w = group_w * 0.8 / max(1, n_it)
    for b in range(n_bands):
        gx = left + b * group_w
        body.append(_text(gx + group_w / 2, top + plot_h + 18, labels[b],
                          anchor="middle", size=10))
        for it in range(n_it):
            h = plot_h * hist[it, b] / maxc
            x = gx + group_w * 0.1 + it * bar_w
            body.append(_rect(x, top + plot_h - h, bar_w, h,
                              _PALETTE[it % len(_PALETTE)]))
    for it in range(n_it):
        ly = top + 14 * it
        body.append(_rect(left + plot_w + 12, ly, 10, 10,
                          _PALETTE[it % len(_PALETTE)]))
        body.append(_text(left + plot_w + 26, ly + 9, f"iteration {it + 1}"))
    (outdir / "bands.svg").write_text(_svg_doc(width, height, body))


def _report_scatter(outdir: Path, rows) -> None:
    """Predicted vs simulated nadir with the identity reference line."""
    pts = [
        (r.simulated_nadir_hz, r.predicted_nadir_hz, r.period)
        for r in rows
        if r.predicted_nadir_hz is not None and np.isfinite(r.simulated_nadir_hz)
    ]
    with open(outdir / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "pred_nadir_hz", "sim_nadir_hz"])
        for sim, pred, t in pts:
            w.writerow([t, repr(float(pred)), repr(float(sim))])
    width = height = 480
    left, right, top, bottom = 70, 20, 40, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    body = [_text(left, 22, "predicted vs simulated nadir (Hz)", size=13)]
    if not pts:
        body.append(_text(width / 2, height / 2, "no prediction data",
                          anchor="middle"))
        (outdir / "scatter.svg").write_text(_svg_doc(width, height, body))
        return
    vals = [v for sim, pred, _ in pts for v in (sim, pred)]
    lo, hi = min(vals), max(vals)
    pad = 0.05 * ((hi - lo) or 1.0)
    lo, hi = lo - pad, hi + pad

    def sx(v):
        return left + plot_w * (v - lo) / (hi - lo)

    def sy(v):
        return top + plot_h * (hi - v) / (hi - lo)

    body.append(_line(left, top, left, top + plot_h))
    body.append(_line(left, top + plot_h, left + plot_w, top + plot_h))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * (hi - lo)
        body.append(_line(sx(v), top + plot_h, sx(v), top + plot_h + 4))
        body.append(_text(sx(v), top + plot_h + 18, _fmt(v), anchor="middle",
                          size=10))
        body.append(_line(left - 4, sy(v), left, sy(v)))
        body.append(_text(left - 8, sy(v) + 4, _fmt(v), anchor="end", size=10))
    body.append(_line(sx(lo), sy(lo), sx(hi), sy(hi), color="#999999"))
    for sim, pred, _ in pts:
        body.append(_circle(sx(sim), sy(pred), 3, _PALETTE[0]))
    body.append(_text(left + plot_w / 2, height - 16, "simulated nadir (Hz)",
                      anchor="middle"))
    body.append(_text(16, top + plot_h / 2, "predicted nadir (Hz)",
                      anchor="middle",
                      extra=f' transform="rotate(-90 16 {_fmt(top + plot_h / 2)})"'))
    (outdir / "scatter.svg").write_text(_svg_doc(width, height, body))


def _report_gantt(outdir: Path, schedule) -> None:
    """Commitment blocks per unit and period; block shade tracks dispatch."""
    with open(outdir / "gantt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "unit", "on", "dispatch_mw"])
        for t in range(schedule.periods):
            for g, name in enumerate(schedule.gen_names):
                w.writerow([t, name, int(schedule.u[t, g]),
                            repr(float(schedule.dispatch_mw[t, g]))])
    nt, ng = schedule.periods, len(schedule.gen_names)
    cell_w, cell_h = 24, 22
    left, top = 80, 40
    width = left + cell_w * nt + 20
    height = top + cell_h * ng + 50
    body = [_text(left, 22, "commitment schedule", size=13)]
    p_peak = max(1e-9, float(np.max(schedule.dispatch_mw)))
    for g, name in enumerate(schedule.gen_names):
        y = top + g * cell_h
        body.append(_text(left - 8, y + cell_h - 7, name, anchor="end"))
        for t in range(nt):
            x = left + t * cell_w
            if schedule.u[t, g]:
                shade = 0.35 + 0.65 * float(schedule.dispatch_mw[t, g]) / p_peak
                body.append(_rect(x + 1, y + 1, cell_w - 2, cell_h - 2,
                                  _PALETTE[0], opacity=shade))
            else:
                body.append(_rect(x + 1, y + 1, cell_w - 2, cell_h - 2,
                                  "#eeeeee"))
    for t in range(0, nt, max(1, nt // 12)):
        body.append(_text(left + t * cell_w + cell_w / 2,
                          top + ng * cell_h + 16, str(t), anchor="middle",
                          size=10))
    body.append(_text(left + cell_w * nt / 2, height - 12, "period",
                      anchor="middle"))
    (outdir / "gantt.svg").write_text(_svg_doc(width, height, body))


def _report_table(outdir: Path, rows, ver_path: Path) -> None:
    """Verification table verbatim as CSV plus a rendered text grid."""
    (outdir / "table.csv").write_bytes(ver_path.read_bytes())
    cols = (10, 80, 190, 300, 410, 470)
    headers = ("period", "pred (Hz)", "sim (Hz)", "status", "secure", "trip")
    width, height = 560, 58 + 16 * len(rows)
    body = [_text(10, 22, "closed-loop verification", size=13)]
    y = 46
    for x, h in zip(cols, headers):
        body.append(_text(x, y, h, extra=' font-weight="bold"'))
    for r in rows:
        y += 16
        pred = "-" if r.predicted_nadir_hz is None else f"{r.predicted_nadir_hz:.4f}"
        sim = "NA" if np.isnan(r.simulated_nadir_hz) else f"{r.simulated_nadir_hz:.4f}"
        vals = (str(r.period), pred, sim, r.status,
                "yes" if r.secure else "no", r.trip_gen)
        for x, v in zip(cols, vals):
            body.append(_text(x, y, v))
    (outdir / "table.svg").write_text(_svg_doc(width, height, body))


# ------------------------------------------------------------------ parser

_DISPATCH = {
    "sample": cmd_sample,
    "label": cmd_label,
    "active-sample": cmd_active_sample,
    "train-nadir": cmd_train_nadir,
    "train-stability": cmd_train_stability,
    "solve-uc": cmd_solve_uc,
    "verify": cmd_verify,
    "report": cmd_report,
}


def _version_text() -> str:
    lines = [f"fcuc {__version__}"]
    lines += [f"{name} schema {v}" for name, v in SCHEMA_VERSIONS.items()]
    return "\n".join(lines)


class _VersionAction(argparse.Action):
    """Prints one line per file format, unwrapped."""

    def __call__(self, parser, namespace, values, option_string=None):
        print(_version_text())
        parser.exit(0)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("config overrides (flags win over --config)")
    g.add_argument("--config", metavar="PATH", help="JSON config file")
    g.add_argument("--case", help="grid case path or bundled name")
    g.add_argument("--forecast", help="forecast path or bundled name")
    g.add_argument("--pool", help="operating-point pool (JSONL)")
    g.add_argument("--dataset", help="labeled dataset (CSV)")
    g.add_argument("--histogram", help="nadir band histogram (CSV)")
    g.add_argument("--nadir-model", help="nadir regressor file (JSON)")
    g.add_argument("--stability-model", help="stability classifier file (JSON)")
    g.add_argument("--schedule", help="schedule file (JSON)")
    g.add_argument("--verification", help="verification table (CSV)")
    g.add_argument("--report-dir", help="directory for report files")
    g.add_argument("--seed", type=int, help="seed for every random draw")
    g.add_argument("--jobs", type=int, help="worker processes for labeling")
    g.add_argument("--samples", type=int, help="pool size to draw")
    g.add_argument("--budget", type=int, help="labels per campaign iteration")
    g.add_argument("--iterations", type=int, help="campaign iterations")
    g.add_argument("--p-on", type=float, help="commitment probability")
    g.add_argument("--sigma-ratio", type=float, help="load noise ratio")
    g.add_argument("--f-ufls-hz", type=float, help="shedding threshold (Hz)")
    g.add_argument("--margin-hz", type=float,
                   help="extra floor tightening against prediction error (Hz)")
    g.add_argument("--horizon-s", type=float, help="simulation horizon (s)")
    g.add_argument("--dt-s", type=float, help="integration step (s)")
    g.add_argument("--gamma", type=float, help="stability slack penalty")
    g.add_argument("--hidden", help="hidden layer sizes, e.g. 16 or 16,8")
    g.add_argument("--epochs", type=int, help="training epochs")
    g.add_argument("--lr", type=float, help="learning rate")
    g.add_argument("--momentum", type=float, help="gradient momentum")
    g.add_argument("--batch-size", type=int, help="minibatch size")
    g.add_argument("--val-fraction", type=float, help="validation split")
    g.add_argument("--patience", type=int, help="early-stopping patience")
    g.add_argument("--nadir-band", help="training band, e.g. -1.2,0")
    g.add_argument("--rel-gap", type=float, help="relative optimality gap")
    g.add_argument("--node-limit", type=int, help="branch-and-bound node cap")
    g.add_argument("--time-limit-s", type=float, help="solver time cap (s)")

    p = argparse.ArgumentParser(
        prog="fcuc",
        description="frequency-constrained unit commitment pipeline",
    )
    p.add_argument("--version", action=_VersionAction, nargs=0,
                   help="print the tool and format schema versions")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common],
                   help="draw operating points into a pool")
    sub.add_parser("label", parents=[common],
                   help="simulate worst trips for a pool")
    sub.add_parser("active-sample", parents=[common],
                   help="entropy-guided labeling campaign")
    sub.add_parser("train-nadir", parents=[common],
                   help="fit the nadir regressor")
    sub.add_parser("train-stability", parents=[common],
                   help="fit the stability classifier")
    solve = sub.add_parser("solve-uc", parents=[common],
                           help="solve the commitment problem")
    solve.add_argument("--frequency-constrained", action="store_true",
                       help="enforce the learned frequency constraints")
    sub.add_parser("verify", parents=[common],
                   help="re-simulate a schedule's worst trips")
    sub.add_parser("report", parents=[common],
                   help="render plots and tables from run outputs")
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --version/--help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        cfg = build_config(args)
        return _DISPATCH[args.command](cfg, args)
    except CliError as exc:
        print(f"{args.command}: {exc.message}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
