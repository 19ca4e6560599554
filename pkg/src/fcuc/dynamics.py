"""Frequency response simulation after a generation-loss event.

Two engines share one governor/turbine model:

* simulate_sfr: the single-bus aggregate (system frequency response)
  model with states (delta_f, P_m, P_v) plus a passively integrated
  angle.  No limiter, no deadband; used for equilibrium checks and as
  the reference the multi-machine engine must collapse to.

* label_batch / simulate_disturbance: per-machine swing dynamics over
  the reduced network.  Machines keep (delta, omega, P_m, P_v); the
  electrical coupling is the Schur complement of the branch-susceptance
  Laplacian onto the machine internal nodes, so the tripped injection
  spreads over survivors through the grid.  Governor output is clamped
  to the dispatch headroom (non-windup, applied after each step) and an
  optional offset deadband holds small deviations off the valve.

Everything integrates with fixed-step RK4 in per-unit on the system
base; frequencies are reported in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridCase

SETTLE_RATE_PU_S = 1e-4  # governor settled when |dPm/dt| drops below this
SPREAD_LIMIT_DEG = 360.0  # pairwise angle spread beyond this is a loss of sync
SETTLE_WINDOW_S = 2.0  # width of the early/late spread comparison windows
NADIR_SKIP_S = 0.1  # transient right after the trip is not a nadir candidate


class DynamicsError(ValueError):
    """Raised for configurations the simulator cannot integrate."""


# ------------------------------------------------------------- aggregate SFR

@dataclass
class SfrResult:
    t_s: np.ndarray
    delta_f_hz: np.ndarray
    delta_pm_pu: np.ndarray
    delta_pv_pu: np.ndarray
    delta_delta_rad: np.ndarray

    @property
    def nadir_hz(self) -> float:
        return float(self.delta_f_hz.min())


def simulate_sfr(
    delta_p_pu: float,
    h_sys: float,
    droop: float,
    t1: float,
    t2: float,
    t3: float,
    damping: float = 0.0,
    f_base_hz: float = 60.0,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
) -> SfrResult:
    """Aggregate frequency response to a sudden power deficit.

    delta_p_pu is the lost injection (positive for lost generation) on
    the same base as h_sys.  States are integrated in per-unit.
    """
    if h_sys <= 0 or droop <= 0 or t1 <= 0 or t3 <= 0:
        raise DynamicsError("h_sys, droop, t1, t3 must all be positive")
    if dt_s <= 0 or horizon_s <= dt_s:
        raise DynamicsError("need dt_s > 0 and horizon_s > dt_s")
    n = int(round(horizon_s / dt_s))
    y = np.zeros(4)  # delta, f, pm, pv
    out = np.zeros((4, n + 1))
    two_pi_f = 2.0 * np.pi * f_base_hz

    def deriv(s):
        delta, f, pm, pv = s
        u = -f / droop
        dpv = (-pv + u) / t1
        dpm = (-pm + pv + (t2 / t1) * (-pv + u)) / t3
        df = (pm - delta_p_pu - damping * f) / (2.0 * h_sys)
        return np.array([two_pi_f * f, df, dpm, dpv])

    for k in range(n):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * dt_s * k1)
        k3 = deriv(y + 0.5 * dt_s * k2)
        k4 = deriv(y + dt_s * k3)
        y = y + (dt_s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, k + 1] = y
    t = np.arange(n + 1) * dt_s
    return SfrResult(t, out[1] * f_base_hz, out[2], out[3], out[0])


def coi_inertia(case: GridCase, committed: np.ndarray) -> float:
    """Center-of-inertia inertia constant on the system base."""
    committed = np.asarray(committed, dtype=bool)
    return float(
        sum(
            g.inertia_h * g.mva_base / case.base_mva
            for g, on in zip(case.generators, committed)
            if on
        )
    )


def aggregate_sfr_params(case: GridCase, committed: np.ndarray) -> tuple[float, float, float]:
    """(h_sys, droop, damping) of the committed fleet seen as one machine."""
    committed = np.asarray(committed, dtype=bool)
    if not committed.any():
        raise DynamicsError("no committed units to aggregate")
    h = coi_inertia(case, committed)
    gain = sum(
        (g.mva_base / case.base_mva) / g.droop
        for g, on in zip(case.generators, committed)
        if on
    )
    damp = sum(
        g.damping * g.mva_base / case.base_mva
        for g, on in zip(case.generators, committed)
        if on
    )
    return h, 1.0 / gain, damp


def piecewise_pm(t_s: np.ndarray, headroom_pu: float, delivery_time_s: float) -> np.ndarray:
    """Reserve delivered as a linear ramp saturating at the headroom."""
    t = np.asarray(t_s, dtype=float)
    if delivery_time_s <= 0:
        return np.where(t >= 0, headroom_pu, 0.0)
    return headroom_pu * np.clip(t / delivery_time_s, 0.0, 1.0)


# --------------------------------------------------------- network reduction

class _NetworkReducer:
    """Caches Kron reductions of the susceptance Laplacian per survivor set."""

    def __init__(self, case: GridCase):
        self.case = case
        nb = case.n_buses
        idx = case.bus_index()
        lbb = np.zeros((nb, nb))
        for ln in case.lines:
            w = -ln.b  # series susceptance magnitude of the branch
            if w <= 0:
                raise DynamicsError(f"line {ln.from_bus}-{ln.to_bus}: non-inductive branch")
            i, j = idx[ln.from_bus], idx[ln.to_bus]
            lbb[i, i] += w
            lbb[j, j] += w
            lbb[i, j] -= w
            lbb[j, i] -= w
        self.lbb_lines = lbb
        self.gen_bus = np.array([idx[g.bus] for g in case.generators])
        self.w_int = np.array(
            [(g.mva_base / case.base_mva) / g.xd_prime for g in case.generators]
        )
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def reduce(self, survivors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """K over survivor machines and L_bb^-1 columns for disturbances.

        Returns (k_red, minv) where k_red is (k, k) over np.flatnonzero
        (survivors) and minv is (k, n_bus): gamma for a disturbance at
        bus column b is minv[:, b] (rows sum to one).
        """
        survivors = np.asarray(survivors, dtype=bool)
        key = survivors.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit[0], hit[1]
        alive = np.flatnonzero(survivors)
        if alive.size == 0:
            raise DynamicsError("no surviving machines to reduce onto")
        lbb = self.lbb_lines.copy()
        w = self.w_int[alive]
        buses = self.gen_bus[alive]
        for b, wi in zip(buses, w):
            lbb[b, b] += wi
        try:
            lbb_inv = np.linalg.inv(lbb)
        except np.linalg.LinAlgError:
            raise DynamicsError("network splits into islands for this survivor set") from None
        # L_mb has one entry per machine: -w_i at its bus, so
        # K = L_mm - L_mb L_bb^-1 L_bm with L_mm = diag(w).
        lmb_inv = -w[:, None] * lbb_inv[buses, :]  # (k, nb) = L_mb @ L_bb^-1
        k_red = np.diag(w) + lmb_inv[:, buses] * w[None, :]
        gamma_cols = -lmb_inv  # (k, nb); column b is the spread of a loss at bus b
        self._cache[key] = (k_red, gamma_cols)
        return k_red, gamma_cols


# --------------------------------------------------------- batched machines

@dataclass
class BatchStats:
    t_s: np.ndarray  # recorded stat times (nt,)
    spread_deg: np.ndarray  # (s, nt) max pairwise rotor-angle spread
    pm_step_pu_s: np.ndarray  # (s, nt) max governor output rate between records
    nadir_hz: np.ndarray  # (s,) min machine frequency after the skip window
    failed: np.ndarray  # (s,) non-finite state encountered


@dataclass
class Trajectory:
    t_s: np.ndarray
    delta_f_hz: np.ndarray  # (g, nt)
    delta_rad: np.ndarray  # (g, nt)
    pm_pu: np.ndarray  # (g, nt)
    pv_pu: np.ndarray  # (g, nt)
    survivors: np.ndarray  # (g,) bool
    stats: BatchStats


def _gen_arrays(case: GridCase):
    g = case.generators
    sb = case.base_mva
    return dict(
        h_sys=np.array([x.inertia_h * x.mva_base / sb for x in g]),
        d_sys=np.array([x.damping * x.mva_base / sb for x in g]),
        gain=np.array([(x.mva_base / sb) / x.droop for x in g]),
        t1=np.array([x.t1 for x in g]),
        t2=np.array([x.t2 for x in g]),
        t3=np.array([x.t3 for x in g]),
        db_pu=np.array([x.deadband_hz for x in g]) / case.frequency_hz,
        p_min=np.array([x.p_min for x in g]),
        p_max=np.array([x.p_max for x in g]),
    )


def _simulate_batch(
    case: GridCase,
    survivors: np.ndarray,  # (s, g) bool
    dispatch_mw: np.ndarray,  # (s, g) pre-event output of surviving machines
    trip_bus: np.ndarray,  # (s,) bus number where injection is lost
    trip_mw: np.ndarray,  # (s,) size of the lost injection
    horizon_s: float,
    dt_s: float,
    stat_stride: int,
    store_full: bool,
) -> tuple[BatchStats, Trajectory | None]:
    ns, ng = survivors.shape
    if ns == 0:
        empty = np.zeros((0, 0))
        return BatchStats(np.zeros(0), empty, empty, np.zeros(0), np.zeros(0, bool)), None
    par = _gen_arrays(case)
    reducer = _NetworkReducer(case)
    bus_idx = case.bus_index()
    sb = case.base_mva
    fb = case.frequency_hz
    two_pi_f = 2.0 * np.pi * fb

    mask = survivors.astype(float)
    kmat = np.zeros((ns, ng, ng))
    gamma = np.zeros((ns, ng))
    for s in range(ns):
        k_red, gamma_cols = reducer.reduce(survivors[s])
        alive = np.flatnonzero(survivors[s])
        kmat[np.ix_([s], alive, alive)] = k_red
        gamma[s, alive] = gamma_cols[:, bus_idx[int(trip_bus[s])]]

    h2 = 2.0 * np.where(survivors, par["h_sys"][None, :], 1.0)
    d_sys = par["d_sys"][None, :]
    gain = par["gain"][None, :] * mask
    t1 = par["t1"][None, :]
    t2_over_t1 = (par["t2"] / par["t1"])[None, :]
    t3 = par["t3"][None, :]
    db = par["db_pu"][None, :]
    pm_hi = np.where(survivors, (par["p_max"][None, :] - dispatch_mw) / sb, 0.0)
    pm_lo = np.where(survivors, -np.maximum(dispatch_mw - par["p_min"][None, :], 0.0) / sb, 0.0)
    pm_hi = np.maximum(pm_hi, 0.0)
    trip_pu = (trip_mw / sb)[:, None]

    def deriv(state):
        delta = state[..., 0]
        omega = state[..., 1]
        # Non-windup limiter: the clamped value is what acts on the
        # system, and the state cannot push further past the limit.
        pm = np.clip(state[..., 2], pm_lo, pm_hi)
        pv = state[..., 3]
        pe = np.einsum("sij,sj->si", kmat, delta) + gamma * trip_pu
        wd = np.sign(omega) * np.maximum(np.abs(omega) - db, 0.0)
        u = -gain * wd
        dpv = (-pv + u) / t1
        dpm = (-pm + pv + t2_over_t1 * (-pv + u)) / t3
        blocked = ((pm >= pm_hi) & (dpm > 0.0)) | ((pm <= pm_lo) & (dpm < 0.0))
        dpm = np.where(blocked, 0.0, dpm)
        dom = (pm - pe - d_sys * omega) / h2
        ddel = two_pi_f * omega
        return np.stack([ddel, dom, dpm, dpv], axis=-1) * mask[..., None]

    n_steps = int(round(horizon_s / dt_s))
    state = np.zeros((ns, ng, 4))
    n_rec = n_steps // stat_stride + 1
    rec_t = np.empty(n_rec)
    spread = np.empty((ns, n_rec))
    pm_rate = np.empty((ns, n_rec))
    nadir = np.full(ns, np.inf)
    failed = np.zeros(ns, dtype=bool)
    full = (
        np.zeros((ns, ng, 4, n_rec)) if store_full else None
    )

    hi_delta = np.where(survivors, 0.0, -np.inf)
    lo_delta = np.where(survivors, 0.0, np.inf)

    def record(k_rec, t_now, pm_prev, dt_rec):
        rec_t[k_rec] = t_now
        dmax = np.max(state[..., 0] + hi_delta, axis=1)
        dmin = np.min(state[..., 0] + lo_delta, axis=1)
        spread[:, k_rec] = (dmax - dmin) * (180.0 / np.pi)
        if k_rec == 0:
            pm_rate[:, 0] = np.inf
        else:
            dp = np.abs(state[..., 2] - pm_prev)
            pm_rate[:, k_rec] = dp.max(axis=1) / dt_rec
        if full is not None:
            full[..., k_rec] = state

    record(0, 0.0, None, None)
    pm_prev = state[..., 2].copy()
    k_rec = 1
    stat_dt = stat_stride * dt_s
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            k1 = deriv(state)
            k2 = deriv(state + (0.5 * dt_s) * k1)
            k3 = deriv(state + (0.5 * dt_s) * k2)
            k4 = deriv(state + dt_s * k3)
            state = state + (dt_s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            np.clip(state[..., 2], pm_lo, pm_hi, out=state[..., 2])
            t_now = k * dt_s
            if t_now >= NADIR_SKIP_S:
                fmin = np.min(np.where(survivors, state[..., 1], np.inf), axis=1)
                np.minimum(nadir, fmin, out=nadir)
            if k % stat_stride == 0:
                failed |= ~np.isfinite(state).all(axis=(1, 2))
                record(k_rec, t_now, pm_prev, stat_dt)
                pm_prev = state[..., 2].copy()
                k_rec += 1

    nadir_hz = np.where(np.isfinite(nadir), nadir * fb, np.nan)
    stats = BatchStats(rec_t, spread, pm_rate, nadir_hz, failed)
    traj = None
    if store_full:
        traj = Trajectory(
            rec_t,
            full[0, :, 1, :] * fb,
            full[0, :, 0, :],
            full[0, :, 2, :],
            full[0, :, 3, :],
            survivors[0],
            stats,
        )
    return stats, traj


def simulate_disturbance(
    case: GridCase,
    survivors: np.ndarray,  # (g,) bool
    dispatch_mw: np.ndarray,  # (g,)
    trip_bus: int,
    trip_mw: float,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
    stat_stride: int = 1,
) -> Trajectory:
    """Single-event simulation with full per-machine trajectories."""
    survivors = np.asarray(survivors, dtype=bool)[None, :]
    if not survivors.any():
        raise DynamicsError("no surviving machines to simulate")
    if dt_s <= 0 or horizon_s <= dt_s:
        raise DynamicsError("need dt_s > 0 and horizon_s > dt_s")
    _, traj = _simulate_batch(
        case,
        survivors,
        np.asarray(dispatch_mw, dtype=float)[None, :],
        np.array([trip_bus]),
        np.array([float(trip_mw)]),
        horizon_s,
        dt_s,
        stat_stride,
        store_full=True,
    )
    return traj


# ----------------------------------------------------------------- labeling

@dataclass
class Outcome:
    stable: bool
    reason: str  # "ok" | "numeric-failure" | "capacity-deficit"
    #             | "angle-divergence" | "small-signal"
    nadir_hz: float  # NaN when unstable


def postprocess(stats: BatchStats, horizon_s: float) -> list[Outcome]:
    """Classify each simulated sample; see the labeling rules in order.

    1. non-finite states -> numeric failure;
    2. angle spread beyond SPREAD_LIMIT_DEG anywhere -> loss of sync;
    3. the spread envelope still growing at the end of the horizon
       (late window worse than the settled window) -> small-signal;
    4. otherwise stable with the frequency nadir.
    """
    out = []
    t = stats.t_s
    t2 = horizon_s
    for s in range(stats.failed.shape[0]):
        if stats.failed[s] or not np.isfinite(stats.spread_deg[s]).all():
            out.append(Outcome(False, "numeric-failure", float("nan")))
            continue
        if stats.spread_deg[s].max() > SPREAD_LIMIT_DEG:
            out.append(Outcome(False, "angle-divergence", float("nan")))
            continue
        settled = np.flatnonzero(stats.pm_step_pu_s[s] < SETTLE_RATE_PU_S)
        t1 = t[settled[0]] if settled.size else t2 - SETTLE_WINDOW_S
        t1 = min(t1, t2 - SETTLE_WINDOW_S)
        d1 = stats.spread_deg[s][(t >= t1) & (t <= t1 + SETTLE_WINDOW_S)].max()
        d2 = stats.spread_deg[s][(t >= t2 - SETTLE_WINDOW_S) & (t <= t2)].max()
        if d2 > d1:
            out.append(Outcome(False, "small-signal", float("nan")))
            continue
        out.append(Outcome(True, "ok", float(stats.nadir_hz[s])))
    return out


@dataclass
class LabelResult:
    stable: np.ndarray  # (s,) bool
    reason: list[str]
    nadir_hz: np.ndarray  # (s,) NaN when unstable
    secure: np.ndarray  # (s,) bool: stable and nadir above the shed threshold
    trip_index: np.ndarray  # (s,) generator tripped (-1 when nothing ran)


def select_trip(u: np.ndarray, p_mw: np.ndarray) -> np.ndarray:
    """Largest committed injection per sample; ties go to the lowest index."""
    u = np.asarray(u, dtype=bool)
    p = np.where(u, p_mw, -np.inf)
    trip = np.argmax(p, axis=1)
    trip[~u.any(axis=1)] = -1
    return trip


def label_batch(
    case: GridCase,
    u: np.ndarray,  # (s, g) commitment
    p_mw: np.ndarray,  # (s, g) dispatch
    residual_mw: np.ndarray,  # (s,) load minus wind the fleet must carry
    f_ufls_hz: float,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
    chunk: int = 1024,
) -> LabelResult:
    """Trip the largest committed unit in each sample and classify."""
    u = np.asarray(u, dtype=bool)
    p_mw = np.asarray(p_mw, dtype=float)
    residual_mw = np.asarray(residual_mw, dtype=float)
    ns, ng = u.shape
    p_max = np.array([g.p_max for g in case.generators])
    gen_bus = np.array([g.bus for g in case.generators])

    trip = select_trip(u, p_mw)
    survivors = u.copy()
    rows = np.flatnonzero(trip >= 0)
    survivors[rows, trip[rows]] = False
    trip_mw = np.where(trip >= 0, p_mw[np.arange(ns), np.maximum(trip, 0)], 0.0)

    capacity_ok = (survivors * p_max[None, :]).sum(axis=1) >= residual_mw - 1e-9
    capacity_ok &= trip >= 0
    capacity_ok &= survivors.any(axis=1)

    stable = np.zeros(ns, dtype=bool)
    reason = ["capacity-deficit"] * ns
    nadir = np.full(ns, np.nan)

    todo = np.flatnonzero(capacity_ok)
    for lo in range(0, todo.size, chunk):
        sel = todo[lo : lo + chunk]
        stats, _ = _simulate_batch(
            case,
            survivors[sel],
            p_mw[sel],
            gen_bus[trip[sel]],
            trip_mw[sel],
            horizon_s,
            dt_s,
            stat_stride=max(1, int(round(0.05 / dt_s))),
            store_full=False,
        )
        for i, oc in zip(sel, postprocess(stats, horizon_s)):
            stable[i] = oc.stable
            reason[i] = oc.reason
            nadir[i] = oc.nadir_hz

    secure = stable & (nadir >= f_ufls_hz)
    return LabelResult(stable, reason, nadir, secure, trip)


def label_sample(
    case: GridCase,
    u: np.ndarray,
    p_mw: np.ndarray,
    residual_mw: float,
    f_ufls_hz: float,
    horizon_s: float = 30.0,
    dt_s: float = 0.01,
) -> tuple[Outcome, bool, int]:
    """Single-sample convenience wrapper around label_batch."""
    res = label_batch(
        case,
        np.asarray(u)[None, :],
        np.asarray(p_mw, dtype=float)[None, :],
        np.array([residual_mw]),
        f_ufls_hz,
        horizon_s,
        dt_s,
    )
    oc = Outcome(bool(res.stable[0]), res.reason[0], float(res.nadir_hz[0]))
    return oc, bool(res.secure[0]), int(res.trip_index[0])


def trajectory_to_rows(case: GridCase, traj: Trajectory) -> tuple[list[str], list[list[float]]]:
    """Flatten a trajectory into CSV-ready header and rows."""
    names = [g.name for g in case.generators]
    header = ["t_s"]
    header += [f"f_{n}_hz" for n in names]
    header += [f"angle_{n}_deg" for n in names]
    header += [f"pm_{n}_pu" for n in names]
    rows = []
    deg = traj.delta_rad * (180.0 / np.pi)
    for k in range(traj.t_s.size):
        row = [float(traj.t_s[k])]
        row += [float(v) for v in traj.delta_f_hz[:, k]]
        row += [float(v) for v in deg[:, k]]
        row += [float(v) for v in traj.pm_pu[:, k]]
        rows.append(row)
    return header, rows
