"""Commitment MILP assembly and schedule extraction.

build_ordinary_uc lays down the day-ahead problem: dispatch limits with
a minimum-output split, reactive limits gated by commitment, ramping,
minimum up/down windows, startup accounting, and a linearized AC
network (voltage and angle variables, nodal P/Q balance per bus).

encode_worst_disturbance adds, per period, a binary one-of-N pick of
the largest-output unit plus a masked copy of its output.  Those
masked megawatts, together with the commitment vector and the dispatch
vector, are exactly the feature layouts the trained networks expect,
so encode_relu_network can wire the networks straight onto the
decision variables.  build_fcuc assembles the whole thing and enforces
the predicted nadir floor and a softly-enforced stability comparison.

All powers are MW at the variable level; network balance rows convert
to per unit through the system base.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import milp, mlp
from .grid import Forecast, GridCase, NodalSeries, distribute_forecast

RELU_PAD = 1e-6  # minimum straddle of pre-activation bounds around zero
DEFAULT_GAMMA = 1e3  # objective weight on the stability slack
AUDIT_TOL = 1e-5  # MILP network output vs direct forward pass
TREND_M_PAD_MW = 1.0  # big-M above the largest unit's capacity


class UcError(ValueError):
    """Raised for inconsistent model inputs or failed extraction audits."""


def _t(t: int) -> str:
    return f"t{t:02d}"


def pick_big_m(case: GridCase) -> float:
    """Smallest sound constant for the largest-unit selection rows."""
    return max(g.p_max for g in case.generators) + TREND_M_PAD_MW


# ------------------------------------------------------------- name algebra

class UcNames:
    """Deterministic variable names shared by builders and extractors."""

    def __init__(self, case: GridCase, forecast: Forecast):
        self.case = case
        self.forecast = forecast
        self.periods = forecast.periods
        self.gens = [g.name for g in case.generators]
        self.buses = list(case.buses)

    def u(self, g: str, t: int) -> str:
        return f"u_{g}_{_t(t)}"

    def pinc(self, g: str, t: int) -> str:
        return f"pi_{g}_{_t(t)}"

    def ptot(self, g: str, t: int) -> str:
        return f"pg_{g}_{_t(t)}"

    def q(self, g: str, t: int) -> str:
        return f"qg_{g}_{_t(t)}"

    def start(self, g: str, t: int) -> str:
        return f"su_{g}_{_t(t)}"

    def volt(self, bus: int, t: int) -> str:
        return f"v_b{bus}_{_t(t)}"

    def angle(self, bus: int, t: int) -> str:
        return f"th_b{bus}_{_t(t)}"

    def pick(self, g: str, t: int) -> str:
        return f"pick_{g}_{_t(t)}"

    def picked_mw(self, g: str, t: int) -> str:
        return f"pickmw_{g}_{_t(t)}"

    def stab_slack(self, t: int) -> str:
        return f"sslack_{_t(t)}"

    def nadir_tag(self, t: int) -> str:
        return f"ndr_{_t(t)}"

    def stab_tag(self, t: int) -> str:
        return f"stb_{_t(t)}"

    def nadir_inputs(self, t: int) -> list[str]:
        return [self.u(g, t) for g in self.gens] + [
            self.picked_mw(g, t) for g in self.gens
        ]

    def stability_inputs(self, t: int) -> list[str]:
        return self.nadir_inputs(t) + [self.ptot(g, t) for g in self.gens]


# ------------------------------------------------------------- ordinary UC

def build_ordinary_uc(case: GridCase, forecast: Forecast) -> milp.MilpModel:
    """Day-ahead commitment model without any frequency constraints."""
    names = UcNames(case, forecast)
    nodal = distribute_forecast(case, forecast)
    model = milp.MilpModel("uc")
    nt = forecast.periods
    s_inv = 1.0 / case.base_mva

    # commitment binaries first: branching prefers low indices on ties
    for t in range(nt):
        for g in case.generators:
            model.add_var(names.u(g.name, t), binary=True, obj=g.cost_fixed)
    for t in range(1, nt):
        for g in case.generators:
            model.add_var(names.start(g.name, t), binary=True, obj=g.cost_startup)
    for t in range(nt):
        for g in case.generators:
            model.add_var(names.pinc(g.name, t), 0.0, g.p_max - g.p_min,
                          obj=g.cost_marginal)
            model.add_var(names.ptot(g.name, t), 0.0, g.p_max)
            model.add_var(names.q(g.name, t), min(g.q_min, 0.0), max(g.q_max, 0.0))
    slack = case.slack_bus()
    for t in range(nt):
        for b in case.buses:
            model.add_var(names.volt(b, t), case.v_min, case.v_max)
            if b == slack:
                model.add_var(names.angle(b, t), 0.0, 0.0)
            else:
                model.add_var(names.angle(b, t), -milp.INF, milp.INF)

    for t in range(nt):
        for g in case.generators:
            iu = model.var(names.u(g.name, t))
            ip = model.var(names.pinc(g.name, t))
            it_ = model.var(names.ptot(g.name, t))
            iq = model.var(names.q(g.name, t))
            span = g.p_max - g.p_min
            model.add_constraint(f"cap_{g.name}_{_t(t)}",
                                 [(ip, 1.0), (iu, -span)], "<=", 0.0)
            model.add_constraint(f"tot_{g.name}_{_t(t)}",
                                 [(it_, 1.0), (ip, -1.0), (iu, -g.p_min)], "=", 0.0)
            model.add_constraint(f"qhi_{g.name}_{_t(t)}",
                                 [(iq, 1.0), (iu, -g.q_max)], "<=", 0.0)
            model.add_constraint(f"qlo_{g.name}_{_t(t)}",
                                 [(iq, 1.0), (iu, -g.q_min)], ">=", 0.0)

    # ramps couple consecutive periods; a fresh start lands at minimum output
    for t in range(1, nt):
        for g in case.generators:
            iu0 = model.var(names.u(g.name, t - 1))
            iu1 = model.var(names.u(g.name, t))
            ip0 = model.var(names.ptot(g.name, t - 1))
            ip1 = model.var(names.ptot(g.name, t))
            model.add_constraint(
                f"rup_{g.name}_{_t(t)}",
                [(ip1, 1.0), (ip0, -1.0), (iu0, -g.ramp_up + g.p_min),
                 (iu1, -g.p_min)],
                "<=", 0.0,
            )
            model.add_constraint(
                f"rdn_{g.name}_{_t(t)}",
                [(ip0, 1.0), (ip1, -1.0), (iu0, -g.ramp_down - g.p_min),
                 (iu1, g.p_min)],
                "<=", 0.0,
            )

    # a switch in period t pins the following window; period 0 state persists
    for g in case.generators:
        for t in range(1, nt):
            iu0 = model.var(names.u(g.name, t - 1))
            iu1 = model.var(names.u(g.name, t))
            for tau in range(t + 1, min(t + g.min_up, nt)):
                iut = model.var(names.u(g.name, tau))
                model.add_constraint(
                    f"mup_{g.name}_{_t(t)}_{_t(tau)}",
                    [(iut, 1.0), (iu1, -1.0), (iu0, 1.0)], ">=", 0.0,
                )
            for tau in range(t + 1, min(t + g.min_down, nt)):
                iut = model.var(names.u(g.name, tau))
                model.add_constraint(
                    f"mdn_{g.name}_{_t(t)}_{_t(tau)}",
                    [(iut, 1.0), (iu0, 1.0), (iu1, -1.0)], "<=", 1.0,
                )
        iu0 = model.var(names.u(g.name, 0))
        for tau in range(1, min(g.min_up, nt)):
            model.add_constraint(
                f"mup_{g.name}_t00_{_t(tau)}",
                [(model.var(names.u(g.name, tau)), 1.0), (iu0, -1.0)], ">=", 0.0,
            )
        for tau in range(1, min(g.min_down, nt)):
            model.add_constraint(
                f"mdn_{g.name}_t00_{_t(tau)}",
                [(model.var(names.u(g.name, tau)), 1.0), (iu0, -1.0)], "<=", 0.0,
            )

    for t in range(1, nt):
        for g in case.generators:
            model.add_constraint(
                f"sup_{g.name}_{_t(t)}",
                [(model.var(names.start(g.name, t)), 1.0),
                 (model.var(names.u(g.name, t)), -1.0),
                 (model.var(names.u(g.name, t - 1)), 1.0)],
                ">=", 0.0,
            )

    _add_network_balance(model, names, nodal, s_inv)
    return model


def _add_network_balance(
    model: milp.MilpModel, names: UcNames, nodal: NodalSeries, s_inv: float
) -> None:
    """Nodal P and Q balance rows with linearized branch flows.

    Branch flow out of bus i toward j: P_ij = G(V_i - V_j) - B(th_i - th_j),
    Q_ij = B(V_j - V_i) - G(th_i - th_j); G, B are series line parameters.
    """
    case = names.case
    gens_at: dict[int, list[str]] = {}
    for g in case.generators:
        gens_at.setdefault(g.bus, []).append(g.name)
    load_rows_at: dict[int, list[int]] = {}
    for k, ld in enumerate(case.loads):
        load_rows_at.setdefault(ld.bus, []).append(k)
    wind_rows_at: dict[int, list[int]] = {}
    for k, w in enumerate(case.wind):
        wind_rows_at.setdefault(w.bus, []).append(k)

    for t in range(names.periods):
        for b in case.buses:
            p_terms: list[tuple[int, float]] = []
            q_terms: list[tuple[int, float]] = []
            for gname in gens_at.get(b, []):
                p_terms.append((model.var(names.ptot(gname, t)), s_inv))
                q_terms.append((model.var(names.q(gname, t)), s_inv))
            for ln in case.lines:
                if b == ln.from_bus:
                    i, j = ln.from_bus, ln.to_bus
                elif b == ln.to_bus:
                    i, j = ln.to_bus, ln.from_bus
                else:
                    continue
                vi, vj = model.var(names.volt(i, t)), model.var(names.volt(j, t))
                ti, tj = model.var(names.angle(i, t)), model.var(names.angle(j, t))
                # subtract the outgoing flow from the injection
                p_terms += [(vi, -ln.g), (vj, ln.g), (ti, ln.b), (tj, -ln.b)]
                q_terms += [(vi, ln.b), (vj, -ln.b), (ti, ln.g), (tj, -ln.g)]
            p_rhs = (
                sum(nodal.load_p[k, t] for k in load_rows_at.get(b, []))
                - sum(nodal.wind_p[k, t] for k in wind_rows_at.get(b, []))
            ) * s_inv
            q_rhs = sum(nodal.load_q[k, t] for k in load_rows_at.get(b, [])) * s_inv
            model.add_constraint(f"balp_b{b}_{_t(t)}", p_terms, "=", p_rhs)
            model.add_constraint(f"balq_b{b}_{_t(t)}", q_terms, "=", q_rhs)


# ----------------------------------------------------- largest-unit encoding

def encode_worst_disturbance(
    model: milp.MilpModel, case: GridCase, forecast: Forecast
) -> None:
    """Per period: a binary pick of the largest-output unit and a masked
    copy of its megawatts (zero in every other slot)."""
    names = UcNames(case, forecast)
    big_m = pick_big_m(case)
    for t in range(forecast.periods):
        for g in case.generators:
            model.add_var(names.pick(g.name, t), binary=True)
            model.add_var(names.picked_mw(g.name, t), 0.0, g.p_max)
        model.add_constraint(
            f"pickone_{_t(t)}",
            [(model.var(names.pick(g.name, t)), 1.0) for g in case.generators],
            "=", 1.0,
        )
        for g in case.generators:
            inu = model.var(names.pick(g.name, t))
            ig = model.var(names.ptot(g.name, t))
            im = model.var(names.picked_mw(g.name, t))
            for rho in case.generators:
                if rho.name == g.name:
                    continue
                model.add_constraint(
                    f"top_{g.name}_{rho.name}_{_t(t)}",
                    [(model.var(names.ptot(rho.name, t)), 1.0), (ig, -1.0),
                     (inu, big_m)],
                    "<=", big_m,
                )
            model.add_constraint(
                f"msklo_{g.name}_{_t(t)}",
                [(im, 1.0), (ig, -1.0), (inu, -big_m)], ">=", -big_m,
            )
            model.add_constraint(
                f"mskhi_{g.name}_{_t(t)}",
                [(im, 1.0), (ig, -1.0), (inu, big_m)], "<=", big_m,
            )
            model.add_constraint(
                f"mskcap_{g.name}_{_t(t)}",
                [(im, 1.0), (inu, -big_m)], "<=", 0.0,
            )


# ----------------------------------------------------------- ReLU embedding

def encode_relu_network(
    model: milp.MilpModel,
    net: mlp.MlpNetwork,
    input_vars: list[str],
    tag: str,
) -> list[str]:
    """Exact embedding of a folded ReLU network onto existing variables.

    Every hidden neuron gets a pre-activation equality, a binary on/off
    indicator, and the four envelope rows that pin the post-activation
    to max(pre, 0) at integral points.  Pre-activation intervals come
    from interval arithmetic over the input variables' declared bounds,
    padded so each interval straddles zero.  Returns the names of the
    affine output variables.
    """
    if not (np.all(net.mean == 0.0) and np.all(net.scale == 1.0)):
        raise UcError(f"{tag}: fold the network normalization before encoding")
    if len(input_vars) != net.n_inputs:
        raise UcError(
            f"{tag}: network expects {net.n_inputs} inputs, got {len(input_vars)}"
        )
    idxs = [model.var(v) for v in input_vars]
    lo = np.array([model.lb[j] for j in idxs])
    hi = np.array([model.ub[j] for j in idxs])
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise UcError(f"{tag}: network inputs need finite bounds")
    bounds = mlp.propagate_bounds(net, lo, hi)

    prev = idxs
    last = len(net.weights) - 1
    outs: list[str] = []
    for m, (w, b) in enumerate(zip(net.weights, net.biases)):
        blo, bhi = bounds[m]
        if m == last:
            for k in range(w.shape[1]):
                name = f"{tag}_o{k}"
                io = model.add_var(name, blo[k], bhi[k])
                terms = [(io, 1.0)] + [
                    (prev[r], -w[r, k]) for r in range(w.shape[0])
                ]
                model.add_constraint(f"{tag}_out{k}", terms, "=", b[k])
                outs.append(name)
            break
        layer: list[int] = []
        for n in range(w.shape[1]):
            hlo = min(blo[n], -RELU_PAD)
            hhi = max(bhi[n], RELU_PAD)
            ih = model.add_var(f"{tag}_h{m}n{n}", hlo, hhi)
            iz = model.add_var(f"{tag}_z{m}n{n}", 0.0, max(hhi, 0.0))
            ia = model.add_var(f"{tag}_a{m}n{n}", binary=True)
            terms = [(ih, 1.0)] + [(prev[r], -w[r, n]) for r in range(w.shape[0])]
            model.add_constraint(f"{tag}_aff{m}n{n}", terms, "=", b[n])
            # z <= zhat - hlo (1 - a)
            model.add_constraint(f"{tag}_cap{m}n{n}",
                                 [(iz, 1.0), (ih, -1.0), (ia, -hlo)], "<=", -hlo)
            model.add_constraint(f"{tag}_low{m}n{n}",
                                 [(iz, 1.0), (ih, -1.0)], ">=", 0.0)
            model.add_constraint(f"{tag}_on{m}n{n}",
                                 [(iz, 1.0), (ia, -hhi)], "<=", 0.0)
            layer.append(iz)
        prev = layer
    return outs


# ------------------------------------------------------------ full assembly

def build_fcuc(
    case: GridCase,
    forecast: Forecast,
    nadir_net: mlp.MlpNetwork,
    stability_net: mlp.MlpNetwork,
    f_ufls_hz: float,
    gamma: float = DEFAULT_GAMMA,
    margin_hz: float = 0.0,
) -> milp.MilpModel:
    """Ordinary UC plus the worst-case-trip encoding and both network
    constraints: predicted nadir floored at the shedding threshold, and
    the stable-class logit required to win up to a penalized slack.

    `margin_hz` tightens the floor inside the model only (the schedule
    is still judged against the raw threshold); operators set it from
    the empirical prediction error of the nadir regressor so that
    binding periods keep a cushion against surrogate error.
    """
    ng = case.n_gens
    if nadir_net.n_inputs != 2 * ng or nadir_net.sizes[-1] != 1:
        raise UcError(
            f"nadir network wants {nadir_net.n_inputs} inputs / "
            f"{nadir_net.sizes[-1]} outputs; case needs {2 * ng} -> 1"
        )
    if stability_net.n_inputs != 3 * ng or stability_net.sizes[-1] != 2:
        raise UcError(
            f"stability network wants {stability_net.n_inputs} inputs / "
            f"{stability_net.sizes[-1]} outputs; case needs {3 * ng} -> 2"
        )
    if margin_hz < 0.0:
        raise UcError(f"margin_hz must be nonnegative, got {margin_hz}")
    f_floor = f_ufls_hz + margin_hz
    nadir_f = mlp.fold_normalization(nadir_net)
    stab_f = mlp.fold_normalization(stability_net)

    model = build_ordinary_uc(case, forecast)
    encode_worst_disturbance(model, case, forecast)
    names = UcNames(case, forecast)
    for t in range(forecast.periods):
        out = encode_relu_network(
            model, nadir_f, names.nadir_inputs(t), names.nadir_tag(t)
        )
        model.add_constraint(
            f"freqfloor_{_t(t)}", [(model.var(out[0]), 1.0)], ">=", f_floor
        )
        logits = encode_relu_network(
            model, stab_f, names.stability_inputs(t), names.stab_tag(t)
        )
        islk = model.add_var(names.stab_slack(t), 0.0, milp.INF, obj=gamma)
        model.add_constraint(
            f"stabgate_{_t(t)}",
            [(model.var(logits[1]), 1.0), (model.var(logits[0]), -1.0),
             (islk, 1.0)],
            ">=", 0.0,
        )
    _add_secure_commitment_cuts(model, case, forecast, nadir_f, f_floor)
    return model


def _add_secure_commitment_cuts(
    model: milp.MilpModel,
    case: GridCase,
    forecast: Forecast,
    nadir_f: mlp.MlpNetwork,
    f_ufls_hz: float,
) -> None:
    """Exclude commitment patterns that provably cannot clear the floor.

    Ramps are ignored, so each per-period analysis relaxes the full
    problem: a pattern ruled insecure here is insecure in the model, and
    the matching no-good cut is sound.  The predicted nadir along the
    feasible picked-megawatt interval is piecewise linear for a single
    hidden layer, so its maximum sits on a breakpoint or an endpoint;
    deeper networks and cases beyond twelve units are left uncut.
    """
    ng = case.n_gens
    if len(nadir_f.weights) != 2 or ng > 12:
        return
    names = UcNames(case, forecast)
    nodal = distribute_forecast(case, forecast)
    resid = nodal.load_p.sum(axis=0) - nodal.wind_p.sum(axis=0)
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])

    patterns = [np.array(bits, dtype=float)
                for bits in np.ndindex(*([2] * ng))]
    for t in range(forecast.periods):
        r = resid[t]
        for u in patterns:
            comm = np.flatnonzero(u > 0.5)
            if comm.size == 0:
                continue
            if p_min[comm].sum() > r + 1e-9 or p_max[comm].sum() < r - 1e-9:
                continue  # balance rows already exclude it
            secure = False
            for gs in comm:
                others = comm[comm != gs]
                iv = _pick_interval(r, int(gs), others, p_min, p_max)
                if iv is None:
                    continue
                _, peak = _nadir_peak(nadir_f, u, int(gs), iv[0], iv[1])
                if peak >= f_ufls_hz - 1e-9:
                    secure = True
                    break
            if secure:
                continue
            terms = [
                (model.var(names.u(names.gens[g], t)), 1.0 if u[g] < 0.5 else -1.0)
                for g in range(ng)
            ]
            model.add_constraint(
                f"insec_{''.join(str(int(b)) for b in u)}_{_t(t)}",
                terms, ">=", 1.0 - float(u.sum()),
            )


def _pick_interval(
    r: float,
    gs: int,
    others: np.ndarray,
    p_min: np.ndarray,
    p_max: np.ndarray,
    pad: float = 1e-7,
) -> tuple[float, float] | None:
    """Feasible megawatt interval for the picked unit `gs` when the other
    committed units `others` must each stay between their minimum and the
    picked output, and the period balance must hit `r`.

    `pad` widens the interval outward; the cut analysis relies on that so
    rounding never rules out a feasible pattern, while dispatch assembly
    passes zero to keep the balance arithmetic exact.
    """
    lo = max(p_min[gs], p_min[others].max() if others.size else 0.0)
    hi = p_max[gs]
    caps = p_max[others]
    # smallest pick output that lets the capped rest reach r
    v1 = 0.0
    while v1 + np.minimum(caps, v1).sum() < r - 1e-9:
        slope = 1.0 + float((caps > v1 + 1e-12).sum())
        gap = r - (v1 + np.minimum(caps, v1).sum())
        above = caps[caps > v1 + 1e-12]
        seg = (above.min() - v1) if above.size else milp.INF
        v1 += min(gap / slope, seg)
    # largest pick output with the rest held at minimum
    v2 = r - (p_min[others].sum() if others.size else 0.0)
    flo = max(lo, v1) - pad
    fhi = min(hi, v2) + pad
    if flo > fhi:
        return None
    return flo, fhi


def _nadir_peak(
    nadir_f: mlp.MlpNetwork, u: np.ndarray, gs: int, lo: float, hi: float
) -> tuple[float, float]:
    """(argmax, max) of the predicted nadir over the picked megawatts.

    Exact via breakpoints for one hidden layer (the prediction is then
    piecewise linear in the picked output); a dense scan otherwise.
    """
    ng = u.shape[0]
    if len(nadir_f.weights) == 2:
        w1, b1 = nadir_f.weights[0], nadir_f.biases[0]
        w2, b2 = nadir_f.weights[1], nadir_f.biases[1]
        c = u @ w1[:ng] + b1  # hidden affine term without the picked MW
        d = w1[ng + gs]
        vs = [lo, hi]
        nz = np.abs(d) > 0.0
        knots = -c[nz] / d[nz]
        vs.extend(knots[(knots > lo) & (knots < hi)].tolist())
        grid = np.array(sorted(vs))
        vals = np.maximum(c[None, :] + grid[:, None] * d[None, :], 0.0) @ w2[:, 0] + b2[0]
    else:
        grid = np.linspace(lo, hi, 257)
        feats = np.zeros((grid.size, 2 * ng))
        feats[:, :ng] = u
        feats[:, ng + gs] = grid
        vals = mlp.mlp_logits(nadir_f, feats)[:, 0]
    k = int(np.argmax(vals))
    return float(grid[k]), float(vals[k])


def _secure_v_candidates(
    nadir_f: mlp.MlpNetwork, u: np.ndarray, gs: int, lo: float, hi: float,
    floor: float,
) -> list[float]:
    """Picked-megawatt values whose predicted nadir clears the floor.

    For one hidden layer the prediction is piecewise linear in the
    picked output, so the secure knots, interval endpoints, and the
    floor crossings (nudged onto the secure side) cover every optimum
    of a linear objective over the secure set.  Deeper networks fall
    back to the secure points of a dense scan.
    """
    ng = u.shape[0]
    if len(nadir_f.weights) == 2:
        w1, b1 = nadir_f.weights[0], nadir_f.biases[0]
        w2, b2 = nadir_f.weights[1], nadir_f.biases[1]
        c = u @ w1[:ng] + b1
        d = w1[ng + gs]
        vs = [lo, hi]
        nz = np.abs(d) > 0.0
        knots = -c[nz] / d[nz]
        vs.extend(knots[(knots > lo) & (knots < hi)].tolist())
        grid = np.array(sorted(vs))
        vals = np.maximum(c[None, :] + grid[:, None] * d[None, :], 0.0) @ w2[:, 0] + b2[0]
    else:
        grid = np.linspace(lo, hi, 257)
        feats = np.zeros((grid.size, 2 * ng))
        feats[:, :ng] = u
        feats[:, ng + gs] = grid
        vals = mlp.mlp_logits(nadir_f, feats)[:, 0]
    cand = [float(v) for v, y in zip(grid, vals) if y >= floor]
    for k in range(grid.size - 1):
        y0, y1 = float(vals[k]), float(vals[k + 1])
        if (y0 >= floor) == (y1 >= floor) or abs(y1 - y0) <= 1e-15:
            continue
        vc = float(grid[k]) + (floor - y0) * float(grid[k + 1] - grid[k]) / (y1 - y0)
        eps = 1e-9 * max(1.0, abs(float(grid[k + 1] - grid[k])))
        cand.append(min(max(vc - eps if y0 >= floor else vc + eps, lo), hi))
    return sorted(set(cand))


# ------------------------------------------------------- solver assistance

def branch_priorities(model: milp.MilpModel) -> np.ndarray:
    """Branching order for the commitment models: unit on/off decisions
    first, then the largest-unit pick, then startup flags; the network
    activation indicators mostly snap once those settle."""
    prio = np.zeros(model.n_vars)
    for j, name in enumerate(model.var_names):
        if not model.is_binary[j]:
            continue
        if name.startswith("u_"):
            prio[j] = 3.0
        elif name.startswith("pick_"):
            prio[j] = 2.0
        elif name.startswith("su_"):
            prio[j] = 1.0
    return prio


def rounding_heuristic(
    case: GridCase,
    forecast: Forecast,
    model: milp.MilpModel,
    nadir_net: mlp.MlpNetwork | None = None,
    stability_net: mlp.MlpNetwork | None = None,
):
    """Incumbent finder for solve_milp over a commitment model.

    Rounds the relaxed commitments, repairs persistence windows and
    per-period capacity, projects the node's relaxed dispatch onto the
    repaired commitment (respecting ramp windows and the per-period
    energy balance), fixes startup flags and the largest-unit pick,
    derives every network activation from a forward pass on that
    dispatch, rejects configurations whose predicted nadir misses the
    floor, then prices the fully pinned configuration with a single LP
    over the remaining continuous variables.  Returns None whenever any
    stage fails; the solver audits whatever comes back.
    """
    names = UcNames(case, forecast)
    nt, ng = forecast.periods, case.n_gens
    gens = names.gens
    nodal = distribute_forecast(case, forecast)
    resid_mw = nodal.load_p.sum(axis=0) - nodal.wind_p.sum(axis=0)
    qload_mvar = nodal.load_q.sum(axis=0)
    p_min = np.array([g.p_min for g in case.generators])
    p_max = np.array([g.p_max for g in case.generators])
    q_hi = np.array([max(g.q_max, 0.0) for g in case.generators])
    ramp_up = np.array([g.ramp_up for g in case.generators])
    ramp_down = np.array([g.ramp_down for g in case.generators])
    min_up = np.array([g.min_up for g in case.generators], dtype=int)
    min_down = np.array([g.min_down for g in case.generators], dtype=int)
    marginal = np.array([g.cost_marginal for g in case.generators])
    fixed = np.array([g.cost_fixed for g in case.generators])
    merit = np.lexsort((np.arange(ng), marginal))  # cheap first, ties low
    u_idx = np.array(
        [[model.var(names.u(g, t)) for g in gens] for t in range(nt)]
    )
    ptot_idx = np.array(
        [[model.var(names.ptot(g, t)) for g in gens] for t in range(nt)]
    )
    has_freq = names.picked_mw(gens[0], 0) in model.var_names
    f_floor = _nadir_floor(model) if has_freq else -milp.INF
    nadir_f = mlp.fold_normalization(nadir_net) if nadir_net is not None else None
    stab_f = (
        mlp.fold_normalization(stability_net) if stability_net is not None else None
    )

    def persist(u: np.ndarray) -> None:
        # Extend every run to its minimum window, scanning forward.
        for g in range(ng):
            t = 0
            state = u[0, g]
            end = min(int(min_up[g] if state else min_down[g]), nt)
            u[0:end, g] = state
            t = end
            while t < nt:
                if u[t, g] == state:
                    t += 1
                    continue
                state = u[t, g]
                w = int(min_up[g] if state else min_down[g])
                end = min(t + w, nt)
                u[t:end, g] = state
                t = end

    def capacity(u: np.ndarray) -> bool:
        # Commit enough capacity for P and Q, shed excess minimum output.
        for t in range(nt):
            if resid_mw[t] < -1e-9:
                return False
            for _ in range(2 * ng + 2):
                on = u[t] > 0.5
                if (
                    p_max[on].sum() < resid_mw[t] - 1e-9
                    or q_hi[on].sum() < qload_mvar[t] - 1e-9
                ):
                    off = [j for j in merit if not on[j]]
                    if not off:
                        return False
                    u[t, off[0]] = 1.0
                    continue
                if p_min[on].sum() > resid_mw[t] + 1e-9:
                    committed = [j for j in merit[::-1] if on[j]]
                    u[t, committed[0]] = 0.0
                    continue
                break
            else:
                return False
        return True

    def repair(u: np.ndarray) -> bool:
        for _ in range(4):
            before = u.copy()
            persist(u)
            if not capacity(u):
                return False
            if np.array_equal(u, before):
                return True
        before = u.copy()
        persist(u)
        return np.array_equal(u, before)

    def project_dispatch(u: np.ndarray, p_ref: np.ndarray) -> np.ndarray | None:
        # Stay close to the relaxed dispatch while meeting the per-period
        # balance inside the ramp corridor implied by the commitments.
        p = np.zeros((nt, ng))
        for t in range(nt):
            on = u[t] > 0.5
            lo = np.where(on, p_min, 0.0)
            hi = np.where(on, p_max, 0.0)
            if t >= 1:
                prev_on = u[t - 1] > 0.5
                carry = on & prev_on
                lo[carry] = np.maximum(lo[carry], p[t - 1, carry] - ramp_down[carry])
                hi[carry] = np.minimum(hi[carry], p[t - 1, carry] + ramp_up[carry])
                fresh = on & ~prev_on  # a fresh start lands at minimum output
                lo[fresh] = hi[fresh] = p_min[fresh]
            if t + 1 < nt:
                stopping = on & (u[t + 1] <= 0.5)  # pre-shutdown output cap
                hi[stopping] = np.minimum(hi[stopping], ramp_down[stopping] + p_min[stopping])
            if np.any(lo > hi + 1e-9):
                return None
            tgt = np.clip(np.where(on, p_ref[t], 0.0), lo, hi)
            delta = resid_mw[t] - tgt.sum()
            if delta > 1e-12:
                room = hi - tgt
                total = room.sum()
                if total < delta - 1e-7:
                    return None
                if total > 0.0:
                    tgt = tgt + room * min(delta / total, 1.0)
            elif delta < -1e-12:
                room = tgt - lo
                total = room.sum()
                if total < -delta - 1e-7:
                    return None
                if total > 0.0:
                    tgt = tgt - room * min(-delta / total, 1.0)
            p[t] = tgt
        return p

    def activations(net: mlp.MlpNetwork, x: np.ndarray) -> list[np.ndarray]:
        acts = []
        h = x
        for m in range(len(net.weights) - 1):
            pre = h @ net.weights[m] + net.biases[m]
            acts.append((pre > 0.0).astype(float))
            h = np.maximum(pre, 0.0)
        return acts

    def ramp_ok(u: np.ndarray, p: np.ndarray) -> bool:
        for t in range(1, nt):
            for g in range(ng):
                on, was = u[t, g] > 0.5, u[t - 1, g] > 0.5
                if on and was:
                    if p[t, g] > p[t - 1, g] + ramp_up[g] + 1e-7:
                        return False
                    if p[t, g] < p[t - 1, g] - ramp_down[g] - 1e-7:
                        return False
                elif on and not was:
                    if abs(p[t, g] - p_min[g]) > 1e-7:
                        return False
                elif was and not on:
                    if p[t - 1, g] > ramp_down[g] + p_min[g] + 1e-7:
                        return False
        return True

    def best_fill(t: int, u_row: np.ndarray) -> tuple[float, np.ndarray] | None:
        # Cheapest dispatch for one period: among every (pick, megawatts)
        # choice whose predicted nadir clears the floor, merit-fill the
        # rest of the fleet capped at the pick and keep the lowest cost.
        comm = np.flatnonzero(u_row > 0.5)
        if comm.size == 0:
            return None
        on = u_row > 0.5
        best = None
        for gs in comm:
            others = comm[comm != gs]
            iv = _pick_interval(resid_mw[t], int(gs), others, p_min, p_max, pad=0.0)
            if iv is None:
                continue
            for v in _secure_v_candidates(
                nadir_f, u_row, int(gs), iv[0], iv[1], f_floor + 1e-6
            ):
                row = np.zeros(ng)
                row[gs] = v
                row[others] = p_min[others]
                rem = resid_mw[t] - row.sum()
                if rem < -1e-7:
                    continue
                for j in merit:
                    if j == gs or not on[j] or rem <= 0.0:
                        continue
                    add = min(rem, min(p_max[j], v) - row[j])
                    if add > 0.0:
                        row[j] += add
                        rem -= add
                if rem > 1e-7:
                    continue
                cost = float(marginal @ row)
                if best is None or cost < best[0]:
                    best = (cost, row)
        return best

    def secure_dispatch(u: np.ndarray) -> np.ndarray | None:
        p = np.zeros((nt, ng))
        for t in range(nt):
            got = best_fill(t, u[t])
            if got is None:
                return None
            p[t] = got[1]
        return p

    # Lazily built per-period menus of securable commitment patterns,
    # cheapest first; used to lift rounded commitments that no pick can
    # ever make secure.  Exponential in fleet size, so only small fleets.
    secure_menu: list[list[tuple[float, np.ndarray]] | None] = [None] * nt

    def menu(t: int) -> list[tuple[float, np.ndarray]]:
        if secure_menu[t] is None:
            opts = []
            for bits in np.ndindex(*([2] * ng)):
                u_row = np.array(bits, dtype=float)
                got = best_fill(t, u_row)
                if got is not None:
                    opts.append((got[0] + float(fixed @ u_row), u_row))
            opts.sort(key=lambda e: (e[0], tuple(e[1])))
            secure_menu[t] = opts
        return secure_menu[t]

    def secure_project(u: np.ndarray) -> bool:
        # Replace insecure period patterns by their cheapest secure
        # superset (falling back to the cheapest secure pattern), then
        # re-repair; settles in a few rounds or gives up.
        for _ in range(3):
            changed = False
            for t in range(nt):
                if best_fill(t, u[t]) is not None:
                    continue
                m = menu(t)
                if not m:
                    return False  # nothing can secure this period
                cur = u[t] > 0.5
                sup = [e for e in m if np.all(e[1][cur] > 0.5)]
                u[t] = (sup[0] if sup else m[0])[1].copy()
                changed = True
            if not changed:
                return True
            if not repair(u):
                return False
        return all(best_fill(t, u[t]) is not None for t in range(nt))

    def price(u: np.ndarray, p_est: np.ndarray):
        fixes: dict[int, float] = {}
        for t in range(nt):
            for gi in range(ng):
                fixes[int(u_idx[t, gi])] = u[t, gi]
                fixes[int(ptot_idx[t, gi])] = p_est[t, gi]
        for t in range(1, nt):
            for gi, g in enumerate(gens):
                fixes[model.var(names.start(g, t))] = max(0.0, u[t, gi] - u[t - 1, gi])
        if has_freq:
            for t in range(nt):
                on = np.flatnonzero(u[t] > 0.5)
                if on.size == 0:
                    return None
                gstar = int(on[np.argmax(p_est[t, on])])
                pickmw = np.zeros(ng)
                pickmw[gstar] = p_est[t, gstar]
                for gi, g in enumerate(gens):
                    fixes[model.var(names.pick(g, t))] = 1.0 if gi == gstar else 0.0
                if nadir_f is not None:
                    x_in = np.concatenate([u[t], pickmw])
                    if float(mlp.mlp_logits(nadir_f, x_in[None])[0, 0]) < f_floor + 1e-6:
                        return None  # predicted nadir misses the hard floor
                    acts = activations(nadir_f, x_in)
                    for m, layer in enumerate(acts):
                        for n, a in enumerate(layer):
                            fixes[model.var(f"{names.nadir_tag(t)}_a{m}n{n}")] = a
                if stab_f is not None:
                    acts = activations(
                        stab_f, np.concatenate([u[t], pickmw, p_est[t]])
                    )
                    for m, layer in enumerate(acts):
                        for n, a in enumerate(layer):
                            fixes[model.var(f"{names.stab_tag(t)}_a{m}n{n}")] = a
        lb = np.asarray(model.lb, dtype=float).copy()
        ub = np.asarray(model.ub, dtype=float).copy()
        for j, v in fixes.items():
            lb[j] = ub[j] = v
        try:
            sol = milp.solve_lp(model, lb, ub, want_duals=False)
        except milp.NumericalFailure:
            return None
        if sol.status != "optimal":
            return None
        return sol.x

    def heur(x_frac: np.ndarray):
        u = (x_frac[u_idx] > 0.5).astype(float)
        if not repair(u):
            return None
        if has_freq and nadir_f is not None and ng <= 8:
            if not secure_project(u):
                return None
        candidates = []
        p_proj = project_dispatch(u, x_frac[ptot_idx])
        if p_proj is not None:
            candidates.append(p_proj)
        if has_freq and nadir_f is not None:
            p_sec = secure_dispatch(u)
            if p_sec is not None and ramp_ok(u, p_sec):
                candidates.append(p_sec)
        for p_est in candidates:
            out = price(u, p_est)
            if out is not None:
                return out
        return None

    return heur


def _nadir_floor(model: milp.MilpModel) -> float:
    """Read the frequency floor back off the assembled model."""
    for con in model.constraints:
        if con.name.startswith("freqfloor_"):
            return float(con.rhs)
    return -milp.INF


# ---------------------------------------------------------------- schedules

@dataclass
class Schedule:
    """Decoded commitment plan with the cost split and any predictions."""

    gen_names: list[str]
    bus_ids: list[int]
    u: np.ndarray  # (T, G) 0/1
    dispatch_mw: np.ndarray  # (T, G) total output
    reactive_mvar: np.ndarray  # (T, G)
    startup: np.ndarray  # (T, G) 0/1, first row zero
    voltage_pu: np.ndarray  # (T, B)
    angle_rad: np.ndarray  # (T, B)
    picked_mw: np.ndarray | None  # (T, G) masked largest-unit output
    predicted_nadir_hz: np.ndarray | None  # (T,)
    stability_slack: np.ndarray | None  # (T,)
    stability_logits: np.ndarray | None  # (T, 2)
    cost_fuel: float
    cost_fixed: float
    cost_startup: float
    cost_stability: float
    objective: float

    @property
    def periods(self) -> int:
        return self.u.shape[0]


def extract_schedule(
    case: GridCase,
    forecast: Forecast,
    model: milp.MilpModel,
    solution: milp.MilpSolution,
    nadir_net: mlp.MlpNetwork | None = None,
    stability_net: mlp.MlpNetwork | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> Schedule:
    """Decode a solved model and audit any embedded network outputs
    against a direct forward pass on the decoded features."""
    if solution.x is None:
        raise UcError(f"no incumbent to extract (status {solution.status})")
    names = UcNames(case, forecast)
    nt, ng, nb = forecast.periods, case.n_gens, case.n_buses
    x = solution.x

    def grab(fn, cols, t) -> np.ndarray:
        return np.array([x[model.var(fn(c, t))] for c in cols])

    gens = names.gens
    u_raw = np.vstack([grab(names.u, gens, t) for t in range(nt)])
    pinc_raw = np.vstack([grab(names.pinc, gens, t) for t in range(nt)])
    disp = np.vstack([grab(names.ptot, gens, t) for t in range(nt)])
    qout = np.vstack([grab(names.q, gens, t) for t in range(nt)])
    start_raw = np.zeros((nt, ng))
    for t in range(1, nt):
        start_raw[t] = grab(names.start, gens, t)
    volt = np.vstack([grab(names.volt, names.buses, t) for t in range(nt)])
    angle = np.vstack([grab(names.angle, names.buses, t) for t in range(nt)])

    has_freq = names.picked_mw(gens[0], 0) in model.var_names
    picked = nadir = slack_v = logits = None
    if has_freq:
        picked = np.vstack([grab(names.picked_mw, gens, t) for t in range(nt)])
        nadir = np.array(
            [x[model.var(f"{names.nadir_tag(t)}_o0")] for t in range(nt)]
        )
        logits = np.vstack(
            [
                [x[model.var(f"{names.stab_tag(t)}_o{k}")] for k in (0, 1)]
                for t in range(nt)
            ]
        )
        slack_v = np.array([x[model.var(names.stab_slack(t))] for t in range(nt)])
        if nadir_net is not None:
            feats = np.concatenate([u_raw, picked], axis=1)
            direct = mlp.mlp_logits(nadir_net, feats)[:, 0]
            worst = float(np.max(np.abs(direct - nadir)))
            if worst > AUDIT_TOL:
                raise UcError(
                    f"nadir audit failed: encoded output differs from the "
                    f"forward pass by {worst:.3e}"
                )
        if stability_net is not None:
            feats = np.concatenate([u_raw, picked, disp], axis=1)
            direct = mlp.mlp_logits(stability_net, feats)
            worst = float(np.max(np.abs(direct - logits)))
            if worst > AUDIT_TOL:
                raise UcError(
                    f"stability audit failed: encoded logits differ from the "
                    f"forward pass by {worst:.3e}"
                )

    lam_m = np.array([g.cost_marginal for g in case.generators])
    lam_f = np.array([g.cost_fixed for g in case.generators])
    lam_s = np.array([g.cost_startup for g in case.generators])
    cost_fuel = float((pinc_raw * lam_m).sum())
    cost_fixed = float((u_raw * lam_f).sum())
    cost_start = float((start_raw * lam_s).sum())
    cost_stab = float(gamma * slack_v.sum()) if slack_v is not None else 0.0

    return Schedule(
        gen_names=gens,
        bus_ids=names.buses,
        u=np.rint(u_raw).astype(int),
        dispatch_mw=disp,
        reactive_mvar=qout,
        startup=np.rint(start_raw).astype(int),
        voltage_pu=volt,
        angle_rad=angle,
        picked_mw=picked,
        predicted_nadir_hz=nadir,
        stability_slack=slack_v,
        stability_logits=logits,
        cost_fuel=cost_fuel,
        cost_fixed=cost_fixed,
        cost_startup=cost_start,
        cost_stability=cost_stab,
        objective=float(solution.objective),
    )


def save_schedule(schedule: Schedule, path: str | Path) -> None:
    def arr(a):
        return None if a is None else np.asarray(a).tolist()

    doc = {
        "schema": 1,
        "gen_names": schedule.gen_names,
        "bus_ids": schedule.bus_ids,
        "u": arr(schedule.u),
        "dispatch_mw": arr(schedule.dispatch_mw),
        "reactive_mvar": arr(schedule.reactive_mvar),
        "startup": arr(schedule.startup),
        "voltage_pu": arr(schedule.voltage_pu),
        "angle_rad": arr(schedule.angle_rad),
        "picked_mw": arr(schedule.picked_mw),
        "predicted_nadir_hz": arr(schedule.predicted_nadir_hz),
        "stability_slack": arr(schedule.stability_slack),
        "stability_logits": arr(schedule.stability_logits),
        "costs": {
            "fuel": schedule.cost_fuel,
            "fixed": schedule.cost_fixed,
            "startup": schedule.cost_startup,
            "stability": schedule.cost_stability,
        },
        "objective": schedule.objective,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_schedule(path: str | Path) -> Schedule:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UcError(f"{path}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("schema") != 1:
        raise UcError(f"{path}: not a schedule file")

    def arr(key, dtype=float):
        v = doc[key]
        return None if v is None else np.asarray(v, dtype=dtype)

    costs = doc["costs"]
    return Schedule(
        gen_names=list(doc["gen_names"]),
        bus_ids=[int(b) for b in doc["bus_ids"]],
        u=arr("u", int),
        dispatch_mw=arr("dispatch_mw"),
        reactive_mvar=arr("reactive_mvar"),
        startup=arr("startup", int),
        voltage_pu=arr("voltage_pu"),
        angle_rad=arr("angle_rad"),
        picked_mw=arr("picked_mw"),
        predicted_nadir_hz=arr("predicted_nadir_hz"),
        stability_slack=arr("stability_slack"),
        stability_logits=arr("stability_logits"),
        cost_fuel=float(costs["fuel"]),
        cost_fixed=float(costs["fixed"]),
        cost_startup=float(costs["startup"]),
        cost_stability=float(costs["stability"]),
        objective=float(doc["objective"]),
    )


def schedule_to_csv(schedule: Schedule, path: str | Path) -> None:
    """Per-period plotting table: commitment, dispatch, predictions."""
    header = ["period"]
    header += [f"u_{g}" for g in schedule.gen_names]
    header += [f"p_{g}_mw" for g in schedule.gen_names]
    header += ["predicted_nadir_hz", "stability_slack"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(schedule.periods):
            row = [t]
            row += [int(v) for v in schedule.u[t]]
            row += [repr(float(v)) for v in schedule.dispatch_mw[t]]
            if schedule.predicted_nadir_hz is not None:
                row.append(repr(float(schedule.predicted_nadir_hz[t])))
                row.append(repr(float(schedule.stability_slack[t])))
            else:
                row += ["", ""]
            w.writerow(row)


# ------------------------------------------------------------ solve helpers

def solve_ordinary_uc(
    case: GridCase,
    forecast: Forecast,
    rel_gap: float = 1e-6,
    node_limit: int | None = None,
    time_limit: float | None = None,
) -> tuple[milp.MilpSolution, Schedule | None]:
    model = build_ordinary_uc(case, forecast)
    sol = milp.solve_milp(model, rel_gap=rel_gap, node_limit=node_limit,
                          time_limit=time_limit)
    if sol.x is None:
        return sol, None
    return sol, extract_schedule(case, forecast, model, sol)


def solve_fcuc(
    case: GridCase,
    forecast: Forecast,
    nadir_net: mlp.MlpNetwork,
    stability_net: mlp.MlpNetwork,
    f_ufls_hz: float,
    gamma: float = DEFAULT_GAMMA,
    rel_gap: float = 1e-6,
    node_limit: int | None = None,
    time_limit: float | None = None,
) -> tuple[milp.MilpSolution, Schedule | None]:
    model = build_fcuc(case, forecast, nadir_net, stability_net, f_ufls_hz, gamma)
    sol = milp.solve_milp(model, rel_gap=rel_gap, node_limit=node_limit,
                          time_limit=time_limit)
    if sol.x is None:
        return sol, None
    return sol, extract_schedule(
        case, forecast, model, sol, nadir_net, stability_net, gamma
    )
