"""Static grid description: buses, lines, machines, loads, wind, forecasts.

The case is a plain JSON document; everything downstream (sampling,
dynamics, commitment) reads from the frozen dataclasses defined here.
All powers are MW/MVar at nominal system base, impedance data is per
unit on that base, machine constants are per unit on the machine base.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np


class CaseError(ValueError):
    """Raised for malformed or inconsistent case/forecast files."""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    g: float  # series conductance, p.u.
    b: float  # series susceptance, p.u. (negative for inductive branches)


@dataclass(frozen=True)
class Generator:
    name: str
    bus: int
    p_min: float  # MW when committed
    p_max: float  # MW
    q_min: float  # MVar when committed
    q_max: float  # MVar
    ramp_up: float  # MW per period
    ramp_down: float  # MW per period
    min_up: int  # periods
    min_down: int  # periods
    cost_fixed: float  # currency per committed period
    cost_marginal: float  # currency per MWh above minimum output
    cost_startup: float  # currency per start
    inertia_h: float  # s, machine base
    mva_base: float  # MVA
    droop: float  # p.u. frequency per p.u. power, machine base
    t1: float  # governor valve time constant, s
    t2: float  # governor lead time constant, s
    t3: float  # governor reheat time constant, s
    damping: float  # p.u. torque per p.u. speed, machine base
    deadband_hz: float = 0.0  # governor deadband, Hz
    delivery_time_s: float = 10.0  # ramp-to-full-response time, s
    xd_prime: float = 0.3  # transient reactance, p.u. machine base


@dataclass(frozen=True)
class Load:
    name: str
    bus: int
    p_nominal: float  # MW
    q_nominal: float  # MVar


@dataclass(frozen=True)
class WindUnit:
    name: str
    bus: int
    capacity: float  # MW


@dataclass(frozen=True)
class GridCase:
    base_mva: float
    frequency_hz: float
    v_min: float  # p.u.
    v_max: float  # p.u.
    buses: tuple[int, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    wind: tuple[WindUnit, ...]

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    def bus_index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.buses)}

    def slack_bus(self) -> int:
        # Angle reference: lowest-numbered bus that hosts a generator.
        return min(g.bus for g in self.generators)


@dataclass(frozen=True)
class Forecast:
    periods: int
    load_mw: tuple[float, ...]  # system load per period
    wind_mw: tuple[float, ...]  # system wind infeed per period
    reactive_ratio: tuple[float, ...]  # Q/P per load, fixed power factor


@dataclass(frozen=True)
class NodalSeries:
    """Per-element injection series produced by distribute_forecast."""

    load_p: np.ndarray  # (n_loads, periods) MW
    load_q: np.ndarray  # (n_loads, periods) MVar
    wind_p: np.ndarray  # (n_wind, periods) MW


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise CaseError(msg)


def _number(obj: dict, key: str, ctx: str, default=None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise CaseError(f"{ctx}: missing key '{key}'")
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise CaseError(f"{ctx}: key '{key}' must be a number, got {v!r}")
    return float(v)


def validate_case(case: GridCase) -> None:
    """Check structural invariants; raises CaseError naming the element."""
    _require(case.base_mva > 0, "base: mva must be positive")
    _require(case.frequency_hz > 0, "base: frequency_hz must be positive")
    _require(0 < case.v_min <= case.v_max, "limits: need 0 < v_min <= v_max")
    _require(len(case.buses) > 0, "buses: empty")
    seen = set()
    for b in case.buses:
        _require(isinstance(b, int) and b > 0, f"bus {b!r}: ids are positive integers")
        _require(b not in seen, f"bus {b}: duplicate id")
        seen.add(b)
    bus_set = set(case.buses)

    _require(len(case.lines) > 0 or len(case.buses) == 1, "lines: empty")
    for ln in case.lines:
        ctx = f"line {ln.from_bus}-{ln.to_bus}"
        _require(ln.from_bus in bus_set, f"{ctx}: from_bus not a known bus")
        _require(ln.to_bus in bus_set, f"{ctx}: to_bus not a known bus")
        _require(ln.from_bus != ln.to_bus, f"{ctx}: self-loop")
        _require(ln.g >= 0, f"{ctx}: negative conductance")
        _require(ln.b != 0, f"{ctx}: zero susceptance")

    names = set()
    _require(len(case.generators) > 0, "generators: empty")
    for g in case.generators:
        ctx = f"generator {g.name}"
        _require(g.name not in names, f"{ctx}: duplicate name")
        names.add(g.name)
        _require(g.bus in bus_set, f"{ctx}: bus {g.bus} not a known bus")
        _require(g.p_max > 0, f"{ctx}: p_max must be positive")
        _require(0 <= g.p_min <= g.p_max, f"{ctx}: need 0 <= p_min <= p_max")
        _require(g.q_min <= g.q_max, f"{ctx}: need q_min <= q_max")
        _require(g.ramp_up > 0 and g.ramp_down > 0, f"{ctx}: ramps must be positive")
        _require(g.min_up >= 1 and g.min_down >= 1, f"{ctx}: min_up/min_down >= 1")
        _require(
            g.cost_fixed >= 0 and g.cost_marginal >= 0 and g.cost_startup >= 0,
            f"{ctx}: negative cost",
        )
        _require(g.inertia_h > 0, f"{ctx}: inertia_h must be positive")
        _require(g.mva_base > 0, f"{ctx}: mva_base must be positive")
        _require(g.droop > 0, f"{ctx}: droop must be positive")
        _require(g.t1 > 0 and g.t3 > 0 and g.t2 >= 0, f"{ctx}: bad governor constants")
        _require(g.damping >= 0, f"{ctx}: negative damping")
        _require(g.deadband_hz >= 0, f"{ctx}: negative deadband")
        _require(g.delivery_time_s > 0, f"{ctx}: delivery_time_s must be positive")
        _require(g.xd_prime > 0, f"{ctx}: xd_prime must be positive")

    for d in case.loads:
        ctx = f"load {d.name}"
        _require(d.name not in names, f"{ctx}: duplicate name")
        names.add(d.name)
        _require(d.bus in bus_set, f"{ctx}: bus {d.bus} not a known bus")
        _require(d.p_nominal >= 0 and d.q_nominal >= 0, f"{ctx}: negative nominal power")

    for w in case.wind:
        ctx = f"wind {w.name}"
        _require(w.name not in names, f"{ctx}: duplicate name")
        names.add(w.name)
        _require(w.bus in bus_set, f"{ctx}: bus {w.bus} not a known bus")
        _require(w.capacity > 0, f"{ctx}: capacity must be positive")

    # Connectivity: every bus reachable over lines.
    if len(case.buses) > 1:
        adj: dict[int, list[int]] = {b: [] for b in case.buses}
        for ln in case.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        stack = [case.buses[0]]
        reached = {case.buses[0]}
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in reached:
                    reached.add(nb)
                    stack.append(nb)
        missing = sorted(bus_set - reached)
        _require(not missing, f"disconnected grid: buses {missing} unreachable")


def case_from_dict(doc: dict) -> GridCase:
    for key in ("base", "limits", "buses", "lines", "generators", "loads", "wind"):
        _require(key in doc, f"case: missing top-level key '{key}'")
    base = doc["base"]
    limits = doc["limits"]
    try:
        buses = tuple(int(b) for b in doc["buses"])
    except (TypeError, ValueError) as exc:
        raise CaseError(f"buses: {exc}") from None

    lines = tuple(
        Line(
            from_bus=int(_number(ln, "from", f"line[{i}]")),
            to_bus=int(_number(ln, "to", f"line[{i}]")),
            g=_number(ln, "g", f"line[{i}]"),
            b=_number(ln, "b", f"line[{i}]"),
        )
        for i, ln in enumerate(doc["lines"])
    )
    gens = []
    for i, g in enumerate(doc["generators"]):
        ctx = f"generator[{i}]"
        name = g.get("name")
        _require(isinstance(name, str) and name != "", f"{ctx}: missing name")
        ctx = f"generator {name}"
        gens.append(
            Generator(
                name=name,
                bus=int(_number(g, "bus", ctx)),
                p_min=_number(g, "p_min", ctx),
                p_max=_number(g, "p_max", ctx),
                q_min=_number(g, "q_min", ctx),
                q_max=_number(g, "q_max", ctx),
                ramp_up=_number(g, "ramp_up", ctx),
                ramp_down=_number(g, "ramp_down", ctx),
                min_up=int(_number(g, "min_up", ctx)),
                min_down=int(_number(g, "min_down", ctx)),
                cost_fixed=_number(g, "cost_fixed", ctx),
                cost_marginal=_number(g, "cost_marginal", ctx),
                cost_startup=_number(g, "cost_startup", ctx),
                inertia_h=_number(g, "inertia_h", ctx),
                mva_base=_number(g, "mva_base", ctx),
                droop=_number(g, "droop", ctx),
                t1=_number(g, "t1", ctx),
                t2=_number(g, "t2", ctx),
                t3=_number(g, "t3", ctx),
                damping=_number(g, "damping", ctx),
                deadband_hz=_number(g, "deadband_hz", ctx, default=0.0),
                delivery_time_s=_number(g, "delivery_time_s", ctx, default=10.0),
                xd_prime=_number(g, "xd_prime", ctx, default=0.3),
            )
        )
    loads = []
    for i, d in enumerate(doc["loads"]):
        name = d.get("name")
        _require(isinstance(name, str) and name != "", f"load[{i}]: missing name")
        ctx = f"load {name}"
        loads.append(
            Load(
                name=name,
                bus=int(_number(d, "bus", ctx)),
                p_nominal=_number(d, "p_nominal", ctx),
                q_nominal=_number(d, "q_nominal", ctx),
            )
        )
    wind = []
    for i, w in enumerate(doc["wind"]):
        name = w.get("name")
        _require(isinstance(name, str) and name != "", f"wind[{i}]: missing name")
        ctx = f"wind {name}"
        wind.append(
            WindUnit(
                name=name,
                bus=int(_number(w, "bus", ctx)),
                capacity=_number(w, "capacity", ctx),
            )
        )

    case = GridCase(
        base_mva=_number(base, "mva", "base"),
        frequency_hz=_number(base, "frequency_hz", "base"),
        v_min=_number(limits, "v_min", "limits"),
        v_max=_number(limits, "v_max", "limits"),
        buses=buses,
        lines=lines,
        generators=tuple(gens),
        loads=tuple(loads),
        wind=tuple(wind),
    )
    validate_case(case)
    return case


def case_to_dict(case: GridCase) -> dict:
    return {
        "base": {"mva": case.base_mva, "frequency_hz": case.frequency_hz},
        "limits": {"v_min": case.v_min, "v_max": case.v_max},
        "buses": list(case.buses),
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "g": ln.g, "b": ln.b}
            for ln in case.lines
        ],
        "generators": [asdict(g) for g in case.generators],
        "loads": [asdict(d) for d in case.loads],
        "wind": [asdict(w) for w in case.wind],
    }


def load_case(path: str | Path) -> GridCase:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"{path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CaseError(f"{path}: top level must be an object")
    try:
        return case_from_dict(doc)
    except CaseError as exc:
        raise CaseError(f"{path}: {exc}") from None


def save_case(case: GridCase, path: str | Path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2, sort_keys=True) + "\n")


def load_forecast(path: str | Path, case: GridCase) -> Forecast:
    path = Path(path)
    try:
        rows = list(csv.reader(path.read_text().splitlines()))
    except OSError as exc:
        raise CaseError(f"{path}: {exc}") from None
    _require(len(rows) >= 2, f"{path}: need a header and at least one period")
    header = [c.strip() for c in rows[0]]
    _require(
        header == ["period", "load_mw", "wind_mw"],
        f"{path}: header must be period,load_mw,wind_mw",
    )
    load_mw, wind_mw = [], []
    for ln_no, row in enumerate(rows[1:], start=2):
        _require(len(row) == 3, f"{path}: line {ln_no}: expected 3 columns")
        try:
            period, p, w = int(row[0]), float(row[1]), float(row[2])
        except ValueError as exc:
            raise CaseError(f"{path}: line {ln_no}: {exc}") from None
        _require(period == ln_no - 1, f"{path}: line {ln_no}: periods must run 1,2,...")
        _require(p >= 0, f"{path}: line {ln_no}: negative load")
        _require(w >= 0, f"{path}: line {ln_no}: negative wind")
        load_mw.append(p)
        wind_mw.append(w)

    wind_cap = sum(w.capacity for w in case.wind)
    for t, w in enumerate(wind_mw):
        _require(
            w <= wind_cap * (1 + 1e-9),
            f"{path}: period {t + 1}: wind {w} MW exceeds installed capacity {wind_cap} MW",
        )
    ratios = tuple(
        (d.q_nominal / d.p_nominal) if d.p_nominal > 0 else 0.0 for d in case.loads
    )
    return Forecast(
        periods=len(load_mw),
        load_mw=tuple(load_mw),
        wind_mw=tuple(wind_mw),
        reactive_ratio=ratios,
    )


def distribute_forecast(case: GridCase, forecast: Forecast) -> NodalSeries:
    """Split system totals over elements proportionally to nominal shares.

    Loads split by nominal MW share (reactive follows the per-load power
    factor ratio); wind splits by capacity share.  Column sums reproduce
    the system series exactly up to roundoff.
    """
    p_nom = np.array([d.p_nominal for d in case.loads], dtype=float)
    total = p_nom.sum()
    if total <= 0:
        raise CaseError("distribute_forecast: total nominal load is zero")
    shares = p_nom / total
    load_series = np.asarray(forecast.load_mw, dtype=float)
    load_p = np.outer(shares, load_series)
    load_q = load_p * np.asarray(forecast.reactive_ratio, dtype=float)[:, None]

    wind_series = np.asarray(forecast.wind_mw, dtype=float)
    if case.wind:
        caps = np.array([w.capacity for w in case.wind], dtype=float)
        wind_p = np.outer(caps / caps.sum(), wind_series)
    else:
        _require(not np.any(wind_series > 0), "forecast has wind but case has no wind units")
        wind_p = np.zeros((0, forecast.periods))
    return NodalSeries(load_p=load_p, load_q=load_q, wind_p=wind_p)


def bundled_case_path(name: str) -> Path:
    """Filesystem path of a case or forecast shipped with the package."""
    root = resources.files("fcuc").joinpath("cases")
    p = Path(str(root.joinpath(name)))
    if not p.exists():
        available = sorted(q.name for q in Path(str(root)).iterdir())
        raise CaseError(f"no bundled file {name!r}; available: {available}")
    return p
