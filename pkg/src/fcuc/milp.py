"""Self-contained mixed-integer linear programming.

A bounded-variable primal simplex (two-phase, product-form updates on a
sparse LU factorization, Bland's rule as the anti-cycling safeguard)
drives a best-bound branch-and-bound over binary variables.  Everything
is deterministic: entering/leaving ties and branching ties break by
lowest index, children are explored down-branch first.

The LP text export/import pair gives an escape hatch to external
solvers for instances beyond what this solver is meant for.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = float("inf")

FEAS_TOL = 1e-7  # primal feasibility
DUAL_TOL = 1e-9  # reduced-cost optimality
INT_TOL = 1e-6  # binary integrality
PIVOT_TOL = 1e-10  # smallest usable pivot element
PIVOT_SAFE = 1e-7  # below this, re-price against a fresh factorization
DEGEN_STREAK = 25  # degenerate steps before switching to Bland's rule


class MilpError(ValueError):
    """Raised for malformed models or file formats."""


class NumericalFailure(RuntimeError):
    """Simplex gave up; carries the pivot count in .pivots."""

    def __init__(self, msg: str, pivots: int):
        super().__init__(f"{msg} (after {pivots} pivots)")
        self.pivots = pivots


@dataclass
class _Constraint:
    name: str
    terms: list[tuple[int, float]]
    sense: str  # "<=", ">=", "="
    rhs: float


class MilpModel:
    """Minimization model over bounded continuous and binary variables."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.is_binary: list[bool] = []
        self.constraints: list[_Constraint] = []
        self._var_index: dict[str, int] = {}
        self._con_names: set[str] = set()

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_cons(self) -> int:
        return len(self.constraints)

    def add_var(
        self,
        name: str,
        lb: float = 0.0,
        ub: float = INF,
        obj: float = 0.0,
        binary: bool = False,
    ) -> int:
        if name in self._var_index:
            raise MilpError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise MilpError(f"variable {name}: lb {lb} > ub {ub}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.is_binary.append(binary)
        self._var_index[name] = idx
        return idx

    def var(self, name: str) -> int:
        return self._var_index[name]

    def add_constraint(
        self, name: str, terms: list[tuple[int, float]], sense: str, rhs: float
    ) -> int:
        if sense not in ("<=", ">=", "="):
            raise MilpError(f"constraint {name}: bad sense {sense!r}")
        if name in self._con_names:
            raise MilpError(f"duplicate constraint name {name!r}")
        merged: dict[int, float] = {}
        for j, c in terms:
            if not 0 <= j < self.n_vars:
                raise MilpError(f"constraint {name}: unknown variable index {j}")
            if c != 0.0:
                merged[j] = merged.get(j, 0.0) + float(c)
        self._con_names.add(name)
        self.constraints.append(
            _Constraint(name, sorted(merged.items()), sense, float(rhs))
        )
        return len(self.constraints) - 1

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.dot(self.obj, x))


def check_solution(model: MilpModel, x: np.ndarray, tol: float = 1e-6) -> list[str]:
    """Independent feasibility audit; returns a list of violation messages."""
    x = np.asarray(x, dtype=float)
    out = []
    if x.shape != (model.n_vars,):
        return [f"solution length {x.shape} != {model.n_vars} variables"]
    for j in range(model.n_vars):
        if x[j] < model.lb[j] - tol or x[j] > model.ub[j] + tol:
            out.append(
                f"variable {model.var_names[j]}={x[j]!r} outside "
                f"[{model.lb[j]}, {model.ub[j]}]"
            )
        if model.is_binary[j] and abs(x[j] - round(x[j])) > INT_TOL:
            out.append(f"binary {model.var_names[j]}={x[j]!r} not integral")
    for con in model.constraints:
        lhs = sum(c * x[j] for j, c in con.terms)
        scale = 1.0 + abs(con.rhs)
        if con.sense == "<=" and lhs > con.rhs + tol * scale:
            out.append(f"constraint {con.name}: {lhs!r} > {con.rhs!r}")
        elif con.sense == ">=" and lhs < con.rhs - tol * scale:
            out.append(f"constraint {con.name}: {lhs!r} < {con.rhs!r}")
        elif con.sense == "=" and abs(lhs - con.rhs) > tol * scale:
            out.append(f"constraint {con.name}: {lhs!r} != {con.rhs!r}")
    return out


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None
    duals: np.ndarray | None  # one per constraint row
    reduced_costs: np.ndarray | None  # one per structural variable
    iterations: int
    # Optimal basis snapshot (basis, vstat) for warm-starting a re-solve
    # after bound changes; only populated when the caller asks for it.
    basis: tuple | None = None


@dataclass
class MilpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded" | "node-limit" | "time-limit"
    x: np.ndarray | None
    objective: float | None
    best_bound: float
    nodes: int
    gap: float


# ------------------------------------------------------------------ simplex

class _Standardized:
    """Rows as equalities over [structural | slack] bounded columns."""

    def __init__(self, model: MilpModel):
        self.model = model
        n, m = model.n_vars, model.n_cons
        self.n, self.m = n, m
        rows, cols, vals = [], [], []
        b = np.zeros(m)
        slack_lb = np.zeros(m)
        slack_ub = np.zeros(m)
        for i, con in enumerate(model.constraints):
            for j, c in con.terms:
                rows.append(i)
                cols.append(j)
                vals.append(c)
            b[i] = con.rhs
            if con.sense == "<=":
                slack_lb[i], slack_ub[i] = 0.0, INF
            elif con.sense == ">=":
                slack_lb[i], slack_ub[i] = -INF, 0.0
            else:
                slack_lb[i], slack_ub[i] = 0.0, 0.0
        a_struct = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
        # Equilibrate rows with powers of two (exact in floating point) so
        # penalty rows and unit-sum rows yield pivots of comparable size.
        if m:
            row_max = np.maximum(abs(a_struct).max(axis=1).toarray().ravel(), 1e-12)
        else:
            row_max = np.ones(0)
        self.row_scale = np.exp2(np.round(np.log2(row_max)))
        d_inv = sp.diags(1.0 / self.row_scale, format="csc") if m else sp.eye(0, format="csc")
        self.a = sp.hstack([d_inv @ a_struct, d_inv], format="csc")
        self.b = b / self.row_scale if m else b
        self.lb0 = np.concatenate([np.asarray(model.lb, dtype=float), slack_lb])
        self.ub0 = np.concatenate([np.asarray(model.ub, dtype=float), slack_ub])
        self.c = np.concatenate([np.asarray(model.obj, dtype=float), np.zeros(m)])


class _SingularBasis(Exception):
    """Internal: the basis factorization failed; the run can be retried
    with more conservative pivoting."""


class _DualStall(Exception):
    """Internal: a warm-started re-optimization made no progress; the
    caller falls back to a cold solve."""


class _Simplex:
    """One bounded-variable primal simplex run (phase 1 + phase 2)."""

    def __init__(self, std: _Standardized, lb: np.ndarray, ub: np.ndarray,
                 max_pivots: int | None = None, refactor_every: int = 60,
                 force_bland: bool = False):
        self.std = std
        self.m = std.m
        # Artificial columns appended after [structural | slack].
        self.n_real = std.n + std.m
        self.lb = np.concatenate([lb, np.zeros(self.m)])
        self.ub = np.concatenate([ub, np.full(self.m, INF)])
        self.pivots = 0
        self.max_pivots = max_pivots or (20 * (self.n_real + self.m) + 10_000)
        self.refactor_every = refactor_every
        self.force_bland = force_bland
        self._build_start()

    # -- setup -----------------------------------------------------------
    def _build_start(self) -> None:
        std = self.std
        n_all = self.n_real + self.m
        x = np.zeros(n_all)
        vstat = np.zeros(n_all, dtype=np.int8)  # 0 at-lb, 1 at-ub, 2 basic, 3 free
        for j in range(self.n_real):
            if np.isfinite(self.lb[j]):
                x[j], vstat[j] = self.lb[j], 0
            elif np.isfinite(self.ub[j]):
                x[j], vstat[j] = self.ub[j], 1
            else:
                x[j], vstat[j] = 0.0, 3
        resid = std.b - std.a @ x[: self.n_real]
        art_sign = np.ones(self.m)
        basis = np.empty(self.m, dtype=int)
        art_used = np.zeros(self.m, dtype=bool)
        for i in range(self.m):
            s = std.n + i  # slack column of row i
            val = np.clip(resid[i] + x[s], self.lb[s], self.ub[s])
            leftover = resid[i] + x[s] - val
            x[s] = val
            if abs(leftover) <= FEAS_TOL and vstat[s] != 2:
                basis[i] = s
                vstat[s] = 2
            else:
                a = self.n_real + i
                art_sign[i] = 1.0 if leftover >= 0 else -1.0
                x[a] = abs(leftover)
                basis[i] = a
                vstat[a] = 2
                art_used[i] = True
                vstat[s] = 0 if x[s] == self.lb[s] else 1
        self.art_sign = art_sign
        self.x = x
        self.vstat = vstat
        self.basis = basis
        self.need_phase1 = bool(art_used.any())
        # Artificials that were never needed are pinned at zero now.
        self.ub[self.n_real :][~art_used] = 0.0
        self.lu = None
        self.etas: list[tuple[int, np.ndarray]] = []
        self.a_full = sp.hstack(
            [self.std.a, sp.diags(self.art_sign, format="csc")], format="csc"
        )
        self.at_full = self.a_full.T.tocsr()
        self._refactor()

    def _refactor(self) -> None:
        bmat = self.a_full[:, self.basis].tocsc()
        try:
            self.lu = spla.splu(bmat)
        except RuntimeError:
            raise _SingularBasis(self.pivots) from None
        self.etas = []
        # Recompute basic values from the nonbasic point to kill drift.
        x_nb = self.x.copy()
        x_nb[self.basis] = 0.0
        resid = self.std.b - self.a_full @ x_nb
        xb = self.lu.solve(resid)
        if not np.all(np.isfinite(xb)):
            raise _SingularBasis(self.pivots)
        self.x[self.basis] = xb

    # -- linear algebra ---------------------------------------------------
    def _ftran(self, col: np.ndarray) -> np.ndarray:
        z = self.lu.solve(col)
        for r, w in self.etas:
            t = z[r] / w[r]
            if t != 0.0:
                z = z - w * t
            z[r] = t
        return z

    def _btran_costs(self, c_basis: np.ndarray) -> np.ndarray:
        z = c_basis.copy()
        for r, w in reversed(self.etas):
            z[r] = (z[r] - w @ z + w[r] * z[r]) / w[r]
        return self.lu.solve(z, trans="T")

    # -- core loop --------------------------------------------------------
    def _ratio(self, j: int, direction: float):
        """Entering column in basis coordinates plus a two-pass ratio test.

        Pass one finds the largest step that keeps every basic variable
        within FEAS_TOL of its bound (t_rel). Any row whose exact ratio is
        below that window may leave, which lets the caller prefer rows with
        large pivot elements over the razor-thin exact minimum.
        """
        col = self.a_full[:, [j]].toarray().ravel()
        w = self._ftran(col)
        step = direction * w
        xb = self.x[self.basis]
        lbb = self.lb[self.basis]
        ubb = self.ub[self.basis]
        t_basic = np.full(self.m, INF)
        t_relax = np.full(self.m, INF)
        pos = step > PIVOT_TOL
        if pos.any():
            t_basic[pos] = (xb[pos] - lbb[pos]) / step[pos]
            t_relax[pos] = (xb[pos] - lbb[pos] + FEAS_TOL) / step[pos]
        neg = step < -PIVOT_TOL
        if neg.any():
            t_basic[neg] = (xb[neg] - ubb[neg]) / step[neg]
            t_relax[neg] = (xb[neg] - ubb[neg] - FEAS_TOL) / step[neg]
        t_basic = np.maximum(t_basic, 0.0)
        t_rel = max(float(t_relax.min()), 0.0) if self.m else INF
        return w, step, xb, lbb, ubb, t_basic, t_rel

    def _iterate(self, costs: np.ndarray, phase1: bool) -> str:
        degen = 0
        bland = self.force_bland
        while True:
            if self.pivots >= self.max_pivots:
                raise NumericalFailure("pivot budget exhausted", self.pivots)
            if phase1:
                obj = costs[self.basis] @ self.x[self.basis]
                if obj <= FEAS_TOL:
                    return "feasible"
            y = self._btran_costs(costs[self.basis])
            d = costs - self.at_full @ y
            at_lb = (self.vstat == 0) & (d < -DUAL_TOL)
            at_ub = (self.vstat == 1) & (d > DUAL_TOL)
            free = (self.vstat == 3) & (np.abs(d) > DUAL_TOL)
            movable = self.lb < self.ub  # fixed columns never enter
            cand = (at_lb | at_ub | free) & movable
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                return "feasible" if not phase1 else (
                    "feasible" if costs[self.basis] @ self.x[self.basis] <= FEAS_TOL
                    else "infeasible"
                )
            if bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if (self.vstat[j] == 0 or (self.vstat[j] == 3 and d[j] < 0)) else -1.0

            t_flip = INF
            if self.vstat[j] in (0, 1) and np.isfinite(self.lb[j]) and np.isfinite(self.ub[j]):
                t_flip = self.ub[j] - self.lb[j]

            outcome = r = t_star = None
            for attempt in (0, 1):
                w, step, xb, lbb, ubb, t_basic, t_rel = self._ratio(j, direction)
                if not np.isfinite(min(t_rel, t_flip)):
                    outcome = "unbounded"
                    break
                if t_flip <= t_rel:
                    outcome = "flip"
                    break
                # Rows blocking within the tolerance window; among them keep
                # only trustworthy pivot elements when any exist.
                near = np.flatnonzero(t_basic <= t_rel)
                big = near[np.abs(step[near]) >= PIVOT_SAFE]
                pick = big if big.size else near
                if bland:
                    r = int(pick[np.argmin(self.basis[pick])])
                else:
                    r = int(pick[np.argmax(np.abs(step[pick]))])
                t_star = t_basic[r]
                # A pivot this small is only trusted against a fresh
                # factorization; re-price once and redo the ratio test.
                if abs(step[r]) >= PIVOT_SAFE or not self.etas or attempt:
                    outcome = "pivot"
                    break
                self._refactor()
            if outcome == "unbounded":
                return "unbounded"

            if outcome == "flip":
                # Bound flip: entering variable runs to its opposite bound.
                self.x[self.basis] = xb - t_flip * step
                if self.vstat[j] == 0:
                    self.x[j] = self.ub[j]
                    self.vstat[j] = 1
                else:
                    self.x[j] = self.lb[j]
                    self.vstat[j] = 0
                self.pivots += 1
                continue

            if t_star <= 1e-11:
                degen += 1
                if degen >= DEGEN_STREAK:
                    bland = True
            else:
                degen = 0
                bland = self.force_bland

            leave = self.basis[r]
            self.x[self.basis] = xb - t_star * step
            new_val = self.x[j] + direction * t_star
            # Snap the leaving variable onto the bound it hit.
            if step[r] > 0:
                self.x[leave] = lbb[r]
                self.vstat[leave] = 0
            else:
                self.x[leave] = ubb[r]
                self.vstat[leave] = 1
            if leave >= self.n_real:
                self.ub[leave] = 0.0  # artificial done, never re-enters
            self.x[j] = new_val
            self.vstat[j] = 2
            self.basis[r] = j
            self.etas.append((r, w))
            self.pivots += 1
            if len(self.etas) >= self.refactor_every:
                self._refactor()

    def solve(self, costs_phase2: np.ndarray) -> tuple[str, np.ndarray | None]:
        c1 = np.zeros(self.n_real + self.m)
        c1[self.n_real :] = 1.0
        if self.need_phase1:
            status = self._iterate(c1, phase1=True)
            if status == "infeasible":
                return "infeasible", None
            if status == "unbounded":  # cannot happen: phase-1 objective >= 0
                raise NumericalFailure("phase-1 unbounded", self.pivots)
            infeas = c1[self.basis] @ self.x[self.basis]
            if infeas > FEAS_TOL:
                return "infeasible", None
        # Artificials are pinned at zero for phase 2.
        self.ub[self.n_real :] = 0.0
        self.lb[self.n_real :] = 0.0
        c2 = np.concatenate([costs_phase2, np.zeros(self.m)])
        status = self._iterate(c2, phase1=False)
        if status == "unbounded":
            return "unbounded", None
        self._refactor()
        return "optimal", self.x[: self.n_real].copy()

    def warm_solve(self, costs_phase2: np.ndarray, basis: np.ndarray,
                   vstat: np.ndarray) -> tuple[str, np.ndarray | None]:
        """Re-optimize from an optimal basis after bound changes only.

        Duals ignore variable bounds, so the parent basis stays dual
        feasible and a bounded-variable dual simplex restores primal
        feasibility in a few pivots instead of re-running both phases.
        Raises _SingularBasis or _DualStall when the start is unusable.
        """
        self.lb[self.n_real:] = 0.0
        self.ub[self.n_real:] = 0.0
        self.basis = basis.copy()
        self.vstat = vstat.copy()
        x = np.where(self.vstat == 1, self.ub, self.lb)
        x[self.vstat == 3] = 0.0
        x[~np.isfinite(x)] = 0.0
        self.x = x
        self._refactor()  # recomputes every basic value for the new bounds
        c2 = np.concatenate([costs_phase2, np.zeros(self.m)])
        status = self._dual_iterate(c2)
        if status == "infeasible":
            return "infeasible", None
        # Polish with the primal loop; normally zero pivots remain.
        status = self._iterate(c2, phase1=False)
        if status == "unbounded":
            return "unbounded", None
        self._refactor()
        return "optimal", self.x[: self.n_real].copy()

    def _dual_iterate(self, costs: np.ndarray) -> str:
        """Drive out primal infeasibility while keeping dual feasibility."""
        limit = 200 + self.m
        for _ in range(limit):
            xb = self.x[self.basis]
            lbb = self.lb[self.basis]
            ubb = self.ub[self.basis]
            below = lbb - xb
            above = xb - ubb
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL:
                return "feasible"
            to_lb = below[r] >= above[r]
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self._btran_costs(e)
            alpha = self.at_full @ rho
            y = self._btran_costs(costs[self.basis])
            d = costs - self.at_full @ y
            # Admissible entering columns must move the leaving basic
            # toward its violated bound: x_B[r] = const - alpha . x_N.
            if to_lb:  # leaving basic must increase
                ok_lb = (self.vstat == 0) & (alpha < -PIVOT_TOL)
                ok_ub = (self.vstat == 1) & (alpha > PIVOT_TOL)
            else:  # leaving basic must decrease
                ok_lb = (self.vstat == 0) & (alpha > PIVOT_TOL)
                ok_ub = (self.vstat == 1) & (alpha < -PIVOT_TOL)
            ok_fr = (self.vstat == 3) & (np.abs(alpha) > PIVOT_TOL)
            idx = np.flatnonzero((ok_lb | ok_ub | ok_fr) & (self.lb < self.ub))
            if idx.size == 0:
                return "infeasible"
            ratios = np.abs(d[idx]) / np.abs(alpha[idx])
            near = idx[ratios <= ratios.min() + DUAL_TOL]
            j = int(near[np.argmax(np.abs(alpha[near]))])
            col = self.a_full[:, [j]].toarray().ravel()
            w = self._ftran(col)
            if abs(w[r]) < PIVOT_TOL:
                if self.etas:
                    self._refactor()
                    continue
                raise _DualStall(self.pivots)
            bnd = lbb[r] if to_lb else ubb[r]
            delta = (xb[r] - bnd) / w[r]
            leave = self.basis[r]
            self.x[self.basis] = xb - delta * w
            self.x[leave] = bnd
            self.vstat[leave] = 0 if to_lb else 1
            if leave >= self.n_real:
                self.ub[leave] = 0.0  # artificial done, never re-enters
            self.x[j] = self.x[j] + delta
            self.vstat[j] = 2
            self.basis[r] = j
            self.etas.append((r, w))
            self.pivots += 1
            if len(self.etas) >= self.refactor_every:
                self._refactor()
        raise _DualStall(self.pivots)

    def duals(self, costs_phase2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c2 = np.concatenate([costs_phase2, np.zeros(self.m)])
        y = self._btran_costs(c2[self.basis])
        d = c2[: self.n_real] - (self.at_full @ y)[: self.n_real]
        return y, d[: self.std.n]


def _solve_std(
    std: _Standardized,
    lb: np.ndarray,
    ub: np.ndarray,
    want_duals: bool = False,
    warm: tuple | None = None,
    want_basis: bool = False,
) -> LpSolution:
    if np.any(lb > ub):
        return LpSolution("infeasible", None, None, None, None, 0)
    n = std.n
    if std.m == 0:
        # Pure bound problem: each variable sits at its cheaper bound.
        c = std.c[:n]
        x = np.empty(n)
        for j in range(n):
            if c[j] > 0:
                x[j] = lb[j]
            elif c[j] < 0:
                x[j] = ub[j]
            elif np.isfinite(lb[j]):
                x[j] = lb[j]
            elif np.isfinite(ub[j]):
                x[j] = min(ub[j], 0.0)
            else:
                x[j] = 0.0
            if not np.isfinite(x[j]):
                return LpSolution("unbounded", None, None, None, None, 0)
        return LpSolution("optimal", x, float(c @ x), np.zeros(0), c.copy(), 0)
    sx = status = x_full = None
    if warm is not None:
        try:
            sx = _Simplex(std, lb, ub, refactor_every=60)
            status, x_full = sx.warm_solve(std.c, warm[0], warm[1])
        except (_SingularBasis, _DualStall, NumericalFailure):
            sx = status = x_full = None  # cold restart below
    if status is None:
        # Retry ladder: if a basis factorization goes singular, restart the
        # LP with more frequent refactoring and Bland's rule. Deterministic,
        # so repeated runs still produce identical results.
        attempts = ((60, False), (30, True), (12, True))
        for k, (refactor_every, force_bland) in enumerate(attempts):
            sx = _Simplex(std, lb, ub, refactor_every=refactor_every,
                          force_bland=force_bland)
            try:
                status, x_full = sx.solve(std.c)
                break
            except _SingularBasis:
                if k == len(attempts) - 1:
                    raise NumericalFailure(
                        "singular basis despite conservative pivoting", sx.pivots)
    if status != "optimal":
        return LpSolution(status, None, None, None, None, sx.pivots)
    x = x_full[:n]
    obj = float(std.c[:n] @ x)
    duals = red = None
    if want_duals:
        duals, red = sx.duals(std.c)
        duals = duals / std.row_scale  # undo row equilibration
    basis = (sx.basis.copy(), sx.vstat.copy()) if want_basis else None
    return LpSolution("optimal", x, obj, duals, red, sx.pivots, basis)


def solve_lp(
    model: MilpModel,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    want_duals: bool = True,
) -> LpSolution:
    """Solve the continuous relaxation (binaries relax to [0, 1]).

    `lb`/`ub` override the structural variable bounds, which lets a
    caller price a partially fixed configuration without rebuilding the
    model.
    """
    std = _Standardized(model)
    lb_all = std.lb0.copy()
    ub_all = std.ub0.copy()
    if lb is not None:
        lb_all[: std.n] = np.maximum(lb_all[: std.n], np.asarray(lb, dtype=float))
    if ub is not None:
        ub_all[: std.n] = np.minimum(ub_all[: std.n], np.asarray(ub, dtype=float))
    return _solve_std(std, lb_all, ub_all, want_duals=want_duals)


# ------------------------------------------------------------ branch & bound

def _tighten_singletons(std: _Standardized, lb: np.ndarray, ub: np.ndarray) -> tuple[bool, np.ndarray]:
    """Fold single-variable rows into bounds; returns (feasible, keep_mask)."""
    keep = np.ones(std.m, dtype=bool)
    for i, con in enumerate(std.model.constraints):
        if len(con.terms) != 1:
            continue
        j, c = con.terms[0]
        if c == 0.0:
            continue
        val = con.rhs / c
        if con.sense == "=":
            lo, hi = val, val
        elif (con.sense == "<=") == (c > 0):
            lo, hi = -INF, val
        else:
            lo, hi = val, INF
        lb[j] = max(lb[j], lo)
        ub[j] = min(ub[j], hi)
        keep[i] = False
        if lb[j] > ub[j] + FEAS_TOL:
            return False, keep
    return True, keep


def _reduce_std(std: _Standardized, keep: np.ndarray, lb: np.ndarray, ub: np.ndarray):
    """Drop folded rows; returns (reduced std, reduced lb, reduced ub)."""
    r = object.__new__(_Standardized)
    r.model = std.model
    r.n = std.n
    r.m = int(keep.sum())
    r.row_scale = std.row_scale[keep]
    a_struct = std.a[:, : std.n].tocsr()[keep].tocsc()
    d_inv = sp.diags(1.0 / r.row_scale, format="csc") if r.m else sp.eye(0, format="csc")
    r.a = sp.hstack([a_struct, d_inv], format="csc")
    r.b = std.b[keep]
    sl = std.n + np.flatnonzero(keep)
    r.lb0 = np.concatenate([lb[: std.n], lb[sl]])
    r.ub0 = np.concatenate([ub[: std.n], ub[sl]])
    r.c = np.concatenate([std.c[: std.n], np.zeros(r.m)])
    return r, r.lb0.copy(), r.ub0.copy()


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: list = field(compare=False)  # [(var, lb, ub), ...]
    # Parent's optimal (basis, vstat) for a dual-simplex warm start.
    warm: tuple | None = field(default=None, compare=False, repr=False)


def solve_milp(
    model: MilpModel,
    rel_gap: float = 1e-6,
    node_limit: int | None = None,
    time_limit: float | None = None,
    heuristic=None,
    branch_priority: np.ndarray | None = None,
) -> MilpSolution:
    """Best-bound branch and bound over the binary variables.

    Branches on the binary with fractional part closest to one half
    (ties to the lowest index); among the fractional binaries only those
    of maximal `branch_priority` are considered, so structural decisions
    can be forced ahead of derived indicators.  The child matching the
    rounded LP value is explored first among equal bounds.  `heuristic`,
    if given, maps a node's fractional LP point to a candidate feasible
    vector (or None); candidates are audited with check_solution before
    being accepted as incumbents, and it is invoked at the root and then
    periodically while the search runs.
    """
    t0 = time.monotonic()
    std = _Standardized(model)
    lb = std.lb0.copy()
    ub = std.ub0.copy()
    binaries = np.flatnonzero(model.is_binary)
    if branch_priority is not None:
        branch_priority = np.asarray(branch_priority, dtype=float)
        if branch_priority.shape != (model.n_vars,):
            raise ValueError("branch_priority must give one value per variable")
        prio = branch_priority[binaries]
    else:
        prio = np.zeros(binaries.size)

    ok, keep = _tighten_singletons(std, lb, ub)
    if not ok:
        return MilpSolution("infeasible", None, None, INF, 0, INF)
    if not keep.all():
        std, lb, ub = _reduce_std(std, keep, lb, ub)

    def node_lp(fixes, warm=None) -> LpSolution:
        nlb, nub = lb.copy(), ub.copy()
        for j, flb, fub in fixes:
            nlb[j] = max(nlb[j], flb)
            nub[j] = min(nub[j], fub)
        return _solve_std(std, nlb, nub, warm=warm, want_basis=True)

    def gap_of(inc: float, bb: float) -> float:
        if inc >= INF:
            return INF
        return max(0.0, (inc - bb) / max(1e-10, abs(inc)))

    incumbent_x = None
    incumbent_obj = INF
    nodes = 0
    seq = 0
    heap: list[_Node] = [_Node(-INF, seq, [])]
    status = None
    proven_bound = -INF  # valid lower bound on the optimum

    while heap:
        if node_limit is not None and nodes >= node_limit:
            status = "node-limit"
            break
        if time_limit is not None and time.monotonic() - t0 > time_limit:
            status = "time-limit"
            break
        node = heap[0]
        # Best-bound order: the top of the heap bounds everything left.
        if incumbent_obj < INF and (
            node.bound >= incumbent_obj - 1e-9
            or gap_of(incumbent_obj, node.bound) <= rel_gap
        ):
            proven_bound = max(node.bound, proven_bound)
            status = "optimal"
            break
        heapq.heappop(heap)
        nodes += 1
        sol = node_lp(node.fixes, node.warm)
        if sol.status == "infeasible":
            continue
        if sol.status == "unbounded":
            return MilpSolution("unbounded", None, None, -INF, nodes, INF)
        assert sol.x is not None and sol.objective is not None
        if sol.objective >= incumbent_obj - 1e-9:
            continue
        frac = sol.x[binaries] if binaries.size else np.empty(0)
        dist = np.abs(frac - np.round(frac)) if binaries.size else np.empty(0)
        if binaries.size == 0 or np.all(dist <= INT_TOL):
            bad = check_solution(model, sol.x, tol=1e-6)
            if bad:
                raise NumericalFailure(
                    f"integral node failed the feasibility audit: {bad[0]}", nodes
                )
            incumbent_x = sol.x
            incumbent_obj = sol.objective
            continue
        if heuristic is not None and (incumbent_x is None or nodes % 16 == 0):
            cand = heuristic(sol.x)
            if cand is not None:
                cand = np.asarray(cand, dtype=float)
                cobj = model.objective_value(cand)
                if cobj < incumbent_obj - 1e-12 and not check_solution(model, cand, tol=1e-6):
                    incumbent_x = cand
                    incumbent_obj = cobj
        # Branch within the top priority class on the fractional binary
        # closest to one half, ties to the lowest index.
        fractional = np.flatnonzero(dist > INT_TOL)
        top = fractional[prio[fractional] == prio[fractional].max()]
        scores = np.abs(frac[top] - 0.5)
        pick = top[int(np.lexsort((binaries[top], scores))[0])]
        bvar = int(binaries[pick])
        first_up = frac[pick] >= 0.5  # explore the rounded value first
        for val in ((1.0, 0.0) if first_up else (0.0, 1.0)):
            seq += 1
            heapq.heappush(
                heap,
                _Node(sol.objective, seq, node.fixes + [(bvar, val, val)], sol.basis),
            )

    if status is None:  # heap exhausted: search is complete
        if incumbent_x is None:
            return MilpSolution("infeasible", None, None, INF, nodes, INF)
        return MilpSolution("optimal", incumbent_x, incumbent_obj,
                            incumbent_obj, nodes, 0.0)
    if status == "optimal":
        bb = min(incumbent_obj, proven_bound) if proven_bound > -INF else incumbent_obj
        return MilpSolution("optimal", incumbent_x, incumbent_obj, bb, nodes,
                            gap_of(incumbent_obj, bb))
    bb = heap[0].bound if heap else incumbent_obj
    if incumbent_x is None:
        return MilpSolution(status, None, None, bb, nodes, INF)
    return MilpSolution(status, incumbent_x, incumbent_obj, min(bb, incumbent_obj),
                        nodes, gap_of(incumbent_obj, bb))


# ------------------------------------------------------------- LP text files

def _fmt(v: float) -> str:
    return repr(float(v))


def _terms_text(terms: list[tuple[int, float]], names: list[str]) -> str:
    parts = []
    for j, c in terms:
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(c))} {names[j]}")
    if not parts:
        return "0 __zero__"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(model: MilpModel, path: str | Path) -> None:
    """Write the model in CPLEX LP text format (minimization)."""
    names = model.var_names
    lines = [f"\\ {model.name}", "Minimize"]
    obj_terms = [(j, c) for j, c in enumerate(model.obj) if c != 0.0]
    lines.append(" obj: " + _terms_text(obj_terms, names))
    lines.append("Subject To")
    for con in model.constraints:
        lines.append(
            f" {con.name}: {_terms_text(con.terms, names)} {con.sense} {_fmt(con.rhs)}"
        )
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, hi = model.lb[j], model.ub[j]
        if lo == hi:
            lines.append(f" {name} = {_fmt(lo)}")
        elif not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {name} free")
        else:
            lo_s = "-inf" if not np.isfinite(lo) else _fmt(lo)
            hi_s = "+inf" if not np.isfinite(hi) else _fmt(hi)
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
    if any(model.is_binary):
        lines.append("Binaries")
        row: list[str] = []
        for j, name in enumerate(names):
            if model.is_binary[j]:
                row.append(name)
                if len(row) == 8:
                    lines.append(" " + " ".join(row))
                    row = []
        if row:
            lines.append(" " + " ".join(row))
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_terms(tokens: list[str]) -> list[tuple[str, float]]:
    """Fold a `[sign] coef name [sign] coef name ...` token run into terms."""
    terms: list[tuple[str, float]] = []
    sign = 1.0
    coef: float | None = None
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        try:
            val = float(tok)
        except ValueError:
            c = sign * (1.0 if coef is None else coef)
            if tok != "__zero__":
                terms.append((tok, c))
            sign, coef = 1.0, None
        else:
            coef = val if coef is None else coef * val
    return terms


def import_lp(path: str | Path) -> MilpModel:
    """Parse a file produced by export_lp back into an equivalent model."""
    text = Path(path).read_text()
    model_name = "imported"
    section = None
    obj_tokens: list[str] = []
    con_lines: list[str] = []
    bound_lines: list[str] = []
    binary_names: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("\\"):
            model_name = line[1:].strip() or model_name
            continue
        low = line.lower()
        if low in ("minimize", "minimise", "min"):
            section = "obj"
            continue
        if low in ("subject to", "st", "s.t.", "such that"):
            section = "cons"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binaries", "binary", "bin"):
            section = "bin"
            continue
        if low == "end":
            section = "end"
            continue
        if section == "obj":
            if ":" in line:
                line = line.split(":", 1)[1]
            obj_tokens.extend(line.split())
        elif section == "cons":
            if ":" in line:
                con_lines.append(line)
            elif con_lines:
                con_lines[-1] += " " + line
            else:
                raise MilpError(f"{path}: constraint continuation before any row: {line!r}")
        elif section == "bounds":
            bound_lines.append(line)
        elif section == "bin":
            binary_names.extend(line.split())
        elif section is None:
            raise MilpError(f"{path}: content before any section: {line!r}")

    model = MilpModel(model_name)
    binset = set(binary_names)
    for line in bound_lines:
        toks = line.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            model.add_var(toks[0], -INF, INF, binary=toks[0] in binset)
        elif len(toks) == 3 and toks[1] == "=":
            v = float(toks[2])
            model.add_var(toks[0], v, v, binary=toks[0] in binset)
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            lo = -INF if toks[0] == "-inf" else float(toks[0])
            hi = INF if toks[4] in ("+inf", "inf") else float(toks[4])
            model.add_var(toks[2], lo, hi, binary=toks[2] in binset)
        else:
            raise MilpError(f"{path}: unparsable bound line {line!r}")

    for name, coef in _parse_terms(obj_tokens):
        try:
            model.obj[model.var(name)] += coef
        except KeyError:
            raise MilpError(f"{path}: objective references unknown variable {name!r}") from None

    for line in con_lines:
        cname, rest = line.split(":", 1)
        toks = rest.split()
        sense_pos = next(
            (k for k, t in enumerate(toks) if t in ("<=", ">=", "=", "<", ">")), None
        )
        if sense_pos is None or sense_pos != len(toks) - 2:
            raise MilpError(f"{path}: unparsable constraint {line!r}")
        sense = {"<": "<=", ">": ">="}.get(toks[sense_pos], toks[sense_pos])
        rhs = float(toks[-1])
        terms = []
        for vname, coef in _parse_terms(toks[:sense_pos]):
            try:
                terms.append((model.var(vname), coef))
            except KeyError:
                raise MilpError(
                    f"{path}: constraint {cname.strip()!r} references unknown "
                    f"variable {vname!r}"
                ) from None
        model.add_constraint(cname.strip(), terms, sense, rhs)
    return model
