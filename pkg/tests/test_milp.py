"""Solver checks against enumeration, hand solutions, and scipy's HiGHS."""

import numpy as np
import pytest
import scipy.optimize as sopt

from fcuc import milp


def _to_scipy_lp(model):
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for con in model.constraints:
        row = np.zeros(model.n_vars)
        for j, c in con.terms:
            row[j] = c
        if con.sense == "<=":
            a_ub.append(row)
            b_ub.append(con.rhs)
        elif con.sense == ">=":
            a_ub.append(-row)
            b_ub.append(-con.rhs)
        else:
            a_eq.append(row)
            b_eq.append(con.rhs)
    return dict(
        c=np.array(model.obj),
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=list(zip(model.lb, model.ub)),
        method="highs",
    )


def _random_box_lp(rng, n, m):
    """Feasible-by-construction LP over a finite box."""
    model = milp.MilpModel("rand")
    ub = rng.uniform(1.0, 10.0, n)
    c = np.round(rng.normal(0, 2, n), 3)
    for j in range(n):
        model.add_var(f"x{j}", 0.0, float(ub[j]), float(c[j]))
    x0 = rng.uniform(0, 1, n) * ub
    a = np.round(rng.normal(0, 1, (m, n)), 3)
    senses = rng.choice(["<=", ">=", "="], m, p=[0.5, 0.3, 0.2])
    for i in range(m):
        lhs0 = float(a[i] @ x0)
        pad = float(rng.uniform(0.1, 2.0))
        if senses[i] == "<=":
            rhs = lhs0 + pad
        elif senses[i] == ">=":
            rhs = lhs0 - pad
        else:
            rhs = lhs0
        model.add_constraint(f"c{i}", [(j, float(a[i, j])) for j in range(n)],
                             str(senses[i]), rhs)
    return model


# --------------------------------------------------------------- LP basics

def test_lp_hand_corner():
    m = milp.MilpModel()
    x = m.add_var("x", 0, 10, obj=-2.0)
    y = m.add_var("y", 0, 10, obj=-1.0)
    m.add_constraint("cap", [(x, 1.0), (y, 1.0)], "<=", 4.0)
    m.add_constraint("xcap", [(x, 1.0)], "<=", 3.0)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - (-7.0)) <= 1e-9
    assert np.allclose(sol.x, [3.0, 1.0], atol=1e-9)
    assert not milp.check_solution(m, sol.x)


def test_lp_equality_and_ge_rows():
    m = milp.MilpModel()
    x = m.add_var("x", 0, 10, obj=2.0)
    y = m.add_var("y", 0, 10, obj=3.0)
    m.add_constraint("sum", [(x, 1.0), (y, 1.0)], "=", 10.0)
    m.add_constraint("gap", [(x, 1.0), (y, -1.0)], ">=", 2.0)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - 20.0) <= 1e-8
    assert np.allclose(sol.x, [10.0, 0.0], atol=1e-8)


def test_lp_infeasible():
    m = milp.MilpModel()
    x = m.add_var("x", 0, 3)
    m.add_constraint("atleast", [(x, 1.0)], ">=", 5.0)
    assert milp.solve_lp(m).status == "infeasible"


def test_lp_unbounded():
    m = milp.MilpModel()
    x = m.add_var("x", 0, milp.INF, obj=-1.0)
    y = m.add_var("y", 0, 1)
    m.add_constraint("tie", [(y, 1.0)], "<=", 1.0)
    assert milp.solve_lp(m).status == "unbounded"


def test_lp_free_variable():
    m = milp.MilpModel()
    x = m.add_var("x", -milp.INF, milp.INF, obj=1.0)
    m.add_constraint("lo", [(x, 1.0)], ">=", -4.5)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - (-4.5)) <= 1e-9


def test_lp_bound_flip_optimum():
    m = milp.MilpModel()
    x = m.add_var("x", 0, 5, obj=-1.0)
    y = m.add_var("y", 0, milp.INF)
    m.add_constraint("loose", [(x, 1.0), (y, 1.0)], "<=", 100.0)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - (-5.0)) <= 1e-9


def test_lp_no_constraints_bounds_only():
    m = milp.MilpModel()
    m.add_var("a", 1, 2, obj=3.0)
    m.add_var("b", -2, 7, obj=-1.0)
    m.add_var("c", -4, 9, obj=0.0)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - (3.0 - 7.0)) <= 1e-12


def test_lp_beale_degeneracy():
    # Classic cycling instance for naive pivoting; must still terminate.
    m = milp.MilpModel()
    x1 = m.add_var("x1", 0, milp.INF, obj=-0.75)
    x2 = m.add_var("x2", 0, milp.INF, obj=150.0)
    x3 = m.add_var("x3", 0, milp.INF, obj=-0.02)
    x4 = m.add_var("x4", 0, milp.INF, obj=6.0)
    m.add_constraint("r1", [(x1, 0.25), (x2, -60.0), (x3, -0.04), (x4, 9.0)], "<=", 0.0)
    m.add_constraint("r2", [(x1, 0.5), (x2, -90.0), (x3, -0.02), (x4, 3.0)], "<=", 0.0)
    m.add_constraint("r3", [(x3, 1.0)], "<=", 1.0)
    sol = milp.solve_lp(m)
    assert sol.status == "optimal"
    assert abs(sol.objective - (-0.05)) <= 1e-9


def test_lp_random_vs_highs():
    rng = np.random.default_rng(42)
    for trial in range(40):
        n = int(rng.integers(3, 9))
        mrows = int(rng.integers(2, 7))
        model = _random_box_lp(rng, n, mrows)
        ours = milp.solve_lp(model)
        ref = sopt.linprog(**_to_scipy_lp(model))
        assert ours.status == "optimal", f"trial {trial}: {ours.status}"
        assert ref.status == 0, f"trial {trial}: highs status {ref.status}"
        scale = 1.0 + abs(ref.fun)
        assert abs(ours.objective - ref.fun) <= 1e-6 * scale, (
            f"trial {trial}: {ours.objective} vs {ref.fun}"
        )
        assert not milp.check_solution(model, ours.x)


def test_lp_random_statuses_vs_highs():
    rng = np.random.default_rng(99)
    agree = 0
    for trial in range(30):
        n = int(rng.integers(2, 6))
        mrows = int(rng.integers(1, 5))
        model = milp.MilpModel("loose")
        for j in range(n):
            hi = milp.INF if rng.random() < 0.4 else float(rng.uniform(1, 8))
            model.add_var(f"x{j}", 0.0, hi, float(np.round(rng.normal(0, 2), 3)))
        for i in range(mrows):
            terms = [(j, float(np.round(rng.normal(0, 1), 3))) for j in range(n)]
            sense = str(rng.choice(["<=", ">=", "="]))
            model.add_constraint(f"c{i}", terms, sense, float(np.round(rng.normal(0, 3), 3)))
        ours = milp.solve_lp(model)
        ref = sopt.linprog(**_to_scipy_lp(model))
        if ref.status == 4:
            continue
        want = {0: "optimal", 2: "infeasible", 3: "unbounded"}[ref.status]
        assert ours.status == want, f"trial {trial}: {ours.status} vs {want}"
        if want == "optimal":
            scale = 1.0 + abs(ref.fun)
            assert abs(ours.objective - ref.fun) <= 1e-6 * scale
        agree += 1
    assert agree >= 20  # the generator must actually exercise the statuses


def test_lp_duality_identity():
    rng = np.random.default_rng(3)
    for trial in range(15):
        n = int(rng.integers(3, 8))
        mrows = int(rng.integers(2, 6))
        model = _random_box_lp(rng, n, mrows)
        sol = milp.solve_lp(model)
        assert sol.status == "optimal"
        y, d = sol.duals, sol.reduced_costs
        assert y.shape == (model.n_cons,)
        assert d.shape == (model.n_vars,)
        b = np.array([con.rhs for con in model.constraints])
        slacks = np.empty(model.n_cons)
        for i, con in enumerate(model.constraints):
            slacks[i] = con.rhs - sum(c * sol.x[j] for j, c in con.terms)
        rebuilt = y @ b + d @ sol.x - y @ slacks
        assert abs(rebuilt - sol.objective) <= 1e-6 * (1 + abs(sol.objective))
        # Complementary slackness on the structural variables.
        for j in range(model.n_vars):
            if d[j] > 1e-7:
                assert abs(sol.x[j] - model.lb[j]) <= 1e-6
            elif d[j] < -1e-7:
                assert abs(sol.x[j] - model.ub[j]) <= 1e-6


def test_lp_medium_sparse_vs_highs():
    rng = np.random.default_rng(11)
    n, mrows = 200, 150
    model = milp.MilpModel("medium")
    for j in range(n):
        model.add_var(f"x{j}", 0.0, 10.0, float(np.round(rng.normal(0, 1), 3)))
    x0 = rng.uniform(0, 10, n)
    for i in range(mrows):
        nz = rng.choice(n, size=int(rng.integers(3, 20)), replace=False)
        coefs = np.round(rng.normal(0, 1, nz.size), 3)
        lhs0 = float(coefs @ x0[nz])
        sense = ["<=", ">=", "="][i % 3]
        rhs = lhs0 + {"<=": 1.0, ">=": -1.0, "=": 0.0}[sense] * float(rng.uniform(0.5, 3))
        model.add_constraint(f"c{i}", [(int(j), float(c)) for j, c in zip(nz, coefs)],
                             sense, rhs)
    ours = milp.solve_lp(model)
    ref = sopt.linprog(**_to_scipy_lp(model))
    assert ours.status == "optimal" and ref.status == 0
    assert abs(ours.objective - ref.fun) <= 1e-5 * (1 + abs(ref.fun))
    assert not milp.check_solution(model, ours.x)


def test_lp_deterministic_repeat():
    rng = np.random.default_rng(5)
    model = _random_box_lp(rng, 6, 4)
    a = milp.solve_lp(model)
    b = milp.solve_lp(model)
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)


# ------------------------------------------------------------------- MILP

def _enumerate_binary(model):
    """Brute-force optimum of an all-binary model."""
    n = model.n_vars
    masks = np.arange(1 << n)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    ok = np.ones(len(masks), dtype=bool)
    for con in model.constraints:
        lhs = np.zeros(len(masks))
        for j, c in con.terms:
            lhs += c * bits[:, j]
        if con.sense == "<=":
            ok &= lhs <= con.rhs + 1e-9
        elif con.sense == ">=":
            ok &= lhs >= con.rhs - 1e-9
        else:
            ok &= np.abs(lhs - con.rhs) <= 1e-9
    for j in range(n):
        ok &= (bits[:, j] >= model.lb[j] - 1e-9) & (bits[:, j] <= model.ub[j] + 1e-9)
    if not ok.any():
        return None, None
    objs = bits @ np.array(model.obj)
    k = int(np.flatnonzero(ok)[np.argmin(objs[ok])])
    return float(objs[k]), bits[k]


def test_knapsack_vs_enumeration():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n = 10
        w = rng.integers(1, 12, n).astype(float)
        v = np.round(rng.uniform(1, 10, n), 3)
        cap = float(np.floor(w.sum() * rng.uniform(0.3, 0.7)))
        model = milp.MilpModel("knap")
        for j in range(n):
            model.add_var(f"x{j}", obj=float(-v[j]), binary=True)
        model.add_constraint("cap", [(j, float(w[j])) for j in range(n)], "<=", cap)
        best, _ = _enumerate_binary(model)
        sol = milp.solve_milp(model)
        assert sol.status == "optimal"
        assert abs(sol.objective - best) <= 1e-9 * (1 + abs(best)), f"trial {trial}"
        assert not milp.check_solution(model, sol.x)
        assert sol.best_bound <= sol.objective + 1e-9
        assert sol.gap <= 1e-6


def test_random_binary_milp_vs_enumeration():
    rng = np.random.default_rng(17)
    for trial in range(15):
        n = int(rng.integers(4, 9))
        mrows = int(rng.integers(2, 6))
        model = milp.MilpModel("binrand")
        for j in range(n):
            model.add_var(f"b{j}", obj=float(np.round(rng.normal(0, 3), 3)), binary=True)
        for i in range(mrows):
            terms = [(j, float(np.round(rng.normal(0, 2), 2))) for j in range(n)]
            sense = str(rng.choice(["<=", ">="]))
            rhs = float(np.round(rng.normal(0, 2), 2))
            model.add_constraint(f"c{i}", terms, sense, rhs)
        best, _ = _enumerate_binary(model)
        sol = milp.solve_milp(model)
        if best is None:
            assert sol.status == "infeasible", f"trial {trial}"
        else:
            assert sol.status == "optimal", f"trial {trial}"
            assert abs(sol.objective - best) <= 1e-6 * (1 + abs(best)), f"trial {trial}"


def test_mixed_milp_vs_highs():
    rng = np.random.default_rng(23)
    for trial in range(12):
        nb, nc = 6, 4
        n = nb + nc
        model = milp.MilpModel("mixed")
        c = np.round(rng.normal(0, 2, n), 3)
        for j in range(nb):
            model.add_var(f"b{j}", obj=float(c[j]), binary=True)
        for j in range(nc):
            model.add_var(f"y{j}", 0.0, 5.0, obj=float(c[nb + j]))
        x0 = np.concatenate([rng.integers(0, 2, nb), rng.uniform(0, 5, nc)])
        mrows = int(rng.integers(2, 6))
        a = np.round(rng.normal(0, 1, (mrows, n)), 3)
        lo = np.full(mrows, -np.inf)
        hi = np.full(mrows, np.inf)
        for i in range(mrows):
            lhs0 = float(a[i] @ x0)
            sense = ["<=", ">=", "="][int(rng.integers(0, 3))]
            pad = float(rng.uniform(0.1, 1.5))
            if sense == "<=":
                rhs, hi[i] = lhs0 + pad, lhs0 + pad
            elif sense == ">=":
                rhs, lo[i] = lhs0 - pad, lhs0 - pad
            else:
                rhs = lhs0
                lo[i] = hi[i] = lhs0
            model.add_constraint(f"c{i}", [(j, float(a[i, j])) for j in range(n)],
                                 sense, rhs)
        sol = milp.solve_milp(model)
        ref = sopt.milp(
            c=c,
            constraints=sopt.LinearConstraint(a, lo, hi),
            integrality=np.array([1] * nb + [0] * nc),
            bounds=sopt.Bounds(np.zeros(n), np.array([1.0] * nb + [5.0] * nc)),
            options={"mip_rel_gap": 0.0},
        )
        assert sol.status == "optimal" and ref.status == 0, f"trial {trial}"
        assert abs(sol.objective - ref.fun) <= 1e-6 * (1 + abs(ref.fun)), (
            f"trial {trial}: {sol.objective} vs {ref.fun}"
        )
        assert not milp.check_solution(model, sol.x)


def test_milp_root_integral_assignment():
    rng = np.random.default_rng(31)
    cost = np.round(rng.uniform(1, 9, (3, 3)), 2)
    model = milp.MilpModel("assign")
    idx = {}
    for i in range(3):
        for j in range(3):
            idx[i, j] = model.add_var(f"a{i}{j}", obj=float(cost[i, j]), binary=True)
    for i in range(3):
        model.add_constraint(f"row{i}", [(idx[i, j], 1.0) for j in range(3)], "=", 1.0)
    for j in range(3):
        model.add_constraint(f"col{j}", [(idx[i, j], 1.0) for i in range(3)], "=", 1.0)
    sol = milp.solve_milp(model)
    from itertools import permutations
    best = min(sum(cost[i, p[i]] for i in range(3)) for p in permutations(range(3)))
    assert sol.status == "optimal"
    assert abs(sol.objective - best) <= 1e-9
    assert sol.nodes == 1  # the relaxation is already integral


def _small_fractional_knapsack():
    model = milp.MilpModel("k3")
    model.add_var("x0", obj=-4.0, binary=True)
    model.add_var("x1", obj=-5.0, binary=True)
    model.add_var("x2", obj=-6.0, binary=True)
    model.add_constraint("cap", [(0, 3.0), (1, 4.0), (2, 5.0)], "<=", 6.0)
    return model


def test_milp_node_limit():
    model = _small_fractional_knapsack()
    sol = milp.solve_milp(model, node_limit=1)
    assert sol.status == "node-limit"
    assert sol.x is None
    assert sol.gap == milp.INF


def test_milp_time_limit():
    model = _small_fractional_knapsack()
    sol = milp.solve_milp(model, time_limit=0.0)
    assert sol.status == "time-limit"
    assert sol.nodes == 0


def test_milp_unbounded():
    model = milp.MilpModel()
    model.add_var("b", binary=True, obj=1.0)
    model.add_var("y", 0.0, milp.INF, obj=-1.0)
    model.add_constraint("dummy", [(0, 1.0)], "<=", 1.0)
    assert milp.solve_milp(model).status == "unbounded"


def test_milp_heuristic_callback():
    model = _small_fractional_knapsack()
    plain = milp.solve_milp(model)
    calls = []

    def good(x_frac):
        calls.append(np.array(x_frac))
        return np.array([0.0, 0.0, 1.0])

    with_h = milp.solve_milp(model, heuristic=good)
    assert with_h.status == "optimal"
    assert abs(with_h.objective - plain.objective) <= 1e-9
    assert abs(with_h.objective - (-6.0)) <= 1e-9
    assert calls and calls[0].shape == (3,)

    def bad(x_frac):
        return np.array([1.0, 1.0, 1.0])  # violates the capacity row

    with_bad = milp.solve_milp(model, heuristic=bad)
    assert with_bad.status == "optimal"
    assert abs(with_bad.objective - (-6.0)) <= 1e-9


def test_milp_singleton_row_forces_binary_up():
    model = milp.MilpModel()
    model.add_var("u", binary=True, obj=1.0)
    model.add_constraint("need", [(0, 1.0)], ">=", 0.5)
    sol = milp.solve_milp(model)
    assert sol.status == "optimal"
    assert abs(sol.objective - 1.0) <= 1e-9
    assert abs(sol.x[0] - 1.0) <= 1e-9


def test_milp_deterministic_repeat():
    model = _small_fractional_knapsack()
    a = milp.solve_milp(model)
    b = milp.solve_milp(model)
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)
    assert a.nodes == b.nodes


# ------------------------------------------------------------ model basics

def test_model_rejects_duplicates_and_bad_input():
    model = milp.MilpModel()
    model.add_var("x")
    with pytest.raises(milp.MilpError):
        model.add_var("x")
    with pytest.raises(milp.MilpError):
        model.add_var("y", lb=2.0, ub=1.0)
    model.add_constraint("c", [(0, 1.0)], "<=", 1.0)
    with pytest.raises(milp.MilpError):
        model.add_constraint("c", [(0, 1.0)], "<=", 2.0)
    with pytest.raises(milp.MilpError):
        model.add_constraint("d", [(0, 1.0)], "<<", 2.0)
    with pytest.raises(milp.MilpError):
        model.add_constraint("e", [(5, 1.0)], "<=", 2.0)


def test_constraint_merges_repeated_indices():
    model = milp.MilpModel()
    model.add_var("x")
    model.add_constraint("c", [(0, 1.0), (0, 2.0)], "<=", 3.0)
    assert model.constraints[0].terms == [(0, 3.0)]


def test_check_solution_reports_violations():
    model = milp.MilpModel()
    model.add_var("u", binary=True)
    model.add_var("y", 0.0, 2.0)
    model.add_constraint("c", [(0, 1.0), (1, 1.0)], "<=", 1.5)
    msgs = milp.check_solution(model, np.array([0.4, 3.0]))
    assert any("not integral" in s for s in msgs)
    assert any("outside" in s for s in msgs)
    assert any("c:" in s for s in msgs)
    assert milp.check_solution(model, np.array([1.0, 0.5])) == []


# ------------------------------------------------------------ LP text files

def _fiddly_model():
    model = milp.MilpModel("fiddly example")
    model.add_var("alpha", 0.0, milp.INF, obj=1.25)
    model.add_var("beta", -milp.INF, milp.INF, obj=-0.375)
    model.add_var("gamma", 2.5, 2.5, obj=0.0)
    model.add_var("switch", binary=True, obj=100.0)
    model.add_var("frac", 0.0, 1.0, obj=1e-07)
    model.add_constraint("r_le", [(0, 1.0), (1, -2.5)], "<=", 10.0)
    model.add_constraint("r_ge", [(1, 0.001), (3, -7.0)], ">=", -3.5)
    model.add_constraint("r_eq", [(0, 1.0), (2, 1.0), (4, -1.0)], "=", 4.0)
    return model


def test_lp_file_round_trip(tmp_path):
    model = _fiddly_model()
    path = tmp_path / "model.lp"
    milp.export_lp(model, path)
    back = milp.import_lp(path)
    assert back.var_names == model.var_names
    assert back.lb == model.lb
    assert back.ub == model.ub
    assert back.obj == model.obj
    assert back.is_binary == model.is_binary
    assert len(back.constraints) == len(model.constraints)
    for a, b in zip(model.constraints, back.constraints):
        assert (a.name, a.sense, a.rhs) == (b.name, b.sense, b.rhs)
        assert a.terms == b.terms


def test_lp_file_round_trip_solves_identically(tmp_path):
    rng = np.random.default_rng(13)
    model = _random_box_lp(rng, 5, 4)
    path = tmp_path / "rand.lp"
    milp.export_lp(model, path)
    back = milp.import_lp(path)
    a = milp.solve_lp(model)
    b = milp.solve_lp(back)
    assert a.status == b.status == "optimal"
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)


def test_lp_file_empty_objective(tmp_path):
    model = milp.MilpModel("feas")
    model.add_var("x", 0.0, 1.0)
    model.add_constraint("c", [(0, 1.0)], "<=", 1.0)
    path = tmp_path / "feas.lp"
    milp.export_lp(model, path)
    back = milp.import_lp(path)
    assert back.obj == [0.0]
    assert milp.solve_lp(back).status == "optimal"


def test_lp_import_rejects_unknown_variable(tmp_path):
    path = tmp_path / "bad.lp"
    path.write_text(
        "Minimize\n obj: 1.0 x\nSubject To\n c0: 1.0 ghost <= 1.0\n"
        "Bounds\n 0.0 <= x <= 1.0\nEnd\n"
    )
    with pytest.raises(milp.MilpError, match="ghost"):
        milp.import_lp(path)


def test_lp_import_rejects_garbage(tmp_path):
    path = tmp_path / "junk.lp"
    path.write_text("this is not an lp file\n")
    with pytest.raises(milp.MilpError):
        milp.import_lp(path)
