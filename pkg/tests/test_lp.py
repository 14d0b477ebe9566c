"""LP layer tests: cross-solver oracle, statuses, determinism, batch path."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyreach import lp


def _random_feasible_problem(rng, n=6, m=10, sense="max"):
    # b = A x0 + slack guarantees feasibility; box rows guarantee boundedness
    a = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = a @ x0 + rng.uniform(0.1, 2.0, size=m)
    box = np.vstack([np.eye(n), -np.eye(n)])
    bbox = np.full(2 * n, 10.0 + np.max(np.abs(x0)))
    c = rng.normal(size=n)
    return lp.LpProblem(
        c=c,
        sense=sense,
        a_ub=np.vstack([a, box]),
        b_ub=np.concatenate([b, bbox]),
        name="random",
    ), x0


def _reference_objective(prob):
    import cvxpy as cp

    x = cp.Variable(prob.n_vars)
    cons = []
    if prob.a_ub is not None:
        cons.append(prob.a_ub @ x <= prob.b_ub)
    if prob.a_eq is not None:
        cons.append(prob.a_eq @ x == prob.b_eq)
    objective = cp.Maximize(prob.c @ x) if prob.sense == "max" else cp.Minimize(prob.c @ x)
    problem = cp.Problem(objective, cons)
    problem.solve()
    assert problem.status == "optimal"
    return float(problem.value)


def test_matches_reference_solver():
    rng = np.random.default_rng(42)
    for k in range(12):
        sense = "max" if k % 2 == 0 else "min"
        prob, _ = _random_feasible_problem(rng, sense=sense)
        got = lp.solve(prob)
        assert got.status == "optimal"
        ref = _reference_objective(prob)
        assert got.objective == pytest.approx(ref, abs=1e-6)


def test_equality_constrained_matches_reference():
    rng = np.random.default_rng(7)
    for _ in range(6):
        n = 5
        a_eq = rng.normal(size=(2, n))
        x0 = rng.normal(size=n)
        prob = lp.LpProblem(
            c=rng.normal(size=n),
            sense="min",
            a_ub=np.vstack([np.eye(n), -np.eye(n)]),
            b_ub=np.full(2 * n, 5.0 + np.max(np.abs(x0))),
            a_eq=a_eq,
            b_eq=a_eq @ x0,
        )
        got = lp.solve(prob)
        assert got.status == "optimal"
        assert got.objective == pytest.approx(_reference_objective(prob), abs=1e-6)


def test_unbounded_detected():
    prob = lp.LpProblem(c=[1.0], sense="max", a_ub=[[-1.0]], b_ub=[0.0])
    assert lp.solve(prob).status == "unbounded"


def test_infeasible_detected():
    prob = lp.LpProblem(
        c=[1.0], sense="min", a_ub=[[1.0], [-1.0]], b_ub=[-1.0, -1.0]
    )
    assert lp.solve(prob).status == "infeasible"


def test_inflation_is_outward():
    up = lp.solve(lp.LpProblem(c=[1.0], sense="max", a_ub=[[1.0], [-1.0]], b_ub=[1.0, 1.0]))
    lo = lp.solve(lp.LpProblem(c=[1.0], sense="min", a_ub=[[1.0], [-1.0]], b_ub=[1.0, 1.0]))
    assert up.objective == pytest.approx(1.0 + lp.DEFAULT_INFLATION, abs=1e-15)
    assert lo.objective == pytest.approx(-1.0 - lp.DEFAULT_INFLATION, abs=1e-15)
    exact = lp.solve(
        lp.LpProblem(c=[1.0], sense="max", a_ub=[[1.0], [-1.0]], b_ub=[1.0, 1.0]),
        inflation=0.0,
    )
    assert exact.objective == pytest.approx(1.0, abs=1e-12)


def test_deterministic_repeat():
    rng = np.random.default_rng(3)
    prob, _ = _random_feasible_problem(rng)
    s1 = lp.solve(prob)
    s2 = lp.solve(prob)
    assert s1.objective == s2.objective
    assert np.array_equal(s1.x, s2.x)


def test_degenerate_objective_deterministic():
    # every point of the facet x1 + x2 = 1 is optimal; repeats must agree bit-for-bit
    prob = lp.LpProblem(
        c=[1.0, 1.0],
        sense="max",
        a_ub=[[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
        b_ub=[1.0, 0.0, 0.0],
    )
    xs = [lp.solve(prob).x for _ in range(3)]
    assert np.array_equal(xs[0], xs[1]) and np.array_equal(xs[1], xs[2])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_optimum_dominates_feasible_point(seed):
    rng = np.random.default_rng(seed)
    prob, x0 = _random_feasible_problem(rng, n=4, m=6, sense="max")
    sol = lp.solve(prob)
    assert sol.status == "optimal"
    assert sol.objective >= float(prob.c @ x0) - 1e-9
    slack = prob.b_ub - prob.a_ub @ sol.x
    assert float(np.min(slack)) >= -1e-7


# ---------------------------------------------------------------------------
# batch path


def test_batch_matches_single_solves():
    rng = np.random.default_rng(11)
    n, m = 8, 14
    a = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = a @ x0 + rng.uniform(0.2, 1.0, size=m)
    box = np.vstack([np.eye(n), -np.eye(n)])
    a_ub = np.vstack([a, box])
    b_ub = np.concatenate([b, np.full(2 * n, 20.0)])
    a_eq = rng.normal(size=(2, n))
    b_eq = a_eq @ x0
    batch = lp.BatchLp(a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq)
    costs = rng.normal(size=(15, n))
    senses = ["max" if i % 3 else "min" for i in range(15)]
    got = batch.solve_many(costs, senses)
    for i, (c, s) in enumerate(zip(costs, senses)):
        single = lp.solve(
            lp.LpProblem(c=c, sense=s, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq)
        )
        assert got[i].status == "optimal"
        assert got[i].objective == pytest.approx(single.objective, abs=1e-8)


def test_batch_mixed_statuses():
    # x0 is boxed, x1 is free: objectives along x1 are unbounded
    a_ub = np.array([[1.0, 0.0], [-1.0, 0.0]])
    b_ub = np.array([1.0, 1.0])
    batch = lp.BatchLp(a_ub=a_ub, b_ub=b_ub)
    costs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    got = batch.solve_many(costs, "max")
    assert [g.status for g in got] == ["optimal", "unbounded", "optimal"]
    assert got[0].objective == pytest.approx(1.0, abs=1e-8)
    assert got[2].objective == pytest.approx(1.0, abs=1e-8)


def test_batch_workers_agree():
    rng = np.random.default_rng(5)
    n, m = 6, 10
    a = rng.normal(size=(m, n))
    b = a @ rng.normal(size=n) + 0.5
    a_ub = np.vstack([a, np.eye(n), -np.eye(n)])
    b_ub = np.concatenate([b, np.full(2 * n, 30.0)])
    batch = lp.BatchLp(a_ub=a_ub, b_ub=b_ub)
    costs = rng.normal(size=(8, n))
    one = batch.solve_many(costs, "max", workers=1)
    two = batch.solve_many(costs, "max", workers=2)
    for s1, s2 in zip(one, two):
        assert s1.status == s2.status == "optimal"
        assert s1.objective == pytest.approx(s2.objective, abs=1e-9)


def test_workers_env_cap(monkeypatch):
    monkeypatch.setenv("POLYREACH_THREADS", "2")
    assert lp.effective_workers(8) == 2
    monkeypatch.setenv("POLYREACH_THREADS", "junk")
    with pytest.raises(lp.LpError):
        lp.effective_workers(4)
    monkeypatch.delenv("POLYREACH_THREADS")
    assert lp.effective_workers(3) == 3
    assert lp.effective_workers(None) == 1


# ---------------------------------------------------------------------------
# validation and guards


def test_problem_validation():
    with pytest.raises(ValueError):
        lp.LpProblem(c=[1.0, 2.0], a_ub=[[1.0]], b_ub=[1.0])
    with pytest.raises(ValueError):
        lp.LpProblem(c=[1.0])
    with pytest.raises(ValueError):
        lp.LpProblem(c=[1.0], sense="maximize", a_ub=[[1.0]], b_ub=[1.0])
    with pytest.raises(ValueError):
        lp.LpProblem(c=[np.inf], a_ub=[[1.0]], b_ub=[1.0])


def test_residual_guard_rejects_bad_point():
    prob = lp.LpProblem(c=[1.0], sense="max", a_ub=[[1.0]], b_ub=[1.0])
    with pytest.raises(lp.LpError):
        lp._residual_check(prob, np.array([2.0]), "guard")


def test_duality_guard():
    with pytest.raises(lp.LpError):
        lp._duality_check(1.0, 2.0, "guard")
    lp._duality_check(1.0, 1.0 + 1e-9, "guard")


def test_dump_problem(tmp_path):
    prob = lp.LpProblem(
        c=[1.0, -2.0], sense="max",
        a_ub=[[1.0, 1.0]], b_ub=[1.0],
        a_eq=[[1.0, -1.0]], b_eq=[0.0],
        name="demo",
    )
    path = tmp_path / "demo.lp"
    lp.dump_problem(prob, path)
    text = path.read_text()
    assert "Maximize" in text and "Subject To" in text and "free" in text
