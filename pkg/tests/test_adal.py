import logging
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from hvacadal.adal import (AdalSolver, IterateState, Multipliers, SolverConfig, SubproblemError,
                           _coordinator_stage_solve, augmented_lagrangian, coupled_residuals, default_tau,
                           initial_state, residual, solve_subproblem_coordinator, solve_subproblem_zone,
                           update_multipliers)
from hvacadal.baseline import solve_centralized_relaxed
from hvacadal.model import AhuParams, BuildingModel
from hvacadal.power import objective_terms
from hvacadal.relax import M_IDX, X_IDX, stack_agent, stacked_residuals
from hvacadal.scenario import generate_scenario

from conftest import two_zone


def random_state(sys, rng, scale=1.0):
    """A state anywhere near the polytopes, with random multipliers and slacks."""
    lower = np.stack([p.lower for p in sys.polytopes])
    upper = np.stack([p.upper for p in sys.polytopes])
    agents = rng.uniform(lower, upper)
    horizon, n = sys.horizon, sys.n_zones
    mult = Multipliers(lam=scale * rng.normal(size=(n, horizon - 1)), gamma=scale * rng.normal(size=horizon),
                       eta=scale * rng.normal(size=horizon))
    return IterateState(agents=agents, y_total=rng.uniform(0, n * 0.5, horizon), s1=rng.uniform(0, 0.3, horizon),
                        s2=rng.uniform(0, 0.3, horizon), multipliers=mult)


def feasible_state(model, exo, sys):
    """The centralised relaxed optimum with slacks that zero the coupled rows."""
    ref = solve_centralized_relaxed(model, exo).relaxed
    agents = stack_agent(ref["temps"], ref["flows"], ref["x_cool"])
    total = ref["flows"].sum(axis=0)
    y = np.asarray(ref["y_total"], dtype=float)
    return IterateState(agents=agents, y_total=y, s1=y - total, s2=sys.c - total,
                        multipliers=Multipliers.zeros(model.n_zones, model.horizon))


@pytest.fixture(scope="module")
def five():
    s = generate_scenario(5, seed=2, horizon=6)
    return s.model, s.exo


def test_config_validation():
    for bad in ({"rho": 0}, {"epsilon": -1}, {"max_iters": 0}, {"max_iters": 2.5}, {"tau": 0}, {"tau": 1.5},
                {"sub_tol": 0}, {"workers": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_default_tau_uses_degree():
    model, _ = two_zone()
    assert default_tau(model) == pytest.approx(0.5)
    s = generate_scenario(7, seed=4, horizon=4)
    assert default_tau(s.model) == pytest.approx(1 / (1 + s.model.degree().max()))
    assert AdalSolver(s.model, s.exo).tau == 1.0
    assert AdalSolver(s.model, s.exo, SolverConfig(proximal=False)).tau == pytest.approx(default_tau(s.model))


def test_coupled_residuals_match_stacked(five):
    model, exo = five
    solver = AdalSolver(model, exo)
    st = random_state(solver.sys, np.random.default_rng(0))
    got = coupled_residuals(st, solver.sys)
    want = stacked_residuals(solver.sys, st.agents, st.y_total, st.s1, st.s2)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=0, atol=1e-12)


def test_lagrangian_at_feasible_point_is_cost(five):
    model, exo = five
    solver = AdalSolver(model, exo)
    st = feasible_state(model, exo, solver.sys)
    assert residual(st, solver.sys) < 1e-7
    al = augmented_lagrangian(st, solver.sys, solver.costs, 15.0)
    assert al == pytest.approx(solver.objective(st), abs=1e-8)


def test_lagrangian_doubling_rho(five):
    model, exo = five
    solver = AdalSolver(model, exo)
    st = random_state(solver.sys, np.random.default_rng(1))
    r_dyn, r_flow, r_cap = coupled_residuals(st, solver.sys)
    sq = float(np.sum(r_dyn ** 2) + r_flow @ r_flow + r_cap @ r_cap)
    rho = 3.0
    diff = augmented_lagrangian(st, solver.sys, solver.costs, 2 * rho) - augmented_lagrangian(
        st, solver.sys, solver.costs, rho)
    assert diff == pytest.approx(0.5 * rho * sq, rel=1e-12)


def test_residual_single_row_perturbation(five):
    model, exo = five
    solver = AdalSolver(model, exo)
    st = feasible_state(model, exo, solver.sys)
    base = residual(st, solver.sys)
    delta = 0.37
    agents = st.agents.copy()
    # X[2, 1] enters only dynamics row (zone 2, stage 1), scaled by c_self
    agents[2, 3 * 1 + X_IDX] += delta / solver.dyn.c_self[2]
    bumped = residual(replace(st, agents=agents), solver.sys)
    assert bumped - base == pytest.approx(delta, abs=1e-7)


def test_multiplier_updates(five):
    model, exo = five
    solver = AdalSolver(model, exo)
    st = random_state(solver.sys, np.random.default_rng(2))
    r_dyn, r_flow, r_cap = coupled_residuals(st, solver.sys)
    cfg = SolverConfig(rho=15.0)
    m1 = update_multipliers(st, solver.sys, cfg)
    np.testing.assert_allclose(m1.lam - st.multipliers.lam, 15.0 * r_dyn, atol=1e-12)
    np.testing.assert_allclose(m1.gamma - st.multipliers.gamma, 15.0 * r_flow, atol=1e-12)
    np.testing.assert_allclose(m1.eta - st.multipliers.eta, 15.0 * r_cap, atol=1e-12)
    m2 = update_multipliers(replace(st, multipliers=m1), solver.sys, cfg)
    np.testing.assert_allclose(m2.lam - st.multipliers.lam, 30.0 * r_dyn, atol=1e-12)
    feas = feasible_state(model, exo, solver.sys)
    feas = replace(feas, multipliers=st.multipliers)
    m3 = update_multipliers(feas, solver.sys, cfg)
    np.testing.assert_allclose(m3.lam, st.multipliers.lam, atol=1e-6)
    np.testing.assert_allclose(m3.gamma, st.multipliers.gamma, atol=1e-6)


def _zone_oracle(solver, st, i, proximal):
    """Zone i's local problem written from the explicit stacked matrices and solved by cvxpy."""
    sys, rho, mult = solver.sys, solver.config.rho, st.multipliers
    x = cp.Variable(3 * sys.horizon)
    agents = [x if k == i else st.agents[k] for k in range(sys.n_zones)]
    deg = {k: len(sys.neighbors(k)) for k in range(sys.n_zones)}
    obj = solver.costs.x_coef @ x[X_IDX::3]
    for k in range(sys.n_zones):
        if k != i and i not in sys.neighbors(k):
            continue
        r = sys.a_self[k] @ agents[k] - sys.b[k]
        for j in sys.neighbors(k):
            r = r + sys.a_neighbor[(k, j)] @ agents[j]
        obj = obj + mult.lam[k] @ r + 0.5 * rho * cp.sum_squares(r)
        if proximal:
            a = sys.a_self[k] if k == i else sys.a_neighbor[(k, i)]
            obj = obj + 0.5 * rho * deg[k] * cp.sum_squares(a @ (x - st.agents[i]))
    others = sum(sys.b_flow @ st.agents[k] for k in range(sys.n_zones) if k != i)
    r_flow = sys.b_flow @ x + others - st.y_total + st.s1
    r_cap = sys.b_flow @ x + others - sys.c + st.s2
    obj = obj + mult.gamma @ r_flow + 0.5 * rho * cp.sum_squares(r_flow)
    obj = obj + mult.eta @ r_cap + 0.5 * rho * cp.sum_squares(r_cap)
    if proximal:
        d = sys.b_flow @ (x - st.agents[i])
        obj = obj + rho * sys.n_zones * cp.sum_squares(d)
    p = sys.polytopes[i]
    prob = cp.Problem(cp.Minimize(obj), [x >= p.lower, x <= p.upper, p.rows @ x <= p.rhs])
    prob.solve(solver=cp.CLARABEL)
    return prob.value, obj, x


@pytest.mark.parametrize("proximal", [False, True])
@pytest.mark.parametrize("rho", [1.0, 15.0])
def test_zone_qp_matches_oracle(five, proximal, rho):
    model, exo = five
    solver = AdalSolver(model, exo, SolverConfig(rho=rho, proximal=proximal))
    rng = np.random.default_rng(3)
    st = random_state(solver.sys, rng, scale=0.2)
    for i in range(model.n_zones):
        best, expr, var = _zone_oracle(solver, st, i, proximal)
        got = solve_subproblem_zone(i, st, solver).stacked()
        assert solver.sys.polytopes[i].contains(got, tol=1e-9)
        var.value = got
        assert expr.value <= best + 1e-6 * (1 + abs(best))


def test_zone_small_rho_sits_on_lower_envelope(five):
    model, exo = five
    solver = AdalSolver(model, exo, SolverConfig(rho=1e-9))
    st = initial_state(model, exo, solver.sys)
    for i in range(model.n_zones):
        x = solve_subproblem_zone(i, st, solver).stacked()
        p = solver.sys.polytopes[i]
        lower_rows = np.concatenate([np.arange(4 * t, 4 * t + 2) for t in range(model.horizon)])
        # the binding constraint for X is a lower envelope row: X = max(lower rows)
        floor = np.maximum(p.lower[X_IDX::3],
                           np.max((p.rows[lower_rows] @ x - p.rhs[lower_rows]).reshape(-1, 2), axis=1)
                           + x[X_IDX::3])
        np.testing.assert_allclose(x[X_IDX::3], floor, atol=1e-6)


def test_zone_failure_raises_with_best(five):
    model, exo = five
    solver = AdalSolver(model, exo, SolverConfig(sub_max_iters=1))
    st = random_state(solver.sys, np.random.default_rng(4))
    with pytest.raises(SubproblemError) as err:
        solve_subproblem_zone(0, st, solver)
    assert err.value.best is not None
    traj = solve_subproblem_zone(0, st, solver, raise_on_failure=False)
    assert solver.sys.polytopes[0].contains(traj.stacked(), tol=1e-9)


def test_coordinator_without_fan_cost_closed_form():
    # with no cubic term and zero flow multipliers the stage problem is
    # a Y + rho_eff/2 (M - Y)^2 for Y <= M, so Y = M - a / rho_eff
    model, exo = two_zone(horizon=5)
    model = BuildingModel(zones=model.zones, coupling=model.coupling,
                          ahu=AhuParams(kappa_f=0.0, m_total_max=1.5), horizon=5)
    for proximal, factor in ((False, 1.0), (True, 3.0)):
        solver = AdalSolver(model, exo, SolverConfig(rho=0.5, proximal=proximal))
        st = random_state(solver.sys, np.random.default_rng(5))
        agents = st.agents.copy()
        agents[:, M_IDX::3] = 0.4
        total = np.full(5, 0.8)
        st = replace(st, agents=agents, y_total=total, s1=np.zeros(5),
                     multipliers=Multipliers(st.multipliers.lam, np.zeros(5), np.zeros(5)))
        coord, s1, _ = solve_subproblem_coordinator(st, solver.sys, solver.config, solver.costs)
        expect = total - solver.costs.y_lin / (0.5 * factor)
        np.testing.assert_allclose(coord.y_total, expect, atol=1e-12)
        np.testing.assert_allclose(s1, 0.0, atol=1e-12)


def test_coordinator_stage_matches_scalar_oracle():
    model, exo = two_zone(horizon=6)
    costs = objective_terms(model, exo)
    rng = np.random.default_rng(6)
    rho, cap, y_max = 2.0, 1.5, 1.0
    for _ in range(20):
        M = rng.uniform(0, 1, 6)
        gamma = rng.normal(scale=0.3, size=6)
        eta = rng.normal(scale=0.3, size=6)
        y, s1, s2 = _coordinator_stage_solve(M, gamma, eta, costs, rho, cap, y_max)
        for t in range(6):
            def f(yy, t=t):
                s = max(0.0, yy - M[t] - gamma[t] / rho)
                r = M[t] - yy + s
                return costs.y_lin[t] * yy + costs.y_cub[t] * yy ** 3 + gamma[t] * r + 0.5 * rho * r * r
            ref = minimize_scalar(f, bounds=(0, y_max), method="bounded", options={"xatol": 1e-12})
            assert f(y[t]) <= ref.fun + 1e-10
            def g(s, t=t):
                r = M[t] - cap + s
                return eta[t] * r + 0.5 * rho * r * r
            assert s2[t] >= 0
            assert g(s2[t]) <= min(g(0.0), g(s2[t] + 1e-3), g(max(0.0, s2[t] - 1e-3))) + 1e-12


def test_permutation_and_worker_determinism(five):
    model, exo = five
    base = AdalSolver(model, exo, SolverConfig(rho=3.0))
    st = base.initial_state()
    for _ in range(3):
        st = base.step(st)
    ref = base.step(st)
    perm = np.random.default_rng(7).permutation(model.n_zones)
    for cfg, order in ((SolverConfig(rho=3.0), perm), (SolverConfig(rho=3.0, workers=3), None),
                       (SolverConfig(rho=3.0, workers=2), perm[::-1])):
        other = AdalSolver(model, exo, cfg)
        other.qp.x[:] = base.qp.x  # identical warm starts are set inside step anyway
        got = other.step(st, order=order)
        assert np.array_equal(got.agents, ref.agents)
        assert np.array_equal(got.multipliers.lam, ref.multipliers.lam)
        assert np.array_equal(got.y_total, ref.y_total)
        assert got.residual_history == ref.residual_history


def test_multipliers_stationary_below_epsilon(five):
    model, exo = five
    solver = AdalSolver(model, exo, SolverConfig(epsilon=1e3))
    st = random_state(solver.sys, np.random.default_rng(8))
    nxt = solver.step(st)
    assert nxt.multipliers is st.multipliers


def test_stationary_at_converged_point():
    model, exo = two_zone(horizon=4)
    solver = AdalSolver(model, exo, SolverConfig(rho=0.3, epsilon=1e-8, max_iters=1000))
    st, sol = solver.solve()
    assert sol.converged
    nxt = solver.step(st)
    assert nxt.multipliers is st.multipliers
    assert np.max(np.abs(nxt.agents - st.agents)) < 1e-7
    assert np.max(np.abs(nxt.y_total - st.y_total)) < 1e-7
    ref = solve_centralized_relaxed(model, exo)
    assert sol.objective == pytest.approx(ref.objective, rel=1e-5)


def test_solve_reports_trace_and_flags_cap(five, caplog):
    model, exo = five
    with caplog.at_level(logging.WARNING, logger="hvacadal.adal"):
        _, sol = AdalSolver(model, exo, SolverConfig(max_iters=3, epsilon=1e-12)).solve()
    assert not sol.converged and sol.iterations == 3
    assert "iteration cap" in caplog.text
    assert [row["iteration"] for row in sol.trace] == [1, 2, 3]
    assert sol.residual == sol.residual_history[-1]
    assert set(sol.trace[0]) >= {"residual", "objective", "dyn_residual", "flow_residual", "cap_residual",
                                 "wall_clock"}


def test_converges_on_five_zone_short(five):
    model, exo = five
    _, sol = AdalSolver(model, exo, SolverConfig(rho=1.0)).solve()
    assert sol.converged and sol.residual <= 1e-2
    ref = solve_centralized_relaxed(model, exo)
    assert abs(sol.objective - ref.objective) / ref.objective < 0.05
