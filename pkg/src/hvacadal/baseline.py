"""Centralised reference solvers and an exhaustive oracle for tiny instances.

* :func:`solve_centralized_relaxed` solves the relaxed problem in one LP
  (HiGHS) with the cubic fan term replaced by tangent cuts that are added
  until the cut error is below tolerance (Kelley's method on a 1-D convex
  term per stage).
* :func:`solve_centralized_nonlinear` minimises the true cost over the flows
  alone, temperatures following by rollout, with SLSQP and exact
  sensitivities; several starts, the best feasible local optimum wins.
* :func:`brute_force_oracle` enumerates a flow grid stage by stage.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp

from .model import BuildingModel, ExogenousSeries, build_discrete_dynamics
from .power import SECONDS_PER_HOUR, objective_terms, relaxed_objective
from .recover import Schedule, make_schedule
from .relax import M_IDX, T_IDX, X_IDX, assemble_stacked, unstack_agents

__all__ = [
    "InfeasibleError",
    "ReferenceSolution",
    "solve_centralized_relaxed",
    "solve_centralized_nonlinear",
    "brute_force_oracle",
    "p1_cost_and_gradient",
    "grid_cell_increment",
]

log = logging.getLogger(__name__)

COMFORT_MARGIN = 1e-7


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """Result of a reference solver.

    ``schedule`` is the P1-feasible schedule for the nonlinear and
    brute-force methods; the relaxed method instead fills ``relaxed`` with
    its (temps, flows, x_cool, y_total) point and leaves ``schedule`` None.
    """

    schedule: Schedule | None
    objective: float
    method: str
    diagnostics: dict = field(default_factory=dict)
    relaxed: dict | None = None
    feasible: bool = True


# -- centralised relaxed LP -----------------------------------------------------

def solve_centralized_relaxed(model: BuildingModel, exo: ExogenousSeries, tol: float = 1e-7,
                              max_rounds: int = 60) -> ReferenceSolution:
    t0 = time.perf_counter()
    dyn = build_discrete_dynamics(model, exo)
    sys = assemble_stacked(dyn, model)
    costs = objective_terms(model, exo)
    n_zones, horizon = model.n_zones, model.horizon
    nz = 3 * horizon
    n_x = n_zones * nz
    iy = n_x + np.arange(horizon)
    iz = n_x + horizon + np.arange(horizon)
    n_var = n_x + 2 * horizon
    y_max = float(np.sum(model.zone_array("m_max")))

    # dynamics equalities
    eq_blocks = []
    for i in range(n_zones):
        row = [None] * n_zones
        row[i] = sp.csr_matrix(sys.a_self[i])
        for j in sys.neighbors(i):
            row[j] = sp.csr_matrix(sys.a_neighbor[(i, j)])
        for j in range(n_zones):
            if row[j] is None:
                row[j] = sp.csr_matrix((horizon - 1, nz))
        eq_blocks.append(sp.hstack(row))
    if horizon > 1:
        A_eq = sp.hstack([sp.vstack(eq_blocks), sp.csr_matrix((n_zones * (horizon - 1), 2 * horizon))]).tocsr()
        b_eq = sys.b.reshape(-1)
    else:
        A_eq, b_eq = None, None

    # envelope rows, total-flow rows, AHU cap rows
    env = sp.block_diag([sp.csr_matrix(p.rows) for p in sys.polytopes])
    env = sp.hstack([env, sp.csr_matrix((env.shape[0], 2 * horizon))])
    env_rhs = np.concatenate([p.rhs for p in sys.polytopes])
    flow_sel = sp.hstack([sp.csr_matrix(sys.b_flow)] * n_zones)
    flow_rows = sp.hstack([flow_sel, sp.csr_matrix(sys.b_coord), sp.csr_matrix((horizon, horizon))])
    cap_rows = sp.hstack([flow_sel, sp.csr_matrix((horizon, 2 * horizon))])
    A_base = sp.vstack([env, flow_rows, cap_rows]).tocsr()
    b_base = np.concatenate([env_rhs, np.zeros(horizon), sys.c])

    lower = np.concatenate([p.lower for p in sys.polytopes] + [np.zeros(2 * horizon)])
    upper = np.concatenate([p.upper for p in sys.polytopes] + [np.full(horizon, y_max),
                                                               np.full(horizon, y_max ** 3)])
    c = np.zeros(n_var)
    for i in range(n_zones):
        c[i * nz + X_IDX:(i + 1) * nz:3] = costs.x_coef
    c[iy] = costs.y_lin
    c[iz] = costs.y_cub

    # tangent cuts 3 a^2 Y - z <= 2 a^3, per stage
    cut_points = [np.linspace(0.0, y_max, 9)[:, None] * np.ones((1, horizon))]

    def cut_matrix(points):
        pts = np.concatenate(points, axis=0)
        rows, cols, vals, rhs = [], [], [], []
        for k, a_row in enumerate(pts):
            for t, a in enumerate(a_row):
                r = k * horizon + t
                rows += [r, r]
                cols += [iy[t], iz[t]]
                vals += [3 * a * a, -1.0]
                rhs.append(2 * a ** 3)
        return sp.csr_matrix((vals, (rows, cols)), shape=(pts.shape[0] * horizon, n_var)), np.array(rhs)

    res = None
    for rnd in range(max_rounds):
        A_cut, b_cut = cut_matrix(cut_points)
        A_ub = sp.vstack([A_base, A_cut]).tocsr()
        b_ub = np.concatenate([b_base, b_cut])
        res = so.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=np.column_stack([lower, upper]),
                         method="highs")
        if res.status == 2:
            raise InfeasibleError(_diagnose_relaxed_infeasibility(model, exo))
        if res.status != 0:
            raise RuntimeError(f"LP solver failed: {res.message}")
        y = res.x[iy]
        gap = costs.y_cub * np.maximum(y ** 3 - res.x[iz], 0.0)
        if np.sum(gap) <= tol * max(1.0, abs(res.fun)):
            break
        cut_points.append(y[None, :])
    x = res.x
    agents = x[:n_x].reshape(n_zones, nz)
    temps, flows, xc = unstack_agents(agents)
    y = x[iy]
    obj = relaxed_objective(costs, xc, y)
    diag = {"lp_rounds": rnd + 1, "lp_objective": float(res.fun), "wall_clock": time.perf_counter() - t0}
    return ReferenceSolution(schedule=None, objective=obj, method="centralized-relaxed", diagnostics=diag,
                             relaxed={"temps": temps.copy(), "flows": flows.copy(), "x_cool": xc.copy(),
                                      "y_total": y.copy()})


def _diagnose_relaxed_infeasibility(model, exo) -> str:
    # the only coupled families are dynamics+comfort and the AHU cap; retry without the cap
    from dataclasses import replace

    loose = replace(model, ahu=replace(model.ahu, m_total_max=float(np.sum(model.zone_array("m_max"))) + 1.0))
    try:
        solve_centralized_relaxed(loose, exo, max_rounds=1)
    except InfeasibleError:
        return "relaxed problem infeasible: comfort band unreachable under the zone flow bounds (dynamics/comfort)"
    return "relaxed problem infeasible: AHU total-flow cap"


# -- true cost, gradient and sensitivities ------------------------------------

def _rollout_sensitivity(model, dyn, flows):
    """Temperatures ``(I, T)`` and ``dT[:, t] / d flows`` as ``(T, I, I*T)``."""
    n, horizon = flows.shape
    temps = np.empty((n, horizon))
    sens = np.zeros((horizon, n, n * horizon))
    temps[:, 0] = model.zone_array("t_init")
    cols = np.arange(n) * horizon
    for t in range(horizon - 1):
        lift = temps[:, t] - dyn.t_supply[t]
        x = flows[:, t] * lift
        temps[:, t + 1] = dyn.a_matrix @ temps[:, t] + dyn.c_self * x + dyn.d_const[:, t]
        jac = dyn.a_matrix + np.diag(dyn.c_self * flows[:, t])
        sens[t + 1] = jac @ sens[t]
        sens[t + 1, np.arange(n), cols + t] += dyn.c_self * lift
    return temps, sens


def p1_cost_and_gradient(model: BuildingModel, exo: ExogenousSeries, flows, dyn=None):
    """True energy cost of ``flows`` (temperatures by rollout) and its gradient."""
    dyn = dyn if dyn is not None else build_discrete_dynamics(model, exo)
    flows = np.asarray(flows, dtype=float)
    n, horizon = flows.shape
    temps, sens = _rollout_sensitivity(model, dyn, flows)
    ahu = model.ahu
    k = ahu.c_p * ahu.eta
    w = exo.price * model.dt / SECONDS_PER_HOUR
    tot = flows.sum(axis=0)
    lift = temps - exo.t_supply[None, :]
    fresh = k * (1 - ahu.d_r) * (exo.t_out - exo.t_supply)
    cost = float(np.sum(w * (fresh * tot + k * ahu.d_r * np.sum(flows * lift, axis=0) + ahu.kappa_f * tot ** 3)))
    direct = w[None, :] * (fresh[None, :] + k * ahu.d_r * lift + 3 * ahu.kappa_f * tot[None, :] ** 2)
    weights = (w * k * ahu.d_r)[:, None] * flows.T  # (T, I)
    indirect = np.einsum("ti,tij->j", weights, sens)
    return cost, direct.reshape(-1) + indirect, temps, sens


# -- centralised nonlinear ----------------------------------------------------

def solve_centralized_nonlinear(model: BuildingModel, exo: ExogenousSeries, tol: float = 1e-9,
                                restarts: int = 2, starts=None, seed: int = 0,
                                max_iter: int = 500) -> ReferenceSolution:
    """Multi-start SLSQP on the true problem with flows as the only decisions.

    ``starts`` are extra initial flow arrays ``(I, T)`` tried before the
    ``restarts`` random ones. The result is flagged as a local optimum.
    """
    t0 = time.perf_counter()
    dyn = build_discrete_dynamics(model, exo)
    n, horizon = model.n_zones, model.horizon
    m_lo = np.repeat(model.zone_array("m_min"), horizon)
    m_hi = np.repeat(model.zone_array("m_max"), horizon)
    t_min = model.zone_array("t_min")[:, None] + COMFORT_MARGIN
    t_max = model.zone_array("t_max")[:, None] - COMFORT_MARGIN
    cap = model.ahu.m_total_max
    cap_jac = np.zeros((horizon, n * horizon))
    for i in range(n):
        cap_jac[np.arange(horizon), i * horizon + np.arange(horizon)] = -1.0
    cache = {}

    def evaluate(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = p1_cost_and_gradient(model, exo, v.reshape(n, horizon), dyn)
        return cache[key]

    def fun(v):
        return evaluate(v)[0]

    def jac(v):
        return evaluate(v)[1]

    def comfort(v):
        temps = evaluate(v)[2][:, 1:]
        return np.concatenate([(temps - t_min).reshape(-1), (t_max - temps).reshape(-1)])

    def comfort_jac(v):
        sens = evaluate(v)[3][1:]  # (T-1, I, I*T)
        s = np.transpose(sens, (1, 0, 2)).reshape(-1, n * horizon)
        return np.vstack([s, -s])

    cons = [{"type": "ineq", "fun": lambda v: cap - v.reshape(n, horizon).sum(axis=0), "jac": lambda v: cap_jac}]
    if horizon > 1:
        cons.append({"type": "ineq", "fun": comfort, "jac": comfort_jac})
    rng = np.random.default_rng(seed)
    inits = [np.clip(np.asarray(s, dtype=float).reshape(-1), m_lo, m_hi) for s in (starts or [])]
    inits += [rng.uniform(m_lo, m_hi) for _ in range(restarts)]
    if not inits:
        inits = [0.5 * (m_lo + m_hi)]
    best, runs = None, []
    for v0 in inits:
        try:
            r = so.minimize(fun, v0, jac=jac, bounds=list(zip(m_lo, m_hi)), constraints=cons, method="SLSQP",
                            options={"maxiter": max_iter, "ftol": tol})
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            runs.append({"status": -1, "message": str(exc)})
            continue
        v = np.clip(r.x, m_lo, m_hi)
        sched = make_schedule(model, exo, v.reshape(n, horizon), tol=1e-6)
        ok = sched.violations.feasible
        runs.append({"status": int(r.status), "message": str(r.message), "cost": sched.cost.total, "feasible": ok,
                     "nit": int(r.nit)})
        if ok and (best is None or sched.cost.total < best.cost.total):
            best = sched
    if best is None:
        raise InfeasibleError(f"no start reached a feasible local optimum: {runs}")
    diag = {"runs": runs, "locally_optimal": True, "wall_clock": time.perf_counter() - t0}
    return ReferenceSolution(schedule=best, objective=best.cost.total, method="centralized-nonlinear",
                             diagnostics=diag)


# -- brute force --------------------------------------------------------------

def brute_force_oracle(model: BuildingModel, exo: ExogenousSeries, grid_resolution: float = 0.025,
                       grid=None, chunk: int = 1 << 18) -> ReferenceSolution:
    """Exhaustive search over a per-zone flow grid, stage by stage.

    Partial schedules are rolled forward with the exact dynamics and dropped
    as soon as a comfort bound or the AHU cap fails, so the enumeration is
    complete over the grid. Ties are broken lexicographically on the
    flattened (stage-major) flow vector.
    """
    n, horizon = model.n_zones, model.horizon
    if n > 2 or horizon > 3:
        raise ValueError("brute force is limited to n_zones <= 2 and horizon <= 3")
    dyn = build_discrete_dynamics(model, exo)
    if grid is None:
        levels = [np.round(np.arange(z.m_min, z.m_max + 0.5 * grid_resolution, grid_resolution), 12)
                  for z in model.zones]
        levels = [np.clip(lv, z.m_min, z.m_max) for lv, z in zip(levels, model.zones)]
    else:
        levels = [np.asarray(grid, dtype=float)] * n
    if max(len(lv) for lv in levels) > 21:
        raise ValueError("grid limited to 21 points per flow")
    combos = np.array(list(itertools.product(*levels)))  # (G, n), lexicographic
    ahu = model.ahu
    k = ahu.c_p * ahu.eta
    w = exo.price * model.dt / SECONDS_PER_HOUR
    cap = ahu.m_total_max
    t_min = model.zone_array("t_min")
    t_max = model.zone_array("t_max")
    tol = 1e-9

    # frontier: temps (P, n), cost (P,), history (P, t*n)
    temps = model.zone_array("t_init")[None, :]
    cost = np.zeros(1)
    hist = np.zeros((1, 0))
    combos = combos[combos.sum(axis=1) <= cap + tol]
    evaluated = 0
    for t in range(horizon):
        tot = combos.sum(axis=1)
        stage_fixed = w[t] * (k * (1 - ahu.d_r) * (exo.t_out[t] - exo.t_supply[t]) * tot + ahu.kappa_f * tot ** 3)
        new_t, new_c, new_h = [], [], []
        step = max(1, chunk // max(1, combos.shape[0]))
        for start in range(0, temps.shape[0], step):
            T = temps[start:start + step]
            C = cost[start:start + step]
            H = hist[start:start + step]
            lift = T - exo.t_supply[t]  # (P, n)
            x = combos[None, :, :] * lift[:, None, :]  # (P, G, n)
            c_new = C[:, None] + stage_fixed[None, :] + w[t] * k * ahu.d_r * x.sum(axis=2)
            evaluated += c_new.size
            if t + 1 < horizon:
                nxt = (T @ dyn.a_matrix.T)[:, None, :] + dyn.c_self[None, None, :] * x + dyn.d_const[None, None, :, t]
                ok = np.all((nxt >= t_min - tol) & (nxt <= t_max + tol), axis=2)
                p_idx, g_idx = np.nonzero(ok)
                new_t.append(nxt[p_idx, g_idx])
                new_c.append(c_new[p_idx, g_idx])
                new_h.append(np.hstack([H[p_idx], combos[g_idx]]))
            else:
                # last stage: keep only the cheapest completion of every prefix
                g_best = np.argmin(c_new, axis=1)
                p_idx = np.arange(T.shape[0])
                new_t.append(T)
                new_c.append(c_new[p_idx, g_best])
                new_h.append(np.hstack([H, combos[g_best]]))
        temps = np.concatenate(new_t) if new_t else np.zeros((0, n))
        cost = np.concatenate(new_c) if new_c else np.zeros(0)
        hist = np.concatenate(new_h) if new_h else np.zeros((0, (t + 1) * n))
        if cost.size == 0:
            return ReferenceSolution(schedule=None, objective=float("inf"), method="brute-force", feasible=False,
                                     diagnostics={"infeasible_at_resolution": True, "grid": [lv.tolist() for lv in levels],
                                                  "evaluated": evaluated})
    best_cost = cost.min()
    ties = np.flatnonzero(cost <= best_cost)
    order = np.lexsort(hist[ties].T[::-1])
    pick = ties[order[0]]
    flows = hist[pick].reshape(horizon, n).T
    sched = make_schedule(model, exo, flows, tol=1e-6)
    return ReferenceSolution(schedule=sched, objective=sched.cost.total, method="brute-force",
                             diagnostics={"grid": [lv.tolist() for lv in levels], "evaluated": evaluated,
                                          "enumerated_cost": float(best_cost)})


def grid_cell_increment(model: BuildingModel, exo: ExogenousSeries, flows, resolution: float = 0.025) -> float:
    """First-order cost change of moving every flow by one grid cell: ``h * ||grad||_1``."""
    _, grad, _, _ = p1_cost_and_gradient(model, exo, flows)
    return float(resolution * np.sum(np.abs(grad)))
