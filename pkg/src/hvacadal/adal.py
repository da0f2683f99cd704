"""Accelerated distributed augmented Lagrangian solver for the relaxed problem.

Each iteration every agent minimises its local augmented Lagrangian against
the same frozen snapshot of all other agents (Jacobi scheme):

* zone ``i`` solves a convex QP over its local polytope (linear cooling cost,
  linear multiplier terms, quadratic penalties of every coupled row it
  appears in);
* the coordinator picks the total flow ``Y`` and the slacks ``s1, s2`` stage
  by stage (cubic fan cost plus quadratic penalties).

The primal step is relaxed, ``x <- x + tau (x_hat - x)``, then the residual
of all coupled rows is checked and the multipliers take a ``rho`` step.

Jacobi updates overshoot on rows shared by many agents: each agent corrects
the whole residual of a row as if the others stood still. With
``proximal=True`` (the default) every agent adds ``rho (q_r - 1) / 2`` times
the squared change of its own contribution to each coupled row ``r``, where
``q_r`` is the number of agents in that row. Each agent then takes only its
share of the correction, the damping is local to the crowded rows (total
flow and AHU cap), and ``tau`` defaults to 1. With ``proximal=False`` the
plain penalty is used and ``tau`` defaults to ``1 / (1 + max degree)``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._qp import StagewiseQP
from .model import BuildingModel, ExogenousSeries, build_discrete_dynamics
from .power import ObjectiveTerms, objective_terms, relaxed_objective
from .relax import (M_IDX, T_IDX, X_IDX, StackedSystem, assemble_stacked, stack_agent,
                    unstack_agents)

__all__ = [
    "SolverConfig",
    "Multipliers",
    "AgentTrajectory",
    "CoordinatorTrajectory",
    "IterateState",
    "RelaxedSolution",
    "SubproblemError",
    "AdalSolver",
    "default_tau",
    "initial_state",
    "augmented_lagrangian",
    "coupled_residuals",
    "residual",
    "update_multipliers",
    "solve_subproblem_zone",
    "solve_subproblem_coordinator",
    "adal_solve",
]

log = logging.getLogger(__name__)


class SubproblemError(RuntimeError):
    """A zone QP failed to reach tolerance; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 15.0
    epsilon: float = 1e-2
    max_iters: int = 500
    tau: float | None = None
    proximal: bool = True
    sub_tol: float = 1e-8
    sub_max_iters: int = 80
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if self.tau is not None and not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not self.sub_tol > 0:
            raise ValueError("sub_tol must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True, eq=False)
class Multipliers:
    lam: np.ndarray     # (n_zones, T-1) dynamics rows
    gamma: np.ndarray   # (T,) total-flow rows
    eta: np.ndarray     # (T,) AHU-cap rows

    @classmethod
    def zeros(cls, n_zones, horizon):
        return cls(np.zeros((n_zones, horizon - 1)), np.zeros(horizon), np.zeros(horizon))


@dataclass(frozen=True, eq=False)
class AgentTrajectory:
    temps: np.ndarray
    flows: np.ndarray
    x_cool: np.ndarray

    def stacked(self) -> np.ndarray:
        return stack_agent(self.temps, self.flows, self.x_cool)

    @classmethod
    def from_stacked(cls, x):
        return cls(*unstack_agents(x))


@dataclass(frozen=True, eq=False)
class CoordinatorTrajectory:
    y_total: np.ndarray


@dataclass(frozen=True, eq=False)
class IterateState:
    """All agents' primal iterates, slacks and multipliers at one iteration.

    ``agents`` is ``(n_zones, 3T)`` in the interleaved ``(T, m, X)`` layout.
    """

    agents: np.ndarray
    y_total: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    multipliers: Multipliers
    iteration: int = 0
    residual_history: tuple = ()

    def agent(self, i: int) -> AgentTrajectory:
        return AgentTrajectory.from_stacked(self.agents[i])

    @property
    def coordinator(self) -> CoordinatorTrajectory:
        return CoordinatorTrajectory(self.y_total)


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    temps: np.ndarray
    flows: np.ndarray
    x_cool: np.ndarray
    y_total: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    residual_history: list
    objective_history: list
    trace: list = field(default_factory=list)
    wall_clock: float = 0.0
    zone_time: float = 0.0
    subproblem_failures: int = 0

    @property
    def horizon(self) -> int:
        return int(self.temps.shape[1])


def default_tau(model: BuildingModel) -> float:
    """``1 / (1 + max zone degree)``."""
    deg = model.degree()
    return 1.0 / (1.0 + (int(deg.max()) if deg.size else 0))


# -- residuals and the augmented Lagrangian ---------------------------------

def coupled_residuals(state: IterateState, sys: StackedSystem):
    """Residuals of the coupled rows: ``(dyn (n_zones, T-1), flow (T,), cap (T,))``.

    Structured evaluation; agrees with :func:`relax.stacked_residuals`.
    """
    dyn = sys.dyn
    temps = state.agents[:, T_IDX::3]
    flows = state.agents[:, M_IDX::3]
    xc = state.agents[:, X_IDX::3]
    r_dyn = (dyn.a_matrix @ temps[:, :-1] + dyn.c_self[:, None] * xc[:, :-1]
             - temps[:, 1:] + dyn.d_const[:, :-1])
    total = flows.sum(axis=0)
    r_flow = total - state.y_total + state.s1
    r_cap = total - sys.c + state.s2
    return r_dyn, r_flow, r_cap


def _residual_norm(r_dyn, r_flow, r_cap) -> float:
    parts = [float(np.linalg.norm(r)) for r in r_dyn] + [float(np.linalg.norm(r_flow)),
                                                         float(np.linalg.norm(r_cap))]
    return math.fsum(parts)


def residual(state: IterateState, sys: StackedSystem) -> float:
    """Sum of the 2-norms of every zone's dynamics rows and both flow-row blocks."""
    return _residual_norm(*coupled_residuals(state, sys))


def augmented_lagrangian(state: IterateState, sys: StackedSystem, costs: ObjectiveTerms, rho: float) -> float:
    r_dyn, r_flow, r_cap = coupled_residuals(state, sys)
    mult = state.multipliers
    value = relaxed_objective(costs, state.agents[:, X_IDX::3], state.y_total)
    value += float(np.sum(mult.lam * r_dyn)) + 0.5 * rho * float(np.sum(r_dyn ** 2))
    value += float(mult.gamma @ r_flow) + 0.5 * rho * float(r_flow @ r_flow)
    value += float(mult.eta @ r_cap) + 0.5 * rho * float(r_cap @ r_cap)
    return value


def update_multipliers(state: IterateState, sys: StackedSystem, config: SolverConfig) -> Multipliers:
    r_dyn, r_flow, r_cap = coupled_residuals(state, sys)
    m = state.multipliers
    rho = config.rho
    return Multipliers(lam=m.lam + rho * r_dyn, gamma=m.gamma + rho * r_flow, eta=m.eta + rho * r_cap)


# -- coordinator --------------------------------------------------------------

def _coordinator_stage_solve(flow_sum, gamma, eta, costs: ObjectiveTerms, rho, cap, y_max):
    """Per-stage minimiser of the coordinator's augmented Lagrangian.

    ``flow_sum`` is the zones' total flow ``M`` in both coupled rows; the
    proximal variant passes shifted centres instead, see
    :func:`solve_subproblem_coordinator`.

    For fixed ``Y`` the optimal ``s1`` is ``max(0, Y - M - gamma/rho)``;
    substituting leaves a convex scalar problem in ``Y`` whose derivative

        g'(Y) = 3 b Y^2 + a - gamma + (gamma        if Y > M + gamma/rho
                                       rho (Y - M)  otherwise)

    is nondecreasing. Its root on ``[0, y_max]`` is found by Newton steps
    safeguarded with a bisection bracket.
    """
    M = np.asarray(flow_sum, dtype=float)
    a, b = costs.y_lin, costs.y_cub
    kink = M + gamma / rho

    def deriv(y):
        pen = np.where(y > kink, gamma, rho * (y - M))
        curv = np.where(y > kink, 0.0, rho)
        return 3 * b * y * y + a - gamma + pen, 6 * b * y + curv

    lo = np.zeros_like(M)
    hi = np.full_like(M, y_max)
    g_lo, _ = deriv(lo)
    g_hi, _ = deriv(hi)
    y = np.clip(M, lo, hi)
    at_lo = g_lo >= 0
    at_hi = g_hi <= 0
    for _ in range(100):
        g, h = deriv(y)
        lo = np.where(g < 0, y, lo)
        hi = np.where(g >= 0, y, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(h > 0, y - g / h, np.nan)
        inside = (step > lo) & (step < hi)
        y_new = np.where(inside, step, 0.5 * (lo + hi))
        if np.all(np.abs(y_new - y) <= 1e-15 * (1 + np.abs(y))):
            y = y_new
            break
        y = y_new
    y = np.where(at_lo, 0.0, np.where(at_hi, y_max, y))
    s1 = np.maximum(0.0, y - M - gamma / rho)
    s2 = np.maximum(0.0, cap - M - eta / rho)
    return y, s1, s2


def solve_subproblem_coordinator(snapshot: IterateState, sys: StackedSystem, config: SolverConfig,
                                 costs: ObjectiveTerms, y_max: float | None = None):
    """Minimise the coordinator's local augmented Lagrangian over ``Y, s1, s2 >= 0``.

    Returns ``(CoordinatorTrajectory, s1, s2)``. In the proximal variant the
    coordinator's own share ``u = s1 - Y`` of each flow row (and ``s2`` of
    each cap row) carries an extra ``rho I / 2 (u - u_k)^2``. Completing the
    square turns penalty plus proximal term into ``rho (1 + I) / 2 (M' + u)^2``
    with ``M' = (M - I u_k) / (1 + I)``, so the same stage solve applies.
    """
    flow_sum = snapshot.agents[:, M_IDX::3].sum(axis=0)
    if y_max is None:
        y_max = float(np.sum([p.upper[M_IDX] for p in sys.polytopes]))
    m = snapshot.multipliers
    rho = config.rho
    if not config.proximal:
        y, s1, s2 = _coordinator_stage_solve(flow_sum, m.gamma, m.eta, costs, rho, sys.c, y_max)
        return CoordinatorTrajectory(y), s1, s2
    n = sys.n_zones
    flow_c = (flow_sum - n * (snapshot.s1 - snapshot.y_total)) / (1 + n)
    cap_c = (flow_sum - sys.c - n * snapshot.s2) / (1 + n) + sys.c
    rho_c = rho * (1 + n)
    y, s1, _ = _coordinator_stage_solve(flow_c, m.gamma, m.eta, costs, rho_c, sys.c, y_max)
    s2 = np.maximum(0.0, sys.c - cap_c - m.eta / rho_c)
    return CoordinatorTrajectory(y), s1, s2


# -- zone subproblems ----------------------------------------------------------

def _zone_hessian(sys: StackedSystem, i: int, rho: float, proximal: bool = False) -> np.ndarray:
    """Hessian of zone ``i``'s local augmented Lagrangian.

    Each coupled row the zone appears in contributes ``rho a'a``, scaled by
    the row's agent count in the proximal variant.
    """
    def weight(count):
        return float(count) if proximal else 1.0

    H = weight(1 + len(sys.neighbors(i))) * sys.a_self[i].T @ sys.a_self[i]
    for j in sys.neighbors(i):
        a = sys.a_neighbor[(j, i)]
        H = H + weight(1 + len(sys.neighbors(j))) * a.T @ a
    H = H + 2.0 * weight(1 + sys.n_zones) * sys.b_flow.T @ sys.b_flow
    return rho * H


class _ZoneReduction:
    """Eliminates the pinned first stage from the zone QPs.

    With ``T_0`` fixed the stage-0 envelope collapses to ``X_0 = m_0 (t_init
    - T_supply)``, which leaves no interior for an interior-point method.
    The reduced variable is ``z = (m_0, T_1, m_1, X_1, ...)`` and
    ``x = lift(z)``; without pinning ``z = x``.
    """

    def __init__(self, sys: StackedSystem):
        polys = sys.polytopes
        lower = np.stack([p.lower for p in polys])
        upper = np.stack([p.upper for p in polys])
        pinned = lower[:, T_IDX] == upper[:, T_IDX]
        if np.any(pinned) and not np.all(pinned):
            raise ValueError("either every zone or no zone may have a pinned initial temperature")
        self.pinned = bool(np.all(pinned))
        horizon = sys.horizon
        self.n_full = 3 * horizon
        blocks = np.stack([np.stack([p.rows[4 * t:4 * t + 4, 3 * t:3 * t + 3] for t in range(horizon)])
                           for p in polys])
        rhs = np.stack([p.rhs.reshape(horizon, 4) for p in polys])
        self._lower_full, self._upper_full = lower, upper
        self._rows_full, self._rhs_full = blocks, rhs
        if self.pinned:
            self.t0 = lower[:, T_IDX].copy()
            self.lift0 = self.t0 - sys.dyn.t_supply[0]
            self.lower = np.concatenate([lower[:, M_IDX:M_IDX + 1], lower[:, 3:]], axis=1)
            self.upper = np.concatenate([upper[:, M_IDX:M_IDX + 1], upper[:, 3:]], axis=1)
            self.blocks, self.rhs, self.offset = blocks[:, 1:], rhs[:, 1:], 1
        else:
            self.lower, self.upper = lower, upper
            self.blocks, self.rhs, self.offset = blocks, rhs, 0

    def polish(self, x, idx):
        """Clip to the box, then clamp ``X`` into the envelope interval at the given ``(T, m)``.

        Every envelope row has a unit coefficient on ``X``, so this removes
        the interior-point method's residual row violations exactly.
        """
        x = np.clip(x, self._lower_full[idx], self._upper_full[idx])
        stages = x.reshape(len(idx), -1, 3)
        R, rhs = self._rows_full[idx], self._rhs_full[idx]
        rest = R[..., T_IDX] * stages[:, :, None, T_IDX] + R[..., M_IDX] * stages[:, :, None, M_IDX]
        cx = R[..., X_IDX]
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = (rhs - rest) / cx
        lo = np.max(np.where(cx < 0, bound, -np.inf), axis=2)
        hi = np.min(np.where(cx > 0, bound, np.inf), axis=2)
        stages[:, :, X_IDX] = np.minimum(np.maximum(stages[:, :, X_IDX], lo), hi)
        return stages.reshape(len(idx), -1)

    def lift_items(self, z, idx):
        if not self.pinned:
            return z
        x = np.empty((z.shape[0], self.n_full))
        x[:, T_IDX] = self.t0[idx]
        x[:, M_IDX] = z[:, 0]
        x[:, X_IDX] = self.lift0[idx] * z[:, 0]
        x[:, 3:] = z[:, 1:]
        return x

    def reduce_vec(self, x):
        return x if not self.pinned else np.concatenate([x[:, M_IDX:M_IDX + 1], x[:, 3:]], axis=1)

    def reduce_linear(self, q, idx):
        """Linear term ``S'(q + P x_c)`` of the reduced QP for items ``idx``."""
        if not self.pinned:
            return q
        xc = np.zeros((len(idx), self.n_full))
        xc[:, T_IDX] = self.t0[idx]
        q = q + (self._P_full[idx] @ xc[..., None])[..., 0]
        out = np.empty((len(idx), self.n_full - 2))
        out[:, 0] = q[:, M_IDX] + self.lift0[idx] * q[:, X_IDX]
        out[:, 1:] = q[:, 3:]
        return out

    def reduce_hessian(self, P):
        self._P_full = P
        if not self.pinned:
            return P
        nb, n = P.shape[0], self.n_full
        S = np.zeros((nb, n, n - 2))
        S[:, M_IDX, 0] = 1.0
        S[:, X_IDX, 0] = self.lift0
        S[:, 3:, 1:] = np.eye(n - 3)
        return np.einsum("kai,kab,kbj->kij", S, P, S)


class AdalSolver:
    """Holds the per-instance precomputation (stacked system, zone factorisations).

    Parameters
    ----------
    model, exo : BuildingModel, ExogenousSeries
        The instance.
    config : SolverConfig
        Penalty, stopping rule and step size.
    """

    def __init__(self, model: BuildingModel, exo: ExogenousSeries, config: SolverConfig = SolverConfig()):
        self.model = model
        self.exo = exo
        self.config = config
        self.dyn = build_discrete_dynamics(model, exo)
        self.sys = assemble_stacked(self.dyn, model)
        self.costs = objective_terms(model, exo)
        if config.tau is not None:
            self.tau = config.tau
        else:
            self.tau = 1.0 if config.proximal else default_tau(model)
        self.y_max = float(np.sum(model.zone_array("m_max")))
        n_zones = model.n_zones
        P = np.stack([_zone_hessian(self.sys, i, config.rho, config.proximal) for i in range(n_zones)])
        self.P = P
        self.red = _ZoneReduction(self.sys)
        red = self.red
        self.qp = StagewiseQP(red.reduce_hessian(P), red.blocks, red.offset, red.lower, red.upper, red.rhs)
        self.subproblem_failures = 0
        self.zone_time = 0.0

    # zone linear terms: the gradient of the zone's local augmented Lagrangian at x = 0
    def zone_linear_terms(self, snapshot: IterateState) -> np.ndarray:
        cfg, dyn = self.config, self.dyn
        r_dyn, r_flow, r_cap = coupled_residuals(snapshot, self.sys)
        mult = snapshot.multipliers
        horizon = self.model.horizon
        n_zones = self.model.n_zones
        w = mult.lam + cfg.rho * r_dyn
        g = np.zeros((n_zones, 3 * horizon))
        gT = dyn.a_matrix.T @ w
        g[:, T_IDX:3 * (horizon - 1):3] += gT
        g[:, 3 + T_IDX::3] -= w
        g[:, X_IDX:3 * (horizon - 1):3] += dyn.c_self[:, None] * w
        g[:, M_IDX::3] += (mult.gamma + mult.eta + cfg.rho * (r_flow + r_cap))[None, :]
        g[:, X_IDX::3] += self.costs.x_coef[None, :]
        g -= (self.P @ snapshot.agents[..., None])[..., 0]
        return g

    def solve_zones(self, snapshot: IterateState, order=None) -> np.ndarray:
        """Solve all zone QPs against ``snapshot``; ``order`` only changes scheduling."""
        n_zones = self.model.n_zones
        order = np.arange(n_zones) if order is None else np.asarray(order)
        q = self.zone_linear_terms(snapshot)
        workers = max(1, min(self.config.workers, n_zones))
        chunks = [c for c in np.array_split(order, workers) if c.size]
        cfg = self.config

        def run(chunk):
            qz = self.red.reduce_linear(q[chunk], chunk)
            z = self.qp.solve(qz, idx=chunk, tol=cfg.sub_tol, max_iter=cfg.sub_max_iters)
            return self.red.polish(self.red.lift_items(z, chunk), chunk)

        t0 = time.perf_counter()
        if workers == 1:
            results = [run(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, chunks))
        self.zone_time += time.perf_counter() - t0
        out = np.empty_like(snapshot.agents)
        for chunk, res in zip(chunks, results):
            out[chunk] = res
        failed = int(np.count_nonzero(~self.qp.converged))
        if failed:
            self.subproblem_failures += failed
            log.debug("%d zone subproblems hit the iteration cap", failed)
        return out

    def initial_state(self) -> IterateState:
        return initial_state(self.model, self.exo, self.sys)

    def step(self, state: IterateState, order=None) -> IterateState:
        """One Jacobi iteration: local solves, relaxed primal step, multiplier update.

        The returned state carries the residual of the new primal point; the
        multipliers are updated only when that residual exceeds ``epsilon``.
        """
        cfg, tau = self.config, self.tau
        self.qp.warm_start(self.red.reduce_vec(state.agents))
        x_hat = self.solve_zones(state, order=order)
        coord, s1_hat, s2_hat = solve_subproblem_coordinator(state, self.sys, cfg, self.costs, self.y_max)
        agents = state.agents + tau * (x_hat - state.agents)
        y = state.y_total + tau * (coord.y_total - state.y_total)
        s1 = state.s1 + tau * (s1_hat - state.s1)
        s2 = state.s2 + tau * (s2_hat - state.s2)
        new = IterateState(agents=agents, y_total=y, s1=s1, s2=s2, multipliers=state.multipliers,
                           iteration=state.iteration + 1)
        res = residual(new, self.sys)
        history = state.residual_history + (res,)
        mult = state.multipliers if res <= cfg.epsilon else update_multipliers(new, self.sys, cfg)
        return replace(new, multipliers=mult, residual_history=history)

    def objective(self, state: IterateState) -> float:
        return relaxed_objective(self.costs, state.agents[:, X_IDX::3], state.y_total)

    def solve(self, state: IterateState | None = None, order=None) -> tuple[IterateState, RelaxedSolution]:
        cfg = self.config
        state = self.initial_state() if state is None else state
        t_start = time.perf_counter()
        objectives, trace = [], []
        converged = False
        res = residual(state, self.sys)
        for _ in range(cfg.max_iters):
            state = self.step(state, order=order)
            res = state.residual_history[-1]
            obj = self.objective(state)
            objectives.append(obj)
            r_dyn, r_flow, r_cap = coupled_residuals(state, self.sys)
            trace.append({
                "iteration": state.iteration,
                "residual": res,
                "objective": obj,
                "dyn_residual": math.fsum(float(np.linalg.norm(r)) for r in r_dyn),
                "flow_residual": float(np.linalg.norm(r_flow)),
                "cap_residual": float(np.linalg.norm(r_cap)),
                "wall_clock": time.perf_counter() - t_start,
            })
            if res <= cfg.epsilon:
                converged = True
                break
        if not converged:
            log.warning("ADAL stopped at the iteration cap (%d) with residual %.3g > %.3g",
                        cfg.max_iters, res, cfg.epsilon)
        temps, flows, xc = unstack_agents(state.agents)
        sol = RelaxedSolution(
            temps=temps.copy(), flows=flows.copy(), x_cool=xc.copy(), y_total=state.y_total.copy(),
            s1=state.s1.copy(), s2=state.s2.copy(), objective=self.objective(state), residual=res,
            iterations=state.iteration, converged=converged, residual_history=list(state.residual_history),
            objective_history=objectives, trace=trace, wall_clock=time.perf_counter() - t_start,
            zone_time=self.zone_time, subproblem_failures=self.subproblem_failures,
        )
        return state, sol


def initial_state(model: BuildingModel, exo: ExogenousSeries, sys: StackedSystem | None = None) -> IterateState:
    """Band-midpoint temperatures, minimum flows, lower-envelope ``X``, ``Y = sum m``."""
    if sys is None:
        sys = assemble_stacked(build_discrete_dynamics(model, exo), model)
    horizon, n_zones = model.horizon, model.n_zones
    temps = np.empty((n_zones, horizon))
    temps[:] = (0.5 * (model.zone_array("t_min") + model.zone_array("t_max")))[:, None]
    temps[:, 0] = model.zone_array("t_init")
    flows = np.repeat(model.zone_array("m_min")[:, None], horizon, axis=1)
    xc = np.stack([p.lower[X_IDX::3] for p in sys.polytopes])
    # lower envelope at (m_min, T): the row through (m_min, t_lo) gives m_min (T - t_ref)
    xc = np.maximum(xc, flows * (temps - exo.t_supply[None, :]))
    y = flows.sum(axis=0)
    s1 = np.zeros(horizon)
    s2 = np.maximum(0.0, sys.c - y)
    return IterateState(agents=stack_agent(temps, flows, xc), y_total=y, s1=s1, s2=s2,
                        multipliers=Multipliers.zeros(n_zones, horizon))


def solve_subproblem_zone(i: int, snapshot: IterateState, solver: AdalSolver, *, warm_start=None,
                          raise_on_failure: bool = True) -> AgentTrajectory:
    """Minimise zone ``i``'s local augmented Lagrangian over its polytope.

    All other agents, the slacks and the multipliers are read from
    ``snapshot``. ``warm_start`` (a stacked vector) seeds the primal iterate;
    the QP's dual iterate persists inside ``solver`` between calls.
    """
    q = solver.zone_linear_terms(snapshot)[i]
    idx = np.array([i])
    red = solver.red
    start = snapshot.agents[i] if warm_start is None else np.asarray(warm_start, dtype=float)
    solver.qp.warm_start(red.reduce_vec(start[None, :]), idx)
    cfg = solver.config
    qz = red.reduce_linear(q[None, :], idx)
    z = solver.qp.solve(qz, idx=idx, tol=cfg.sub_tol, max_iter=cfg.sub_max_iters)
    x = red.polish(red.lift_items(z, idx), idx)[0]
    if not solver.qp.converged[i] and raise_on_failure:
        raise SubproblemError(f"zone {i} QP did not converge in {cfg.sub_max_iters} iterations",
                              best=AgentTrajectory.from_stacked(x))
    return AgentTrajectory.from_stacked(x)


def adal_solve(model: BuildingModel, exo: ExogenousSeries, config: SolverConfig = SolverConfig(),
               state: IterateState | None = None) -> tuple[IterateState, RelaxedSolution]:
    """Run the decentralised solver to ``residual <= epsilon`` or the iteration cap."""
    return AdalSolver(model, exo, config).solve(state)
