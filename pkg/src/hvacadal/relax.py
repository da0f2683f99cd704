"""McCormick relaxation of the zone cooling term and the stacked agent system.

Agent ``i`` owns ``x^i = (T_0, m_0, X_0, T_1, m_1, X_1, ...)`` (length
``3T``); the coordinator owns the total flow ``Y`` (length ``T``). The
coupled constraints are

* dynamics, one row per stage ``0..T-2``::

      A_d[i,i] x^i + sum_j A_d[i,j] x^j = b_d[i]

* total-flow rows ``sum_i B x^i - Y + s1 = 0`` and AHU cap rows
  ``sum_i B x^i - c + s2 = 0`` with slacks ``s1, s2 >= 0``.

The initial temperature is a given state, so the first stage's
temperature is pinned to ``t_init`` and the comfort band applies from
stage 1 on. With the temperature pinned the envelope rows of stage 0
collapse to the exact product ``X_0 = m_0 (t_init - T_supply)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, TextIO

import numpy as np

from .model import BuildingModel, DiscreteDynamics, ExogenousSeries, ModelError, ZoneParams

__all__ = [
    "RelaxationError",
    "McCormickBox",
    "EnvelopeRows",
    "mccormick_constraints",
    "envelope_interval",
    "LocalPolytope",
    "local_feasible_set",
    "StackedSystem",
    "assemble_stacked",
    "stack_agent",
    "unstack_agents",
    "stacked_residuals",
    "p2_violation",
    "p3_violation",
    "p4_violation",
    "dump_stacked",
]

VARS_PER_STAGE = 3
T_IDX, M_IDX, X_IDX = 0, 1, 2


class RelaxationError(ValueError):
    pass


@dataclass(frozen=True)
class McCormickBox:
    m_lo: float
    m_hi: float
    t_lo: float
    t_hi: float
    t_ref: float

    def __post_init__(self):
        if not self.m_lo < self.m_hi:
            raise RelaxationError(f"degenerate flow interval [{self.m_lo}, {self.m_hi}]")
        if not self.t_lo < self.t_hi:
            raise RelaxationError(f"degenerate temperature interval [{self.t_lo}, {self.t_hi}]")
        if not self.t_ref < self.t_lo:
            raise RelaxationError("reference (supply) temperature must lie below the temperature interval")


@dataclass(frozen=True, eq=False)
class EnvelopeRows:
    """Affine rows ``coef @ (T, m, X) <= rhs``.

    Row order: lower envelope through the low corner, lower envelope through
    the high corner, upper envelope (m_lo, t_hi), upper envelope (m_hi, t_lo).
    """

    coef: np.ndarray
    rhs: np.ndarray

    def slack(self, temp, flow, x_cool) -> np.ndarray:
        v = np.array([temp, flow, x_cool], dtype=float)
        return self.rhs - self.coef @ v


def _envelope_rows(m_lo, m_hi, t_lo, t_hi, t_ref):
    # broadcasts over stage arrays; last axis of coef is (T, m, X)
    m_lo, m_hi, t_lo, t_hi, t_ref = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (m_lo, m_hi, t_lo, t_hi, t_ref)))
    coef = np.stack([
        np.stack([m_lo, t_lo - t_ref, -np.ones_like(m_lo)], axis=-1),
        np.stack([m_hi, t_hi - t_ref, -np.ones_like(m_lo)], axis=-1),
        np.stack([-m_lo, -(t_hi - t_ref), np.ones_like(m_lo)], axis=-1),
        np.stack([-m_hi, -(t_lo - t_ref), np.ones_like(m_lo)], axis=-1),
    ], axis=-2)
    rhs = np.stack([m_lo * t_lo, m_hi * t_hi, -m_lo * t_hi, -m_hi * t_lo], axis=-1)
    return coef, rhs


def mccormick_constraints(box: McCormickBox) -> EnvelopeRows:
    coef, rhs = _envelope_rows(box.m_lo, box.m_hi, box.t_lo, box.t_hi, box.t_ref)
    return EnvelopeRows(coef=coef, rhs=rhs)


def envelope_interval(box: McCormickBox, flow, temp):
    """Feasible range of ``X`` at ``(flow, temp)``: (max of lower rows, min of upper rows)."""
    flow = np.asarray(flow, dtype=float)
    temp = np.asarray(temp, dtype=float)
    dt_lo, dt_hi = box.t_lo - box.t_ref, box.t_hi - box.t_ref
    lo = np.maximum(box.m_lo * (temp - box.t_ref) + flow * dt_lo - box.m_lo * dt_lo,
                    box.m_hi * (temp - box.t_ref) + flow * dt_hi - box.m_hi * dt_hi)
    hi = np.minimum(flow * dt_hi + box.m_lo * (temp - box.t_ref) - box.m_lo * dt_hi,
                    box.m_hi * (temp - box.t_ref) + flow * dt_lo - box.m_hi * dt_lo)
    return lo, hi


@dataclass(frozen=True, eq=False)
class LocalPolytope:
    """Zone feasible set: ``lower <= x <= upper`` and ``rows @ x <= rhs``."""

    lower: np.ndarray
    upper: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray

    @property
    def n_vars(self) -> int:
        return int(self.lower.shape[0])

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = max(np.max(self.lower - x, initial=0.0), np.max(x - self.upper, initial=0.0))
        if self.rows.size:
            v = max(v, float(np.max(self.rows @ x - self.rhs, initial=0.0)))
        return float(v)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.violation(x) <= tol


def local_feasible_set(zone: ZoneParams, t_supply, *, pin_initial: bool = True) -> LocalPolytope:
    """Box bounds plus four envelope rows per stage for one zone.

    ``t_supply`` has one entry per stage. Variables follow the interleaved
    ``(T, m, X)`` layout; there are ``3T`` of them and ``4T`` rows.
    """
    t_supply = np.asarray(t_supply, dtype=float)
    horizon = t_supply.shape[0]
    t_lo = np.full(horizon, zone.t_min)
    t_hi = np.full(horizon, zone.t_max)
    if pin_initial:
        t_lo[0] = t_hi[0] = zone.t_init
    if np.any(t_supply >= t_lo):
        raise RelaxationError("supply temperature must lie below the zone temperature range")
    coef, rhs = _envelope_rows(zone.m_min, zone.m_max, t_lo, t_hi, t_supply)
    n = VARS_PER_STAGE * horizon
    rows = np.zeros((4 * horizon, n))
    for t in range(horizon):
        rows[4 * t:4 * t + 4, 3 * t:3 * t + 3] = coef[t]
    lower = np.empty(n)
    upper = np.empty(n)
    lower[T_IDX::3], upper[T_IDX::3] = t_lo, t_hi
    lower[M_IDX::3], upper[M_IDX::3] = zone.m_min, zone.m_max
    # X range implied by the envelopes over the box
    lower[X_IDX::3] = zone.m_min * (t_lo - t_supply)
    upper[X_IDX::3] = zone.m_max * (t_hi - t_supply)
    return LocalPolytope(lower=lower, upper=upper, rows=rows, rhs=rhs.reshape(-1))


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """Explicit matrices of the stacked relaxed problem.

    Shapes (``n = 3T``): ``a_self[i]`` and ``a_neighbor[(i, j)]`` are
    ``(T-1, n)``; ``b`` is ``(n_zones, T-1)``; ``b_flow`` ``(T, n)`` is
    shared by all zones; ``b_coord = -I_T``; ``c`` is ``(T,)``.
    """

    a_self: tuple[np.ndarray, ...]
    a_neighbor: Mapping[tuple[int, int], np.ndarray]
    b: np.ndarray
    b_flow: np.ndarray
    b_coord: np.ndarray
    c: np.ndarray
    polytopes: tuple[LocalPolytope, ...]
    dyn: DiscreteDynamics

    @property
    def n_zones(self) -> int:
        return len(self.a_self)

    @property
    def horizon(self) -> int:
        return int(self.c.shape[0])

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.a_neighbor if a == i)


def assemble_stacked(dyn: DiscreteDynamics, model: BuildingModel, *, pin_initial: bool = True) -> StackedSystem:
    """Build the block-banded matrices of the stacked relaxed problem."""
    if dyn.n_zones != model.n_zones or dyn.horizon != model.horizon:
        raise RelaxationError(
            f"dynamics are {dyn.n_zones} zones x {dyn.horizon} stages, "
            f"model is {model.n_zones} x {model.horizon}")
    horizon = model.horizon
    n = VARS_PER_STAGE * horizon
    rows = horizon - 1
    a_self = []
    for i in range(model.n_zones):
        a = np.zeros((rows, n))
        for t in range(rows):
            a[t, 3 * t + T_IDX] = dyn.a_self[i]
            a[t, 3 * t + X_IDX] = dyn.c_self[i]
            a[t, 3 * (t + 1) + T_IDX] = -1.0
        a.setflags(write=False)
        a_self.append(a)
    a_neighbor = {}
    for (i, j), coeff in sorted(dyn.a_neighbor.items()):
        a = np.zeros((rows, n))
        for t in range(rows):
            a[t, 3 * t + T_IDX] = coeff
        a.setflags(write=False)
        a_neighbor[(i, j)] = a
    b = -np.asarray(dyn.d_const[:, :rows])
    b_flow = np.zeros((horizon, n))
    b_flow[np.arange(horizon), 3 * np.arange(horizon) + M_IDX] = 1.0
    b_coord = -np.eye(horizon)
    c = np.full(horizon, model.ahu.m_total_max)
    polys = tuple(local_feasible_set(z, dyn.t_supply, pin_initial=pin_initial) for z in model.zones)
    for arr in (b, b_flow, b_coord, c):
        arr.setflags(write=False)
    return StackedSystem(a_self=tuple(a_self), a_neighbor=a_neighbor, b=b, b_flow=b_flow,
                         b_coord=b_coord, c=c, polytopes=polys, dyn=dyn)


def stack_agent(temps, flows, x_cool) -> np.ndarray:
    """Interleave per-stage arrays into agent vectors; works on ``(T,)`` or ``(n_zones, T)``."""
    temps, flows, x_cool = (np.asarray(a, dtype=float) for a in (temps, flows, x_cool))
    out = np.stack([temps, flows, x_cool], axis=-1)
    return out.reshape(*temps.shape[:-1], -1)


def unstack_agents(x):
    """Inverse of :func:`stack_agent`: returns ``(temps, flows, x_cool)``."""
    x = np.asarray(x, dtype=float)
    return x[..., T_IDX::3], x[..., M_IDX::3], x[..., X_IDX::3]


def stacked_residuals(sys: StackedSystem, agents, y_total, s1, s2):
    """Coupled-row residuals from the explicit matrices.

    Returns ``(dyn (n_zones, T-1), flow (T,), cap (T,))``.
    """
    agents = np.asarray(agents, dtype=float)
    dyn_res = np.empty_like(sys.b)
    for i in range(sys.n_zones):
        r = sys.a_self[i] @ agents[i] - sys.b[i]
        for j in sys.neighbors(i):
            r = r + sys.a_neighbor[(i, j)] @ agents[j]
        dyn_res[i] = r
    bx = sum(sys.b_flow @ agents[i] for i in range(sys.n_zones))
    flow = bx + sys.b_coord @ np.asarray(y_total, dtype=float) + np.asarray(s1, dtype=float)
    cap = bx - sys.c + np.asarray(s2, dtype=float)
    return dyn_res, flow, cap


def _zone_violation(sys: StackedSystem, agents) -> float:
    return max(p.violation(a) for p, a in zip(sys.polytopes, np.asarray(agents)))


def p2_violation(model: BuildingModel, exo: ExogenousSeries, temps, flows, x_cool, y_total,
                 *, pin_initial: bool = True) -> float:
    """Largest violation of the relaxed problem's constraints, evaluated row by row."""
    from .model import build_discrete_dynamics

    dyn = build_discrete_dynamics(model, exo)
    temps, flows, x_cool = (np.asarray(a, dtype=float) for a in (temps, flows, x_cool))
    y = np.asarray(y_total, dtype=float)
    worst = 0.0
    tc = exo.t_supply
    for i, z in enumerate(model.zones):
        for t in range(model.horizon):
            if t + 1 < model.horizon:
                nxt = dyn.a_self[i] * temps[i, t] + dyn.c_self[i] * x_cool[i, t] + dyn.d_const[i, t]
                nxt += sum(dyn.a_neighbor[(i, j)] * temps[j, t] for j in model.neighbors(i))
                worst = max(worst, abs(nxt - temps[i, t + 1]))
            worst = max(worst, z.m_min - flows[i, t], flows[i, t] - z.m_max)
            if pin_initial and t == 0:
                lo = hi = z.t_init
                worst = max(worst, abs(temps[i, 0] - z.t_init))
            else:
                lo, hi = z.t_min, z.t_max
                worst = max(worst, lo - temps[i, t], temps[i, t] - hi)
            m, T, X = flows[i, t], temps[i, t], x_cool[i, t]
            worst = max(
                worst,
                z.m_min * (T - tc[t]) + m * (lo - tc[t]) - z.m_min * (lo - tc[t]) - X,
                z.m_max * (T - tc[t]) + m * (hi - tc[t]) - z.m_max * (hi - tc[t]) - X,
                X - (m * (hi - tc[t]) + z.m_min * (T - tc[t]) - z.m_min * (hi - tc[t])),
                X - (z.m_max * (T - tc[t]) + m * (lo - tc[t]) - z.m_max * (lo - tc[t])),
            )
    total = flows.sum(axis=0)
    worst = max(worst, float(np.max(total - y)), float(np.max(total - model.ahu.m_total_max)))
    return float(max(worst, 0.0))


def p3_violation(sys: StackedSystem, agents, y_total) -> float:
    agents = np.asarray(agents, dtype=float)
    zeros = np.zeros(sys.horizon)
    dyn_res, flow, cap = stacked_residuals(sys, agents, y_total, zeros, zeros)
    return float(max(np.max(np.abs(dyn_res), initial=0.0), np.max(flow, initial=0.0),
                     np.max(cap, initial=0.0), _zone_violation(sys, agents)))


def p4_violation(sys: StackedSystem, agents, y_total, s1, s2) -> float:
    dyn_res, flow, cap = stacked_residuals(sys, agents, y_total, s1, s2)
    return float(max(np.max(np.abs(dyn_res), initial=0.0), np.max(np.abs(flow)), np.max(np.abs(cap)),
                     -np.min(s1), -np.min(s2), _zone_violation(sys, agents)))


def dump_stacked(sys: StackedSystem, out: TextIO) -> None:
    """Write nonzeros as ``%block name`` headers followed by ``row col value`` (1-based) lines."""

    def block(name, mat):
        mat = np.atleast_2d(mat)
        rr, cc = np.nonzero(mat)
        out.write(f"%block {name} {mat.shape[0]} {mat.shape[1]} {rr.size}\n")
        for r, c in zip(rr, cc):
            out.write(f"{r + 1} {c + 1} {mat[r, c]:.17g}\n")

    out.write("%%StackedSystem coordinate real general\n")
    for i, a in enumerate(sys.a_self):
        block(f"A_d[{i},{i}]", a)
    for (i, j), a in sys.a_neighbor.items():
        block(f"A_d[{i},{j}]", a)
    for i in range(sys.n_zones):
        block(f"b_d[{i}]", sys.b[i][None, :])
    block("B_d[zone]", sys.b_flow)
    block("B_d[0]", sys.b_coord)
    block("c_d", sys.c[None, :])
