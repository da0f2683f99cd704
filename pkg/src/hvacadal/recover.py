"""Recovering a dynamics-feasible schedule from the relaxed solution.

The relaxed solution's cooling terms ``X*`` are kept as targets. Stage by
stage, each zone's flow is set to ``X* / (T - T_supply)`` clamped to its
flow bounds, the actual cooling ``m (T - T_supply)`` is recomputed and the
true dynamics advance all zones together. Comfort and AHU-cap violations
are measured, not repaired (an optional proportional AHU repair exists).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BuildingModel, ExogenousSeries, build_discrete_dynamics, simulate_schedule, simulate_step
from .power import CostBreakdown, schedule_cost

__all__ = [
    "GUARD_DELTA",
    "ConsistencyError",
    "ViolationReport",
    "Schedule",
    "recover_schedule",
    "validate_schedule",
    "make_schedule",
]

GUARD_DELTA = 0.5  # degC; below this margin over the supply temperature use the minimum flow


class ConsistencyError(AssertionError):
    """A schedule's temperatures disagree with the simulator (a bug, not bad input)."""


@dataclass(frozen=True, eq=False)
class ViolationReport:
    comfort: list = field(default_factory=list)   # (zone, stage, excess degC; + above band, - below)
    ahu_cap: list = field(default_factory=list)   # (stage, excess kg/s)
    max_comfort_excess: float = 0.0

    @property
    def feasible(self) -> bool:
        return not self.comfort and not self.ahu_cap

    def to_dict(self) -> dict:
        return {
            "comfort": [list(v) for v in self.comfort],
            "ahu_cap": [list(v) for v in self.ahu_cap],
            "max_comfort_excess": self.max_comfort_excess,
        }


@dataclass(frozen=True, eq=False)
class Schedule:
    temps: np.ndarray
    flows: np.ndarray
    x_cool: np.ndarray
    cost: CostBreakdown
    violations: ViolationReport

    @property
    def total_cost(self) -> float:
        return self.cost.total


def _violations(model: BuildingModel, temps, flows, tol: float) -> ViolationReport:
    comfort = []
    worst = 0.0
    for i, z in enumerate(model.zones):
        # stage 0 is the given initial state, not a decision
        for t in range(1, temps.shape[1]):
            T = temps[i, t]
            if T > z.t_max + tol:
                comfort.append((i, t, float(T - z.t_max)))
            elif T < z.t_min - tol:
                comfort.append((i, t, float(T - z.t_min)))
    if comfort:
        worst = max(abs(c[2]) for c in comfort)
    total = flows.sum(axis=0)
    cap = model.ahu.m_total_max
    ahu = [(t, float(total[t] - cap)) for t in range(total.shape[0]) if total[t] > cap + tol]
    return ViolationReport(comfort=comfort, ahu_cap=ahu, max_comfort_excess=float(worst))


def make_schedule(model: BuildingModel, exo: ExogenousSeries, flows, tol: float = 1e-9) -> Schedule:
    """Roll out ``flows`` through the true dynamics and package cost and violations."""
    flows = np.asarray(flows, dtype=float)
    temps = simulate_schedule(model, exo, flows)
    x_cool = flows * (temps - exo.t_supply[None, :])
    return Schedule(temps=temps, flows=flows, x_cool=x_cool, cost=schedule_cost(model, exo, flows, temps),
                    violations=_violations(model, temps, flows, tol))


def recover_schedule(relaxed, model: BuildingModel, exo: ExogenousSeries, *, repair_ahu: bool = False,
                     guard: float = GUARD_DELTA, tol: float = 1e-9) -> Schedule:
    """Forward pass turning relaxed cooling targets into a feasible flow schedule.

    ``relaxed`` is any object with an ``x_cool`` array of shape
    ``(n_zones, T)`` (e.g. :class:`adal.RelaxedSolution`). With
    ``repair_ahu`` every stage whose total flow exceeds the AHU cap has its
    zone flows scaled down proportionally before the state advances.
    """
    dyn = build_discrete_dynamics(model, exo)
    target = np.asarray(relaxed.x_cool, dtype=float)
    n, horizon = model.n_zones, model.horizon
    if target.shape != (n, horizon):
        raise ValueError(f"relaxed solution covers {target.shape}, expected {(n, horizon)}")
    m_lo, m_hi = model.zone_array("m_min"), model.zone_array("m_max")
    cap = model.ahu.m_total_max
    temps = np.empty((n, horizon))
    flows = np.empty((n, horizon))
    x_cool = np.empty((n, horizon))
    temps[:, 0] = model.zone_array("t_init")
    for t in range(horizon):
        lift = temps[:, t] - dyn.t_supply[t]
        safe = lift >= guard
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(safe, target[:, t] / np.where(safe, lift, 1.0), m_lo)
        m = np.maximum(np.minimum(m_hi, ratio), m_lo)
        m = np.where(safe, m, m_lo)
        if repair_ahu and m.sum() > cap:
            m = np.maximum(m * (cap / m.sum()), m_lo)
        flows[:, t] = m
        x_cool[:, t] = m * (temps[:, t] - dyn.t_supply[t])
        if t + 1 < horizon:
            temps[:, t + 1] = simulate_step(dyn, temps[:, t], x_cool[:, t], t)
    assert np.all(flows >= m_lo[:, None]) and np.all(flows <= m_hi[:, None])
    return Schedule(temps=temps, flows=flows, x_cool=x_cool, cost=schedule_cost(model, exo, flows, temps),
                    violations=_violations(model, temps, flows, tol))


def validate_schedule(schedule: Schedule, model: BuildingModel, exo: ExogenousSeries,
                      tol: float = 1e-9) -> ViolationReport:
    """Re-simulate the schedule's flows and report comfort/AHU violations.

    Raises :class:`ConsistencyError` if the stored temperatures or cooling
    terms are not exactly what the simulator produces.
    """
    temps = simulate_schedule(model, exo, schedule.flows)
    if not np.array_equal(temps, schedule.temps):
        err = float(np.max(np.abs(temps - schedule.temps)))
        raise ConsistencyError(f"schedule temperatures deviate from the rollout by {err:.3g} degC")
    x_cool = schedule.flows * (temps - exo.t_supply[None, :])
    if not np.array_equal(x_cool, schedule.x_cool):
        raise ConsistencyError("schedule cooling terms are not flow x (T - T_supply)")
    return _violations(model, temps, schedule.flows, tol)
