"""HVAC power and energy-cost functions.

Cooling-coil power is evaluated in its expanded form, split into the
fresh-air share and the return-air share, which stays well defined at zero
total flow. The mixed-air form is kept as an independent path for checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AhuParams, BuildingModel, ExogenousSeries

__all__ = [
    "DegenerateFlowError",
    "CostBreakdown",
    "return_air_temp",
    "mixed_air_temp",
    "cooling_power",
    "cooling_power_mixed",
    "fan_power",
    "schedule_cost",
    "ObjectiveTerms",
    "objective_terms",
    "relaxed_objective",
]

SECONDS_PER_HOUR = 3600.0


class DegenerateFlowError(ZeroDivisionError):
    """Return-air temperature requested with zero total flow."""


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    cooling_cost: float
    fan_cost: float
    total: float
    cooling_kw: np.ndarray
    fan_kw: np.ndarray
    price: np.ndarray
    dt_hours: float

    @property
    def per_stage(self) -> list[tuple[int, float, float, float]]:
        """``(stage, cooling kW, fan kW, price)`` rows."""
        return [(t, float(c), float(f), float(p))
                for t, (c, f, p) in enumerate(zip(self.cooling_kw, self.fan_kw, self.price))]


def return_air_temp(flows, temps):
    """Flow-weighted mean zone temperature (axis 0 indexes zones)."""
    flows = np.asarray(flows, dtype=float)
    temps = np.asarray(temps, dtype=float)
    total = flows.sum(axis=0)
    if np.any(total == 0):
        raise DegenerateFlowError("return-air temperature undefined at zero total flow")
    return (flows * temps).sum(axis=0) / total


def mixed_air_temp(t_out, t_return, d_r):
    if not 0 <= d_r <= 1:
        raise ValueError(f"d_r must lie in [0, 1], got {d_r}")
    return (1.0 - d_r) * np.asarray(t_out, dtype=float) + d_r * np.asarray(t_return, dtype=float)


def cooling_power(flows, temps, t_out, t_supply, ahu: AhuParams):
    """Cooling-coil electrical power [kW], expanded (fresh + return) form.

    ``flows`` and ``temps`` are ``(n_zones,)`` or ``(n_zones, T)``; the
    remaining inputs broadcast against the stage axis.
    """
    flows = np.asarray(flows, dtype=float)
    temps = np.asarray(temps, dtype=float)
    k = ahu.c_p * ahu.eta
    fresh = (1.0 - ahu.d_r) * flows.sum(axis=0) * (np.asarray(t_out) - t_supply)
    ret = ahu.d_r * (flows * (temps - t_supply)).sum(axis=0)
    return k * (fresh + ret)


def cooling_power_mixed(flows, temps, t_out, t_supply, ahu: AhuParams):
    """Cooling power via the mixed-air temperature; needs positive total flow."""
    flows = np.asarray(flows, dtype=float)
    t_mix = mixed_air_temp(t_out, return_air_temp(flows, temps), ahu.d_r)
    return ahu.c_p * ahu.eta * flows.sum(axis=0) * (t_mix - t_supply)


def fan_power(flows, kappa_f):
    flows = np.asarray(flows, dtype=float)
    return kappa_f * flows.sum(axis=0) ** 3


def schedule_cost(model: BuildingModel, exo: ExogenousSeries, flows, temps) -> CostBreakdown:
    """Energy cost of a flow/temperature trajectory, priced per kWh."""
    flows = np.asarray(flows, dtype=float)
    temps = np.asarray(temps, dtype=float)
    cool = cooling_power(flows, temps, exo.t_out, exo.t_supply, model.ahu)
    fan = fan_power(flows, model.ahu.kappa_f)
    dt_h = model.dt / SECONDS_PER_HOUR
    cooling_cost = float(np.sum(exo.price * cool) * dt_h)
    fan_cost = float(np.sum(exo.price * fan) * dt_h)
    return CostBreakdown(cooling_cost=cooling_cost, fan_cost=fan_cost, total=cooling_cost + fan_cost,
                         cooling_kw=cool, fan_kw=fan, price=np.array(exo.price), dt_hours=dt_h)


@dataclass(frozen=True, eq=False)
class ObjectiveTerms:
    """Per-stage coefficients of the relaxed objective.

    ``cost = sum_t x_coef[t] * sum_i X[i,t] + y_lin[t] * Y[t] + y_cub[t] * Y[t]**3``
    """

    x_coef: np.ndarray
    y_lin: np.ndarray
    y_cub: np.ndarray


def objective_terms(model: BuildingModel, exo: ExogenousSeries) -> ObjectiveTerms:
    ahu = model.ahu
    w = np.asarray(exo.price) * model.dt / SECONDS_PER_HOUR
    k = ahu.c_p * ahu.eta
    return ObjectiveTerms(
        x_coef=w * k * ahu.d_r,
        y_lin=w * k * (1.0 - ahu.d_r) * (exo.t_out - exo.t_supply),
        y_cub=w * ahu.kappa_f,
    )


def relaxed_objective(terms: ObjectiveTerms, x_cool, y_total) -> float:
    """Relaxed objective in the auxiliary variables ``X`` (zones x T) and ``Y`` (T)."""
    x_cool = np.asarray(x_cool, dtype=float)
    y = np.asarray(y_total, dtype=float)
    return float(np.sum(terms.x_coef * x_cool.sum(axis=0)) + np.sum(terms.y_lin * y + terms.y_cub * y ** 3))
