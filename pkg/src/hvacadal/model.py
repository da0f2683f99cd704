"""Building thermal model: zone/AHU parameters, RC discretisation and rollout.

Zones are lumped capacitances coupled to each other and to the outside by
thermal resistances. With a stage length ``dt`` the explicit-Euler form is::

    T[i, t+1] = A_ii T[i, t] + sum_j A_ij T[j, t] + C_ii X[i, t] + D_ii[t]
    X[i, t]   = m[i, t] * (T[i, t] - T_supply[t])

Units: capacitance kJ/K, resistance K/kW, dt s, flows kg/s, temperatures degC,
loads kW. With these the coefficients are dimensionless (A) or K/(kg K/s) (C).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "ZoneParams",
    "AhuParams",
    "BuildingModel",
    "ExogenousSeries",
    "DiscreteDynamics",
    "build_discrete_dynamics",
    "simulate_step",
    "simulate_schedule",
    "model_to_dict",
    "model_from_dict",
    "exogenous_to_dict",
    "exogenous_from_dict",
]


class ModelError(ValueError):
    """Raised for physically invalid or inconsistent model data."""


@dataclass(frozen=True)
class ZoneParams:
    """Thermal and comfort parameters of one zone."""

    capacitance: float = 1375.0
    r_out: float = 50.0
    t_min: float = 24.0
    t_max: float = 26.0
    m_min: float = 0.0
    m_max: float = 0.5
    t_init: float = 26.0

    def __post_init__(self):
        if not self.capacitance > 0:
            raise ModelError(f"capacitance must be positive, got {self.capacitance}")
        if not self.r_out > 0:
            raise ModelError(f"r_out must be positive, got {self.r_out}")
        if not self.t_min < self.t_max:
            raise ModelError(f"empty comfort band [{self.t_min}, {self.t_max}]")
        if not 0 <= self.m_min < self.m_max:
            raise ModelError(f"invalid flow bounds [{self.m_min}, {self.m_max}]")


@dataclass(frozen=True)
class AhuParams:
    """Shared air-handling unit parameters."""

    d_r: float = 0.8
    eta: float = 1.0
    kappa_f: float = 0.08
    m_total_max: float = 1.5
    c_p: float = 1.012

    def __post_init__(self):
        if not 0 <= self.d_r <= 1:
            raise ModelError(f"d_r must lie in [0, 1], got {self.d_r}")
        if not self.eta > 0:
            raise ModelError(f"eta must be positive, got {self.eta}")
        if not self.kappa_f >= 0:
            raise ModelError(f"kappa_f must be nonnegative, got {self.kappa_f}")
        if not self.m_total_max > 0:
            raise ModelError(f"m_total_max must be positive, got {self.m_total_max}")
        if not self.c_p > 0:
            raise ModelError(f"c_p must be positive, got {self.c_p}")


def _canonical_coupling(coupling, n_zones):
    out = {}
    for (i, j), r in dict(coupling).items():
        i, j, r = int(i), int(j), float(r)
        if i == j:
            raise ModelError(f"self-coupling on zone {i}")
        if not (0 <= i < n_zones and 0 <= j < n_zones):
            raise ModelError(f"coupling ({i}, {j}) references an unknown zone")
        if not r > 0:
            raise ModelError(f"coupling resistance R[{i},{j}] must be positive, got {r}")
        for key in ((i, j), (j, i)):
            if key in out and out[key] != r:
                raise ModelError(f"asymmetric coupling between zones {i} and {j}")
            out[key] = r
    return out


@dataclass(frozen=True, eq=False)
class BuildingModel:
    """Zones, their symmetric thermal coupling, the AHU and the time grid.

    ``coupling`` maps ordered zone pairs to resistances [K/kW]; either one
    or both orientations may be given, it is stored symmetrised.
    """

    zones: tuple[ZoneParams, ...]
    coupling: Mapping[tuple[int, int], float] = field(default_factory=dict)
    ahu: AhuParams = field(default_factory=AhuParams)
    dt: float = 1800.0
    horizon: int = 48

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        if len(self.zones) == 0:
            raise ModelError("a building needs at least one zone")
        object.__setattr__(self, "coupling", _canonical_coupling(self.coupling, len(self.zones)))
        if not self.dt > 0:
            raise ModelError(f"dt must be positive, got {self.dt}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        a_self = self._a_self()
        bad = np.flatnonzero(~((a_self > 0) & (a_self < 1)))
        if bad.size:
            i = int(bad[0])
            raise ModelError(
                f"unstable discretisation for zone {i}: A_ii = {a_self[i]:.6g} not in (0, 1); "
                "reduce dt or increase capacitance/resistances"
            )

    def _a_self(self):
        a = np.ones(self.n_zones)
        for i, z in enumerate(self.zones):
            a[i] -= self.dt / (z.capacitance * z.r_out)
        for (i, j), r in self.coupling.items():
            a[i] -= self.dt / (r * self.zones[i].capacitance)
        return a

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.coupling if a == i)

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edges ``(i, j, R)`` with ``i < j``, sorted."""
        return sorted((i, j, r) for (i, j), r in self.coupling.items() if i < j)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_zones, dtype=int)
        for i, _ in self.coupling:
            deg[i] += 1
        return deg

    def zone_array(self, name: str) -> np.ndarray:
        return np.array([getattr(z, name) for z in self.zones], dtype=float)

    def with_initial_temps(self, temps: Sequence[float]) -> "BuildingModel":
        temps = list(temps)
        if len(temps) != self.n_zones:
            raise ModelError("need one initial temperature per zone")
        zones = tuple(replace(z, t_init=float(t)) for z, t in zip(self.zones, temps))
        return replace(self, zones=zones)

    def with_horizon(self, horizon: int) -> "BuildingModel":
        return replace(self, horizon=horizon)


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    """Disturbances and tariffs over the horizon.

    Shapes: ``t_out``, ``price``, ``t_supply`` are ``(T,)``; ``q_load`` is
    ``(n_zones, T)``. Price is per kWh.
    """

    t_out: np.ndarray
    q_load: np.ndarray
    price: np.ndarray
    t_supply: np.ndarray

    def __post_init__(self):
        for name in ("t_out", "price", "t_supply"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ModelError(f"{name} must be one-dimensional")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        q = np.array(self.q_load, dtype=float)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2:
            raise ModelError("q_load must be (n_zones, T)")
        q.setflags(write=False)
        object.__setattr__(self, "q_load", q)
        n = self.t_out.shape[0]
        if self.price.shape[0] != n or self.t_supply.shape[0] != n or q.shape[1] != n:
            raise ModelError("exogenous series lengths differ")
        for name in ("t_out", "q_load", "price", "t_supply"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelError(f"{name} contains non-finite values")

    @property
    def length(self) -> int:
        return int(self.t_out.shape[0])

    def window(self, start: int, length: int) -> "ExogenousSeries":
        """Stages ``start .. start+length-1`` (must fit inside the series)."""
        stop = start + length
        if start < 0 or length < 1 or stop > self.length:
            raise ModelError(f"window [{start}, {stop}) outside series of length {self.length}")
        return ExogenousSeries(
            t_out=self.t_out[start:stop],
            q_load=self.q_load[:, start:stop],
            price=self.price[start:stop],
            t_supply=self.t_supply[start:stop],
        )

    def check_against(self, model: BuildingModel) -> None:
        """Raise :class:`ModelError` unless shapes and cooling-mode setpoints fit ``model``."""
        if self.length != model.horizon:
            raise ModelError(f"series length {self.length} != horizon {model.horizon}")
        if self.q_load.shape[0] != model.n_zones:
            raise ModelError(f"q_load has {self.q_load.shape[0]} rows, model has {model.n_zones} zones")
        t_min = model.zone_array("t_min")
        if np.max(self.t_supply) >= np.min(t_min):
            raise ModelError("supply setpoint must stay below every zone's comfort lower bound")


@dataclass(frozen=True, eq=False)
class DiscreteDynamics:
    """Coefficients of the discrete zone dynamics.

    ``a_matrix`` is the dense zone-to-zone map with ``a_self`` on the
    diagonal and ``a_neighbor`` off it; ``d_const`` is ``(n_zones, T)``.
    """

    a_self: np.ndarray
    a_neighbor: Mapping[tuple[int, int], float]
    c_self: np.ndarray
    d_const: np.ndarray
    a_matrix: np.ndarray
    t_supply: np.ndarray
    out_leak: np.ndarray

    @property
    def n_zones(self) -> int:
        return int(self.a_self.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.d_const.shape[1])


def build_discrete_dynamics(model: BuildingModel, exo: ExogenousSeries) -> DiscreteDynamics:
    """Compute the explicit-Euler coefficients of the RC network."""
    exo.check_against(model)
    dt = model.dt
    cap = model.zone_array("capacitance")
    r_out = model.zone_array("r_out")
    out_leak = dt / (cap * r_out)
    a_neighbor = {(i, j): dt / (cap[i] * r) for (i, j), r in model.coupling.items()}
    a_self = 1.0 - out_leak
    for (i, _), a in sorted(a_neighbor.items()):
        a_self[i] -= a
    a_matrix = np.diag(a_self)
    for (i, j), a in a_neighbor.items():
        a_matrix[i, j] = a
    c_self = -dt * model.ahu.c_p / cap
    d_const = out_leak[:, None] * exo.t_out[None, :] + dt * exo.q_load / cap[:, None]
    arrays = dict(a_self=a_self, c_self=c_self, d_const=d_const, a_matrix=a_matrix,
                  t_supply=np.array(exo.t_supply), out_leak=out_leak)
    for arr in arrays.values():
        arr.setflags(write=False)
    return DiscreteDynamics(a_neighbor=a_neighbor, **arrays)


def simulate_step(dyn: DiscreteDynamics, temps, x_cool, t: int) -> np.ndarray:
    """Advance all zones one stage given the cooling terms ``x_cool`` [kg K/s]."""
    temps = np.asarray(temps, dtype=float)
    x_cool = np.asarray(x_cool, dtype=float)
    return dyn.a_matrix @ temps + dyn.c_self * x_cool + dyn.d_const[:, t]


def simulate_schedule(model: BuildingModel, exo: ExogenousSeries, flows, *, terminal: bool = False,
                      dyn: DiscreteDynamics | None = None) -> np.ndarray:
    """Roll the true bilinear dynamics forward from ``t_init``.

    Parameters
    ----------
    flows : array_like, shape (n_zones, T)
        Zone supply flows [kg/s].
    terminal : bool
        If true also return the state after the last stage, giving
        ``T + 1`` columns.

    Returns
    -------
    ndarray
        Zone temperatures per stage, ``(n_zones, T)`` or ``(n_zones, T+1)``.
    """
    if dyn is None:
        dyn = build_discrete_dynamics(model, exo)
    flows = np.asarray(flows, dtype=float)
    n, horizon = model.n_zones, model.horizon
    if flows.shape != (n, horizon):
        raise ModelError(f"flows must have shape {(n, horizon)}, got {flows.shape}")
    temps = np.empty((n, horizon + 1))
    temps[:, 0] = model.zone_array("t_init")
    for t in range(horizon):
        x_cool = flows[:, t] * (temps[:, t] - dyn.t_supply[t])
        temps[:, t + 1] = simulate_step(dyn, temps[:, t], x_cool, t)
    return temps if terminal else temps[:, :horizon]


# -- plain-data round trip ---------------------------------------------------

def model_to_dict(model: BuildingModel) -> dict:
    return {
        "dt": model.dt,
        "horizon": model.horizon,
        "ahu": {
            "d_r": model.ahu.d_r,
            "eta": model.ahu.eta,
            "kappa_f": model.ahu.kappa_f,
            "m_total_max": model.ahu.m_total_max,
            "c_p": model.ahu.c_p,
        },
        "zones": [
            {
                "capacitance": z.capacitance,
                "r_out": z.r_out,
                "t_min": z.t_min,
                "t_max": z.t_max,
                "m_min": z.m_min,
                "m_max": z.m_max,
                "t_init": z.t_init,
            }
            for z in model.zones
        ],
        "coupling": [{"i": i, "j": j, "r": r} for i, j, r in model.edges()],
    }


def model_from_dict(data: Mapping) -> BuildingModel:
    try:
        zones = tuple(ZoneParams(**{k: float(v) for k, v in z.items()}) for z in data["zones"])
        coupling = {(int(e["i"]), int(e["j"])): float(e["r"]) for e in data.get("coupling", [])}
        ahu = AhuParams(**{k: float(v) for k, v in data.get("ahu", {}).items()})
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed building document: {exc}") from exc
    return BuildingModel(zones=zones, coupling=coupling, ahu=ahu,
                         dt=float(data.get("dt", 1800.0)), horizon=int(data.get("horizon", 48)))


def exogenous_to_dict(exo: ExogenousSeries) -> dict:
    return {
        "t_out": exo.t_out.tolist(),
        "q_load": exo.q_load.tolist(),
        "price": exo.price.tolist(),
        "t_supply": exo.t_supply.tolist(),
    }


def exogenous_from_dict(data: Mapping) -> ExogenousSeries:
    try:
        return ExogenousSeries(t_out=data["t_out"], q_load=data["q_load"],
                               price=data["price"], t_supply=data["t_supply"])
    except KeyError as exc:
        raise ModelError(f"exogenous document is missing {exc}") from exc
