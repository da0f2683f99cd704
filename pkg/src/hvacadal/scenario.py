"""Random test buildings and the default daily price / weather profiles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import (AhuParams, BuildingModel, ExogenousSeries, ModelError, ZoneParams, exogenous_from_dict,
                    exogenous_to_dict, model_from_dict, model_to_dict)

__all__ = [
    "ScenarioParams",
    "Scenario",
    "TopologyError",
    "tou_price",
    "outdoor_temperature",
    "random_topology",
    "generate_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
    "scenario_to_json",
]

# (start hour, price per kWh); piecewise constant over the day
DEFAULT_TOU = ((0.0, 0.12), (7.0, 0.20), (11.0, 0.30), (17.0, 0.20), (22.0, 0.12))


class TopologyError(ModelError):
    pass


def tou_price(horizon: int = 48, dt: float = 1800.0, tariff=DEFAULT_TOU, start_hour: float = 0.0) -> np.ndarray:
    """Time-of-use price at the start of each stage."""
    hours = (start_hour + np.arange(horizon) * dt / 3600.0) % 24.0
    starts = np.array([h for h, _ in tariff])
    values = np.array([p for _, p in tariff])
    return values[np.searchsorted(starts, hours, side="right") - 1]


def outdoor_temperature(horizon: int = 48, dt: float = 1800.0, mean: float = 30.0, amplitude: float = 4.0,
                        peak_hour: float = 15.0, start_hour: float = 0.0) -> np.ndarray:
    """Sinusoidal daily outdoor temperature, ``mean +- amplitude`` peaking at ``peak_hour``."""
    hours = start_hour + np.arange(horizon) * dt / 3600.0
    return mean + amplitude * np.cos(2 * np.pi * (hours - peak_hour) / 24.0)


def random_topology(n_zones: int, rng: np.random.Generator, max_degree: int = 4,
                    extra_edge_prob: float = 0.5, complete: bool = False) -> list[tuple[int, int]]:
    """Connected undirected graph with every degree <= ``max_degree``.

    Each new node attaches to a uniformly drawn earlier node, redrawing
    while that node is saturated; then each remaining pair is added with
    probability ``extra_edge_prob`` when both ends have spare degree.
    """
    if n_zones < 1:
        raise TopologyError("need at least one zone")
    if n_zones > 1 and max_degree < 1:
        raise TopologyError("max_degree < 1 cannot connect more than one zone")
    if n_zones > 2 and max_degree < 2:
        raise TopologyError("max_degree < 2 cannot connect more than two zones")
    if complete:
        if n_zones - 1 > max_degree:
            raise TopologyError(f"complete graph on {n_zones} zones exceeds max_degree={max_degree}")
        return [(i, j) for i in range(n_zones) for j in range(i + 1, n_zones)]
    deg = np.zeros(n_zones, dtype=int)
    edges = set()
    for k in range(1, n_zones):
        open_nodes = np.flatnonzero(deg[:k] < max_degree)
        if open_nodes.size == 0:
            raise TopologyError("degree bound left no node to attach to")
        while True:
            j = int(rng.integers(k))
            if deg[j] < max_degree:
                break
        edges.add((j, k))
        deg[j] += 1
        deg[k] += 1
    for i in range(n_zones):
        for j in range(i + 1, n_zones):
            if (i, j) in edges:
                continue
            if rng.random() < extra_edge_prob and deg[i] < max_degree and deg[j] < max_degree:
                edges.add((i, j))
                deg[i] += 1
                deg[j] += 1
    return sorted(edges)


@dataclass(frozen=True)
class ScenarioParams:
    horizon: int = 48
    dt: float = 1800.0
    capacitance: float = 1375.0
    r_out: float = 50.0
    r_coupling: float = 14.0
    t_min: float = 24.0
    t_max: float = 26.0
    m_min: float = 0.0
    m_max: float = 0.5
    t_init_range: tuple = (26.0, 28.0)
    t_init: tuple | None = None
    load_range: tuple = (0.0, 1.0)
    t_supply: float = 15.0
    d_r: float = 0.8
    eta: float = 1.0
    kappa_f: float = 0.08
    c_p: float = 1.012
    ahu_cap_per_zone: float = 0.3
    max_degree: int = 4
    extra_edge_prob: float = 0.5
    complete: bool = False
    t_out_mean: float = 30.0
    t_out_amplitude: float = 4.0
    t_out_peak_hour: float = 15.0
    tariff: tuple = DEFAULT_TOU
    start_hour: float = 0.0

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["t_init_range"] = list(self.t_init_range)
        out["t_init"] = None if self.t_init is None else list(self.t_init)
        out["load_range"] = list(self.load_range)
        out["tariff"] = [list(p) for p in self.tariff]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioParams":
        data = dict(data)
        for key in ("t_init_range", "load_range"):
            if key in data:
                data[key] = tuple(data[key])
        if data.get("t_init") is not None:
            data["t_init"] = tuple(data["t_init"])
        if "tariff" in data:
            data["tariff"] = tuple(tuple(p) for p in data["tariff"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Scenario:
    model: BuildingModel
    exo: ExogenousSeries
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def digest(self) -> str:
        return hashlib.sha256(scenario_to_json(self).encode()).hexdigest()


def generate_scenario(n_zones: int, seed: int, params: ScenarioParams | None = None, **overrides) -> Scenario:
    """Seeded random building: topology, loads and initial temperatures.

    Loads are i.i.d. uniform per zone and stage; initial temperatures are
    uniform in ``t_init_range`` unless ``t_init`` fixes them.
    """
    if n_zones < 1:
        raise ModelError("n_zones must be >= 1")
    params = params or ScenarioParams()
    if overrides:
        params = ScenarioParams(**{**params.__dict__, **overrides})
    rng = np.random.default_rng(seed)
    edges = random_topology(n_zones, rng, params.max_degree, params.extra_edge_prob, params.complete)
    if params.t_init is not None:
        if len(params.t_init) != n_zones:
            raise ModelError("t_init needs one entry per zone")
        t_init = np.asarray(params.t_init, dtype=float)
    else:
        t_init = rng.uniform(*params.t_init_range, size=n_zones)
    q_load = rng.uniform(*params.load_range, size=(n_zones, params.horizon))
    zones = tuple(
        ZoneParams(capacitance=params.capacitance, r_out=params.r_out, t_min=params.t_min, t_max=params.t_max,
                   m_min=params.m_min, m_max=params.m_max, t_init=float(t))
        for t in t_init
    )
    ahu = AhuParams(d_r=params.d_r, eta=params.eta, kappa_f=params.kappa_f, c_p=params.c_p,
                    m_total_max=params.ahu_cap_per_zone * n_zones)
    model = BuildingModel(zones=zones, coupling={e: params.r_coupling for e in edges}, ahu=ahu,
                          dt=params.dt, horizon=params.horizon)
    exo = ExogenousSeries(
        t_out=outdoor_temperature(params.horizon, params.dt, params.t_out_mean, params.t_out_amplitude,
                                  params.t_out_peak_hour, params.start_hour),
        q_load=q_load,
        price=tou_price(params.horizon, params.dt, params.tariff, params.start_hour),
        t_supply=np.full(params.horizon, params.t_supply),
    )
    exo.check_against(model)
    prov = {"generator": "generate_scenario", "n_zones": n_zones, "seed": seed, "params": params.to_dict()}
    return Scenario(model=model, exo=exo, seed=seed, provenance=prov)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format": "hvacadal-scenario/1",
        "seed": s.seed,
        "provenance": s.provenance,
        "building": model_to_dict(s.model),
        "exogenous": exogenous_to_dict(s.exo),
    }


def scenario_from_dict(data: Mapping) -> Scenario:
    if data.get("format") != "hvacadal-scenario/1":
        raise ModelError(f"unsupported scenario format {data.get('format')!r}")
    model = model_from_dict(data["building"])
    exo = exogenous_from_dict(data["exogenous"])
    exo.check_against(model)
    return Scenario(model=model, exo=exo, seed=data.get("seed"), provenance=dict(data.get("provenance", {})))


def scenario_to_json(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1, sort_keys=True) + "\n"
