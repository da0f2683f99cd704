"""Experiment orchestration: single-shot runs, receding horizon, sweeps and reports.

Every run is described by an :class:`ExperimentSpec` (JSON-serialisable).
Outputs are plain CSV and JSON files whose columns are fixed by the
``*_COLUMNS`` tuples below; the summary document is validated against the
bundled schema ``schemas/summary.schema.json`` before it is written.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

import jsonschema
import numpy as np

from .adal import AdalSolver, SolverConfig
from .baseline import (ReferenceSolution, brute_force_oracle, solve_centralized_nonlinear,
                       solve_centralized_relaxed)
from .model import BuildingModel, ExogenousSeries, build_discrete_dynamics, simulate_step
from .recover import Schedule, make_schedule, recover_schedule, validate_schedule
from .scenario import Scenario, ScenarioParams, generate_scenario, scenario_from_dict, scenario_to_json

__all__ = [
    "WORKERS_ENV",
    "SCHEDULE_COLUMNS",
    "CONVERGENCE_COLUMNS",
    "SCALING_COLUMNS",
    "MPC_COLUMNS",
    "ExperimentSpec",
    "RunArtifacts",
    "register_baseline",
    "available_baselines",
    "load_scenario",
    "run_single_shot",
    "run_receding_horizon",
    "run_rho_sweep",
    "run_zone_sweep",
    "run_experiment",
    "emit_report",
    "summary_schema",
    "validate_summary",
    "env_workers",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "HVACADAL_WORKERS"
SUMMARY_FORMAT = "hvacadal-summary/1"

SCHEDULE_COLUMNS = ("stage", "hour", "zone", "temp_c", "flow_kg_s", "x_cool", "load_kw", "t_out_c", "price")
CONVERGENCE_COLUMNS = ("iteration", "residual", "objective", "dyn_residual", "flow_residual", "cap_residual",
                       "wall_clock_s")
SCALING_COLUMNS = ("n_zones", "horizon", "seed", "iterations", "converged", "residual", "wall_clock_s",
                   "zone_time_s", "per_zone_s", "per_zone_iter_s")
MPC_COLUMNS = ("stage", "horizon", "iterations", "converged", "fallback", "residual", "wall_clock_s")


def env_workers(default: int = 1) -> int:
    """Worker-pool size from ``$HVACADAL_WORKERS`` (falls back to ``default``)."""
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


# -- baselines -----------------------------------------------------------------------------

_BASELINES: dict[str, Callable[[BuildingModel, ExogenousSeries], ReferenceSolution]] = {
    "relaxed": solve_centralized_relaxed,
    "nonlinear": solve_centralized_nonlinear,
    "oracle": brute_force_oracle,
}


def register_baseline(name: str, solver: Callable[[BuildingModel, ExogenousSeries], ReferenceSolution]) -> None:
    """Make ``solver(model, exo) -> ReferenceSolution`` available to specs under ``name``.

    This is the slot for third-party comparison methods (for instance a
    time-decomposition heuristic); its schedule, if any, is re-validated
    against the simulator like every other baseline.
    """
    if not callable(solver):
        raise TypeError("baseline solver must be callable")
    _BASELINES[name] = solver


def available_baselines() -> list[str]:
    return sorted(_BASELINES)


# -- spec ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """What to run and where to put it.

    ``scenario`` is either ``{"file": path}`` or ``{"n_zones": n, "seed": s,
    "params": {...}}`` for the generator. ``solvers`` holds one dict of
    :class:`SolverConfig` fields per configuration. ``sweep`` may carry
    ``rho`` and/or ``n_zones`` lists (plus ``seeds`` and ``horizon`` for the
    zone-count sweep).
    """

    scenario: Mapping = field(default_factory=lambda: {"n_zones": 5, "seed": 0})
    solvers: tuple = ({},)
    baselines: tuple = ("relaxed", "nonlinear")
    sweep: Mapping = field(default_factory=dict)
    out_dir: str | None = None
    mode: str = "single"
    planning_horizon: int = 10
    repair_ahu: bool = False

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(dict(s) for s in self.solvers))
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if not self.solvers:
            raise ValueError("an experiment needs at least one solver configuration")
        for s in self.solvers:
            SolverConfig(**s)  # validate early
        unknown = [b for b in self.baselines if b not in _BASELINES]
        if unknown:
            raise ValueError(f"unknown baselines {unknown}; available: {available_baselines()}")
        if self.mode not in ("single", "mpc"):
            raise ValueError(f"mode must be 'single' or 'mpc', got {self.mode!r}")
        if int(self.planning_horizon) < 1:
            raise ValueError("planning_horizon must be >= 1")
        sc = dict(self.scenario)
        if "file" not in sc and "n_zones" not in sc:
            raise ValueError("scenario needs either 'file' or 'n_zones'")
        extra = set(self.sweep) - {"rho", "n_zones", "seeds", "horizon"}
        if extra:
            raise ValueError(f"unknown sweep axes {sorted(extra)}")

    def solver_configs(self) -> list[SolverConfig]:
        workers = env_workers()
        return [SolverConfig(**{"workers": workers, **s}) for s in self.solvers]

    def to_dict(self) -> dict:
        return {
            "scenario": dict(self.scenario),
            "solvers": [dict(s) for s in self.solvers],
            "baselines": list(self.baselines),
            "sweep": {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in self.sweep.items()},
            "out_dir": self.out_dir,
            "mode": self.mode,
            "planning_horizon": self.planning_horizon,
            "repair_ahu": self.repair_ahu,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentSpec":
        data = dict(data)
        for key in ("solvers", "baselines"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_scenario(source: Mapping) -> Scenario:
    source = dict(source)
    if "file" in source:
        with open(source["file"]) as fh:
            return scenario_from_dict(json.load(fh))
    params = ScenarioParams.from_dict(source.get("params", {}))
    return generate_scenario(int(source["n_zones"]), int(source.get("seed", 0)), params)


# -- artifacts -----------------------------------------------------------------------------

@dataclass
class RunArtifacts:
    """Everything a run produced, before it is written.

    ``tables`` maps a file name to ``(columns, rows)``; ``documents`` maps a
    file name to a JSON-serialisable object. ``summary`` is also written as
    ``summary.json``.
    """

    summary: dict
    tables: dict = field(default_factory=dict)
    documents: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)


def _schedule_rows(schedule: Schedule, exo: ExogenousSeries, dt: float) -> list[tuple]:
    rows = []
    n, horizon = schedule.flows.shape
    for t in range(horizon):
        hour = t * dt / 3600.0
        for i in range(n):
            rows.append((t, hour, i, float(schedule.temps[i, t]), float(schedule.flows[i, t]),
                         float(schedule.x_cool[i, t]), float(exo.q_load[i, t]), float(exo.t_out[t]),
                         float(exo.price[t])))
    return rows


def _convergence_rows(trace: list[dict]) -> list[tuple]:
    return [(r["iteration"], r["residual"], r["objective"], r["dyn_residual"], r["flow_residual"],
             r["cap_residual"], r["wall_clock"]) for r in trace]


def _violation_summary(schedule: Schedule) -> dict:
    v = schedule.violations
    return {
        "comfort_count": len(v.comfort),
        "max_comfort_excess": float(v.max_comfort_excess),
        "ahu_cap_count": len(v.ahu_cap),
        "max_ahu_excess": float(max((e for _, e in v.ahu_cap), default=0.0)),
    }


def _gap(value, reference):
    if value is None or reference is None or not math.isfinite(reference) or reference == 0:
        return None
    return float(value / reference - 1.0)


def _config_label(cfg: SolverConfig, k: int) -> str:
    return f"adal{k}_rho{cfg.rho:g}"


def _run_baselines(names, model, exo) -> dict:
    out = {}
    for name in names:
        t0 = time.perf_counter()
        entry = {"method": name, "objective": None, "feasible": False, "wall_clock_s": None, "error": None}
        try:
            ref = _BASELINES[name](model, exo)
        except Exception as exc:  # reported, never silent
            log.warning("baseline %s failed: %s", name, exc)
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entry["wall_clock_s"] = time.perf_counter() - t0
            out[name] = (entry, None)
            continue
        entry["objective"] = float(ref.objective)
        entry["feasible"] = bool(ref.feasible)
        entry["wall_clock_s"] = time.perf_counter() - t0
        if ref.schedule is not None:
            validate_schedule(ref.schedule, model, exo, tol=1e-6)
            entry["cost"] = float(ref.schedule.total_cost)
            entry["violations"] = _violation_summary(ref.schedule)
        out[name] = (entry, ref)
    return out


def run_single_shot(spec: ExperimentSpec, scenario: Scenario | None = None, *, write: bool = True) -> RunArtifacts:
    """Decentralised solve, recovery, validation and costing for each configured solver, plus baselines.

    Non-convergence never raises: it is recorded in the summary's
    ``flags`` and in each run's ``converged`` field.
    """
    scenario = scenario if scenario is not None else load_scenario(spec.scenario)
    model, exo = scenario.model, scenario.exo
    flags = []
    base = _run_baselines(spec.baselines, model, exo)
    baselines = {k: v[0] for k, v in base.items()}
    ref_cost = baselines.get("nonlinear", {}).get("cost")
    relaxed_obj = baselines.get("relaxed", {}).get("objective")
    runs, tables, schedules = [], {}, {}
    for k, cfg in enumerate(spec.solver_configs()):
        label = _config_label(cfg, k)
        solver = AdalSolver(model, exo, cfg)
        _, sol = solver.solve()
        sched = recover_schedule(sol, model, exo, repair_ahu=spec.repair_ahu)
        validate_schedule(sched, model, exo)
        if not sol.converged:
            flags.append(f"{label}: no convergence in {cfg.max_iters} iterations (residual {sol.residual:.3g})")
        if not sched.violations.feasible:
            flags.append(f"{label}: recovered schedule violates constraints "
                         f"(max comfort excess {sched.violations.max_comfort_excess:.3g} degC)")
        runs.append({
            "label": label,
            "config": _config_dict(cfg),
            "converged": bool(sol.converged),
            "iterations": int(sol.iterations),
            "residual": float(sol.residual),
            "relaxed_objective": float(sol.objective),
            "recovered_cost": float(sched.total_cost),
            "cooling_cost": float(sched.cost.cooling_cost),
            "fan_cost": float(sched.cost.fan_cost),
            "violations": _violation_summary(sched),
            "gap_to_nonlinear": _gap(sched.total_cost, ref_cost),
            "relaxed_gap_to_nonlinear": _gap(sol.objective, ref_cost),
            "wall_clock_s": float(sol.wall_clock),
            "zone_time_s": float(sol.zone_time),
            "subproblem_failures": int(sol.subproblem_failures),
        })
        tables[f"convergence_{label}.csv"] = (CONVERGENCE_COLUMNS, _convergence_rows(sol.trace))
        tables[f"schedule_{label}.csv"] = (SCHEDULE_COLUMNS, _schedule_rows(sched, exo, model.dt))
        schedules[label] = sched
    for name, (entry, ref) in base.items():
        if ref is not None and ref.schedule is not None:
            tables[f"schedule_{name}.csv"] = (SCHEDULE_COLUMNS, _schedule_rows(ref.schedule, exo, model.dt))
            schedules[name] = ref.schedule
        if entry["error"]:
            flags.append(f"baseline {name}: {entry['error']}")
    summary = _summary_header(spec, scenario, "single")
    summary.update({
        "runs": runs,
        "baselines": baselines,
        "gaps": {"relaxed_to_nonlinear": _gap(relaxed_obj, ref_cost)},
        "flags": flags,
    })
    art = RunArtifacts(summary=summary, tables=tables, schedules=schedules,
                       documents={"scenario.json": json.loads(scenario_to_json(scenario))})
    if write and spec.out_dir:
        emit_report(art, spec.out_dir)
    return art


def _config_dict(cfg: SolverConfig) -> dict:
    return {"rho": cfg.rho, "epsilon": cfg.epsilon, "max_iters": cfg.max_iters, "tau": cfg.tau,
            "proximal": cfg.proximal, "sub_tol": cfg.sub_tol, "seed": cfg.seed}


def _summary_header(spec: ExperimentSpec, scenario: Scenario, mode: str) -> dict:
    return {
        "format": SUMMARY_FORMAT,
        "mode": mode,
        "spec": spec.to_dict(),
        "scenario": {
            "digest": scenario.digest(),
            "seed": scenario.seed,
            "n_zones": scenario.model.n_zones,
            "horizon": scenario.model.horizon,
            "dt_s": scenario.model.dt,
        },
    }


# -- receding horizon ---------------------------------------------------------------------

def run_receding_horizon(spec: ExperimentSpec, planning_horizon: int | None = None,
                         scenario: Scenario | None = None, *, write: bool = True) -> RunArtifacts:
    """Closed-loop simulation with a shrinking-at-the-end planning window.

    At stage ``k`` the ``min(H, T - k)``-stage problem is solved from the
    current simulated temperatures, the first stage of the recovered plan
    is applied to the true bilinear dynamics and the clock advances. A
    failed or non-converged solve falls back to the previous plan shifted
    by one stage (logged and counted); with no usable previous plan the
    non-converged solution is applied as is.
    """
    scenario = scenario if scenario is not None else load_scenario(spec.scenario)
    model, exo = scenario.model, scenario.exo
    H = int(planning_horizon if planning_horizon is not None else spec.planning_horizon)
    if not 1 <= H <= model.horizon:
        raise ValueError(f"planning horizon {H} outside [1, {model.horizon}]")
    cfg = spec.solver_configs()[0]
    dyn = build_discrete_dynamics(model, exo)
    n, total = model.n_zones, model.horizon
    temps = np.empty((n, total))
    temps[:, 0] = model.zone_array("t_init")
    flows = np.empty((n, total))
    plan, plan_start = None, 0
    rows, flags = [], []
    fallbacks = 0
    t_run = time.perf_counter()
    for k in range(total):
        h = min(H, total - k)
        sub_model = model.with_initial_temps(temps[:, k]).with_horizon(h)
        sub_exo = exo.window(k, h)
        t0 = time.perf_counter()
        failure = None
        sol = None
        try:
            _, sol = AdalSolver(sub_model, sub_exo, cfg).solve()
            if not sol.converged:
                failure = f"no convergence (residual {sol.residual:.3g})"
        except Exception as exc:
            failure = f"{type(exc).__name__}: {exc}"
        use_fallback = failure is not None and plan is not None and k - plan_start < plan.shape[1]
        if failure is not None:
            log.warning("MPC stage %d: %s%s", k, failure, "; using previous plan" if use_fallback else "")
            flags.append(f"stage {k}: {failure}")
        if use_fallback:
            fallbacks += 1
            m = plan[:, k - plan_start]
        elif sol is not None:
            sched = recover_schedule(sol, sub_model, sub_exo, repair_ahu=spec.repair_ahu)
            plan, plan_start = sched.flows, k
            m = sched.flows[:, 0]
        else:
            m = model.zone_array("m_min")
            flags.append(f"stage {k}: no plan available, applying minimum flows")
        flows[:, k] = m
        if k + 1 < total:
            x = m * (temps[:, k] - dyn.t_supply[k])
            temps[:, k + 1] = simulate_step(dyn, temps[:, k], x, k)
        rows.append((k, h, int(sol.iterations) if sol is not None else 0,
                     bool(sol is not None and sol.converged), bool(use_fallback),
                     float(sol.residual) if sol is not None else float("nan"), time.perf_counter() - t0))
    realized = make_schedule(model, exo, flows)
    if not np.array_equal(realized.temps, temps):
        raise AssertionError("closed-loop temperatures disagree with the schedule rollout")
    summary = _summary_header(spec, scenario, "mpc")
    summary.update({
        "planning_horizon": H,
        "realized_cost": float(realized.total_cost),
        "cooling_cost": float(realized.cost.cooling_cost),
        "fan_cost": float(realized.cost.fan_cost),
        "violations": _violation_summary(realized),
        "fallbacks": fallbacks,
        "total_iterations": int(sum(r[2] for r in rows)),
        "wall_clock_s": time.perf_counter() - t_run,
        "config": _config_dict(cfg),
        "flags": flags,
    })
    art = RunArtifacts(summary=summary,
                       tables={"mpc_schedule.csv": (SCHEDULE_COLUMNS, _schedule_rows(realized, exo, model.dt)),
                               "mpc_steps.csv": (MPC_COLUMNS, rows)},
                       schedules={"mpc": realized},
                       documents={"scenario.json": json.loads(scenario_to_json(scenario))})
    if write and spec.out_dir:
        emit_report(art, spec.out_dir)
    return art


# -- sweeps --------------------------------------------------------------------------------

def run_rho_sweep(spec: ExperimentSpec, rhos=None, scenario: Scenario | None = None, *,
                  write: bool = True) -> RunArtifacts:
    """One ADAL run per penalty value; one convergence CSV per value."""
    rhos = list(rhos if rhos is not None else spec.sweep.get("rho", (1, 3, 5, 10, 15, 20)))
    base = spec.solvers[0]
    sweep_spec = replace(spec, solvers=tuple({**base, "rho": float(r)} for r in rhos), baselines=())
    art = run_single_shot(sweep_spec, scenario, write=False)
    art.summary["mode"] = "rho-sweep"
    art.summary["sweep"] = [
        {"rho": r["config"]["rho"], "iterations": r["iterations"], "converged": r["converged"],
         "residual": r["residual"], "relaxed_objective": r["relaxed_objective"]}
        for r in art.summary["runs"]
    ]
    art.tables = {name: t for name, t in art.tables.items() if name.startswith("convergence_")}
    if write and spec.out_dir:
        emit_report(art, spec.out_dir)
    return art


def _zone_cell(args):
    n_zones, seed, horizon, params, solver = args
    scen = generate_scenario(n_zones, seed, ScenarioParams.from_dict(params), horizon=horizon)
    cfg = SolverConfig(**solver)
    _, sol = AdalSolver(scen.model, scen.exo, cfg).solve()
    return (n_zones, horizon, seed, int(sol.iterations), bool(sol.converged), float(sol.residual),
            float(sol.wall_clock), float(sol.zone_time), float(sol.wall_clock) / n_zones,
            float(sol.wall_clock) / n_zones / max(sol.iterations, 1))


def run_zone_sweep(spec: ExperimentSpec, zone_counts=None, *, write: bool = True) -> RunArtifacts:
    """Decentralised solve time against building size.

    Cells (zone count x seed) are independent and run on a process pool of
    ``$HVACADAL_WORKERS`` workers when that exceeds one.
    """
    sweep = dict(spec.sweep)
    counts = list(zone_counts if zone_counts is not None else sweep.get("n_zones", (5, 20, 50, 100)))
    seeds = list(sweep.get("seeds", [spec.scenario.get("seed", 0)]))
    horizon = int(sweep.get("horizon", spec.planning_horizon))
    params = dict(spec.scenario.get("params", {}))
    params.pop("horizon", None)
    solver = {**spec.solvers[0], "workers": 1}
    cells = [(int(n), int(s), horizon, params, solver) for n in counts for s in seeds]
    workers = env_workers()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_zone_cell, cells))
    else:
        rows = [_zone_cell(c) for c in cells]
    per_count = {}
    for r in rows:
        per_count.setdefault(r[0], []).append(r[8])
    means = {n: float(np.mean(v)) for n, v in sorted(per_count.items())}
    first, last = min(means), max(means)
    summary = {
        "format": SUMMARY_FORMAT,
        "mode": "zone-sweep",
        "spec": spec.to_dict(),
        "sweep": [dict(zip(SCALING_COLUMNS, r)) for r in rows],
        "per_zone_time_s": {str(n): v for n, v in means.items()},
        "per_zone_growth": means[last] / means[first] if means[first] > 0 else None,
        "flags": [f"n_zones={r[0]} seed={r[2]}: no convergence" for r in rows if not r[4]],
    }
    art = RunArtifacts(summary=summary, tables={"scaling.csv": (SCALING_COLUMNS, rows)})
    if write and spec.out_dir:
        emit_report(art, spec.out_dir)
    return art


def run_experiment(spec: ExperimentSpec) -> list[RunArtifacts]:
    """Dispatch on ``spec``: sweeps if any axes are given, otherwise the configured mode."""
    out = []
    if "rho" in spec.sweep:
        out.append(run_rho_sweep(spec))
    if "n_zones" in spec.sweep:
        out.append(run_zone_sweep(spec))
    if not out:
        out.append(run_receding_horizon(spec) if spec.mode == "mpc" else run_single_shot(spec))
    return out


# -- reporting -----------------------------------------------------------------------------

def summary_schema() -> dict:
    text = resources.files("hvacadal").joinpath("schemas/summary.schema.json").read_text()
    return json.loads(text)


def validate_summary(summary: Mapping) -> None:
    """Raise :class:`jsonschema.ValidationError` if ``summary`` does not match the bundled schema."""
    jsonschema.validate(instance=_jsonable(summary), schema=summary_schema())


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def emit_report(artifacts: RunArtifacts, out_dir) -> list[Path]:
    """Write every table, document and the validated summary; returns the paths written.

    Each file is written to a temporary name in ``out_dir`` and renamed
    into place, so readers never see a partial file.
    """
    out = Path(out_dir)
    summary = _jsonable(artifacts.summary)
    validate_summary(summary)
    written = []
    for name, (columns, rows) in sorted(artifacts.tables.items()):
        p = out / name
        _atomic_write(p, _csv_text(columns, rows))
        written.append(p)
    for name, doc in sorted(artifacts.documents.items()):
        p = out / name
        _atomic_write(p, json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")
        written.append(p)
    p = out / "summary.json"
    _atomic_write(p, json.dumps(summary, indent=1, sort_keys=True) + "\n")
    written.append(p)
    return written
