"""Decentralised energy-cost scheduling for multi-zone HVAC systems.

The bilinear zone-cooling terms are replaced by McCormick envelopes; the
resulting convex problem is solved either centrally or by a distributed
augmented Lagrangian scheme in which every zone and the air handler solve
small local problems. A forward pass then turns the relaxed solution into
a schedule that respects the true bilinear dynamics.
"""

from .adal import AdalSolver, IterateState, Multipliers, RelaxedSolution, SolverConfig, adal_solve
from .baseline import (ReferenceSolution, brute_force_oracle, solve_centralized_nonlinear,
                       solve_centralized_relaxed)
from .harness import (ExperimentSpec, emit_report, register_baseline, run_receding_horizon, run_rho_sweep,
                      run_single_shot, run_zone_sweep)
from .model import (AhuParams, BuildingModel, DiscreteDynamics, ExogenousSeries, ModelError, ZoneParams,
                    build_discrete_dynamics, simulate_schedule)
from .power import CostBreakdown, cooling_power, fan_power, schedule_cost
from .recover import Schedule, ViolationReport, make_schedule, recover_schedule, validate_schedule
from .relax import McCormickBox, assemble_stacked, local_feasible_set, mccormick_constraints
from .scenario import Scenario, ScenarioParams, generate_scenario, scenario_from_dict, scenario_to_json

__version__ = "0.1.0"

__all__ = [
    "AdalSolver", "IterateState", "Multipliers", "RelaxedSolution", "SolverConfig", "adal_solve",
    "ReferenceSolution", "brute_force_oracle", "solve_centralized_nonlinear", "solve_centralized_relaxed",
    "ExperimentSpec", "emit_report", "register_baseline", "run_receding_horizon", "run_rho_sweep",
    "run_single_shot", "run_zone_sweep",
    "AhuParams", "BuildingModel", "DiscreteDynamics", "ExogenousSeries", "ModelError", "ZoneParams",
    "build_discrete_dynamics", "simulate_schedule",
    "CostBreakdown", "cooling_power", "fan_power", "schedule_cost",
    "Schedule", "ViolationReport", "make_schedule", "recover_schedule", "validate_schedule",
    "McCormickBox", "assemble_stacked", "local_feasible_set", "mccormick_constraints",
    "Scenario", "ScenarioParams", "generate_scenario", "scenario_from_dict", "scenario_to_json",
]
