"""Receding-horizon operation with a four-hour planning window.

Run with ``python demos/closed_loop.py [out_dir]``; CSV and JSON reports
are written when an output directory is given.
"""

import sys

from hvacadal import ExperimentSpec, emit_report, run_receding_horizon


def main(out_dir: str | None = None) -> None:
    spec = ExperimentSpec(scenario={"n_zones": 5, "seed": 1}, solvers=({"rho": 1.0},), baselines=())
    art = run_receding_horizon(spec, planning_horizon=8)
    summary = art.summary
    sched = art.schedules["mpc"]
    print(f"closed-loop cost {sched.total_cost:.4f}, fallbacks {summary['fallbacks']}, "
          f"max comfort excess {sched.violations.max_comfort_excess:.4f} degC")
    for flag in summary["flags"]:
        print("flag:", flag)
    if out_dir:
        for path in emit_report(art, out_dir):
            print("wrote", path)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
