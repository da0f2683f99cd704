"""How the penalty parameter trades convergence speed against schedule cost.

Run with ``python demos/penalty_sweep.py``.
"""

from hvacadal import AdalSolver, SolverConfig, generate_scenario, recover_schedule, solve_centralized_nonlinear


def main() -> None:
    s = generate_scenario(5, 0)
    reference = solve_centralized_nonlinear(s.model, s.exo).objective
    print(f"{'rho':>5} {'iters':>6} {'residual':>9} {'recovered':>10} {'gap':>7}")
    for rho in (0.3, 1, 3, 5, 10, 15, 20):
        _, sol = AdalSolver(s.model, s.exo, SolverConfig(rho=rho)).solve()
        cost = recover_schedule(sol, s.model, s.exo).total_cost
        print(f"{rho:>5} {sol.iterations:>6} {sol.residual:>9.1e} {cost:>10.4f} {100 * (cost / reference - 1):>6.2f}%")


if __name__ == "__main__":
    main()
