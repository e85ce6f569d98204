"""Where exact TD on the two-state chain starts to diverge.

Features 1 and 2 on a chain s1 -> s2 -> (terminal). With equal weights the
scalar iteration factor is gamma * (6 - 4 eps) / 5, so the boundary in gamma
sits at 5 / (6 - 4 eps). Moving weight onto s1 also pushes it over the edge.
"""

import numpy as np

from tdlab.analysis import (CounterExampleParams, classify, counterexample_build,
                            counterexample_d1_threshold, counterexample_gamma_threshold,
                            format_table)
from tdlab.linear import build_system, spectral_radius
from tdlab.objectives import quadratic_linear
from tdlab.solvers import SolverConfig, solve_exact


def rho(eps, gamma, d1=0.5):
    mrp, phi, d = counterexample_build(CounterExampleParams(eps, gamma, d1))
    return spectral_radius(build_system(mrp, phi, d).A)


# gamma boundary for a few epsilons; above 1 means every discount is safe
rows = [[eps, counterexample_gamma_threshold(eps)] for eps in (0.05, 0.1, 0.2, 0.25, 0.5)]
print(format_table(rows, ["epsilon", "gamma threshold"]))
print()

# a coarse phase diagram: '.' converges, '#' diverges
gammas = np.linspace(0.5, 0.99, 50)
for eps in np.linspace(0.02, 0.3, 15):
    line = "".join("#" if rho(eps, g) > 1 else "." for g in gammas)
    print(f"eps={eps:4.2f} {line}")
print(f"{'':9}gamma 0.50 ... 0.99")
print()

# shifting weight onto s1 at fixed (eps, gamma)
eps, gamma = 0.1, 0.9
cut = counterexample_d1_threshold(eps, gamma)
print(f"eps={eps}, gamma={gamma}: converges iff d1 < {cut:.4f}")
rows = [[d1, rho(eps, gamma, d1), classify(rho(eps, gamma, d1))]
        for d1 in (0.2, 0.4, cut - 0.01, cut + 0.01, 0.6, 0.9)]
print(format_table(rows, ["d1", "rho", "verdict"]))
print()

# the iterates themselves: geometric with exactly the predicted factor
mrp, phi, d = counterexample_build(CounterExampleParams(0.1, 0.95))
traj = solve_exact(quadratic_linear(mrp, phi, d), [1.0], SolverConfig(T=10))
print("theta_t:", np.round(traj.thetas[:, 0], 4))
print("ratios: ", np.round(traj.ratios, 6), "expected", 0.95 * 5.6 / 5)
