"""How tight are the eta and sigma_K contraction factors in practice?

For a random instance with F_theta < F_w we compare the largest observed
distance ratio against eta (exact inner solve) and sigma_K (K gradient steps).
"""

import numpy as np

from tdlab.analysis import format_table, sigma_k, verify_contraction
from tdlab.generators import random_instance
from tdlab.objectives import quadratic_linear
from tdlab.solvers import SolverConfig, solve_exact, solve_gradient

rng = np.random.default_rng(7)
while True:
    obj = quadratic_linear(*random_instance(rng, max_cond=100))
    fc = obj.analytic_constants()
    if fc.hypothesis_holds and fc.kappa < 0.5:
        break

print(f"F_theta={fc.F_theta:.4f}  F_w={fc.F_w:.4f}  L={fc.L:.4f}")
print(f"eta={fc.eta:.4f}  kappa={fc.kappa:.4f}")
print()

rows = []
rep = verify_contraction(solve_exact(obj, None, SolverConfig(T=200)), fc)
rows.append(["exact", rep.predicted_sigma, rep.max_observed_ratio, rep.bound_satisfied])
for K in (1, 2, 5, 20, 100):
    traj = solve_gradient(obj, None, SolverConfig(T=500, K=K))
    rep = verify_contraction(traj, fc)
    rows.append([f"K={K}", rep.predicted_sigma, rep.max_observed_ratio, rep.bound_satisfied])
print(format_table(rows, ["solver", "bound", "max ratio", "ok"]))
print()

# sigma_K approaches eta from above as K grows
Ks = [1, 10, 100, 1000]
print("sigma_K:", [round(sigma_k(fc.kappa, fc.eta, K), 6) for K in Ks], "eta:", round(fc.eta, 6))
