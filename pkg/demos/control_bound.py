"""Lipschitz constant of the control gradient in theta.

Empirical ratio ||grad_w H(t1, w) - grad_w H(t2, w)|| / ||t1 - t2|| against
two bounds: the compact gamma * E[max ||phi||^2] form and the per-pair
stepwise form. The compact form can fail once feature norms vary a lot
across actions; the stepwise one cannot.
"""

import numpy as np

from tdlab.analysis import control_lipschitz_check, format_table
from tdlab.generators import random_control_problem
from tdlab.objectives import ControlProblem

rows = []
for seed in range(5):
    for greedify, tau in (("max", 1.0), ("softmax", 0.1), ("softmax", 1.0)):
        cp = random_control_problem(np.random.default_rng(seed), greedify=greedify, tau=tau)
        rep = control_lipschitz_check(cp, samples=2000, rng_seed=seed)
        rows.append([seed, greedify, tau, rep.max_ratio, rep.bound, rep.stepwise_bound,
                     rep.violations])
print(format_table(rows, ["seed", "greedify", "tau", "max ratio", "bound", "stepwise",
                          "violations"]))
print()

# s0 carries a large feature and always moves to s1, whose feature is small
cp = ControlProblem(d=[0.5, 0.5], pi=[[1.0], [1.0]], P=[[0.0, 1.0], [0.0, 1.0]], r=[0.0, 0.0],
                    features=[[[10.0]], [[1.0]]], gamma=0.9)
rep = control_lipschitz_check(cp, samples=2000)
print(f"skewed features: max ratio {rep.max_ratio:.3f}, compact bound {rep.bound:.3f}, "
      f"stepwise bound {rep.stepwise_bound:.3f}, violations {rep.violations}")
