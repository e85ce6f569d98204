"""Looking for an update distribution that makes exact TD converge.

Off-policy weighting can break convergence; the on-policy (stationary)
weighting never does. A random search over the simplex usually finds
something at least as good.
"""

import numpy as np

from tdlab.analysis import (COUNTEREXAMPLE_RESTART, CounterExampleParams, counterexample_build,
                            safe_distribution_search)
from tdlab.linear import build_system, spectral_radius
from tdlab.mrp import stationary_distribution

mrp, phi, d = counterexample_build(CounterExampleParams(epsilon=0.1, gamma=0.99))
print("uniform weights rho:", spectral_radius(build_system(mrp, phi, d).A))

d_stat = stationary_distribution(mrp, COUNTEREXAMPLE_RESTART)
print("stationary weights:", np.round(d_stat, 4))
print("stationary rho:", spectral_radius(build_system(mrp, phi, d_stat).A))

res = safe_distribution_search(mrp, phi, trials=500, rng_seed=0, restart=COUNTEREXAMPLE_RESTART)
print(f"search: best rho {res.rho:.4f} at d={np.round(res.d, 4)} "
      f"({res.evaluated} candidates, found={res.found})")
