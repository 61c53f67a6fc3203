"""Any multiplier estimate gives a valid lower bound; the bound is tight at the optimum.

Run with ``python demos/02_dual_bound.py``.
"""

import numpy as np

from dualproxy.lagrangian import DualEstimate, dual_function
from dualproxy.oracle import classical_alm
from dualproxy.problems import generate_dataset, generate_family

family = generate_family(seed=0, n=10, p=4)
c = generate_dataset(family, count=5, seed=1).costs("train")[0]
gt = classical_alm(family, c)
rng = np.random.default_rng(0)

for scale in (1.0, 0.5, 0.1, 0.0):
    est = DualEstimate(gt.lambda_star, gt.nu_star + scale * rng.normal(size=family.p))
    d, _ = dual_function(family, c, est)
    print(f"perturbation {scale:3.1f}: dual bound {d:10.4f} <= f* {gt.f_star:10.4f}")
