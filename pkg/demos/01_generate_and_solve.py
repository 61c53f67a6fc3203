"""Generate a small QP family and certify ground truth with two independent oracles.

Run with ``python demos/01_generate_and_solve.py``.
"""

import numpy as np

from dualproxy.oracle import classical_alm, kkt_check, projected_dual_ascent
from dualproxy.problems import generate_dataset, generate_family

family = generate_family(seed=0, n=10, p=4)
dataset = generate_dataset(family, count=20, seed=1)
print(f"family: n={family.n}, p={family.p}; {len(dataset.train)} train / {len(dataset.test)} test instances")

c = dataset.costs("test")[0]
alm = classical_alm(family, c)
pda = projected_dual_ascent(family, c)
print(f"classical ALM: f*={alm.f_star:.6f}  d*={alm.d_star:.6f}  kkt={kkt_check(family, c, alm):.1e}")
print(f"dual ascent:   f*={pda.f_star:.6f}  d*={pda.d_star:.6f}  kkt={kkt_check(family, c, pda):.1e}")
print(f"|x_alm - x_pda| = {np.linalg.norm(alm.x_star - pda.x_star):.1e}")
