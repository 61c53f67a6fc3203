"""Train Deep Dual Ascent and Deep ALM proxies on a toy family and compare dual gaps.

Uses a narrow network and few epochs so it finishes in about a minute.
Run with ``python demos/03_train_proxies.py``.
"""

from dualproxy.metrics import Evaluator
from dualproxy.oracle import ground_truth_for
from dualproxy.problems import generate_dataset, generate_family
from dualproxy.training import TrainConfig, run_training

family = generate_family(seed=0, n=10, p=4)
dataset = generate_dataset(family, count=300, seed=1)
costs = dataset.costs("test")
gts = ground_truth_for(family, costs)

for method in ("dda", "dalm"):
    evaluator = Evaluator(family, costs, gts, method)
    _, history = run_training(dataset, TrainConfig(method, epochs=20, hidden=64), evaluator, eval_every=5)
    print(method)
    for r in history:
        print(f"  epoch {r.epoch:3d}  dual gap {r.dual_gap_mean:9.3e}  eq {r.eq_residual_mean:9.3e}  "
              f"rel obj gap {r.rel_obj_gap_mean:9.3e}")
