"""Deep Dual Ascent and Deep ALM training loops."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .boxsolve import TRAINING_CONFIG, BoxSolveConfig, project_box
from .lagrangian import augmented_lagrangian_value, dual_function_batch, primal_recovery_box
from .neural import MLP, init_xavier, make_optimizer, relu_clamp_head, relu_clamp_head_backward
from .problems import Dataset, Mode, ProblemFamily, ProblemInstance, equality_residual, inequality_residual

logger = logging.getLogger(__name__)

DEFAULT_LR = {"dda": 5e-4, "dalm": 1e-5}
DEFAULT_OPTIMIZER = {"dda": "adam", "dalm": "sgd"}
N_AFFINE_LAYERS = 5


@dataclass
class TrainConfig:
    method: str = "dalm"
    epochs: int = 200
    batch_size: int = 50
    learning_rate: float | None = None
    optimizer: str | None = None
    rho0: float = 10.0
    gamma: float = 1.05
    rho_max: float = 1e6
    seed: int = 0
    hidden: int = 200
    inner: BoxSolveConfig = field(default_factory=lambda: TRAINING_CONFIG)
    threads: int = 1
    batch_reduction: str = "mean"

    def __post_init__(self):
        if self.method not in DEFAULT_LR:
            raise ValueError(f"method must be 'dda' or 'dalm', got {self.method!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.method]
        if self.optimizer is None:
            self.optimizer = DEFAULT_OPTIMIZER[self.method]
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_reduction not in ("mean", "sum"):
            raise ValueError("batch_reduction must be 'mean' or 'sum'")

    def batch_scale(self, batch_len: int) -> float:
        """Factor applied to summed per-sample output gradients."""
        return 1.0 / batch_len if self.batch_reduction == "mean" else 1.0

    def out_dim(self, family: ProblemFamily) -> int:
        return family.m + family.p if self.method == "dda" else family.p

    def rho_at(self, epoch: int) -> float:
        """Penalty weight used during (0-based) ``epoch``."""
        return min(self.rho0 * self.gamma**epoch, self.rho_max)


def rho_update(rho: float, cfg: TrainConfig) -> float:
    if not rho > 0:
        raise ValueError("rho must be positive")
    return min(rho * cfg.gamma, cfg.rho_max)


class WarmStartStore:
    """Last primal solution per instance index, for warm-starting inner solves."""

    def __init__(self, family: ProblemFamily | None = None):
        self._data: dict[int, np.ndarray] = {}
        self._key = family.fingerprint() if family is not None else None
        self.family = family

    def bind(self, family: ProblemFamily):
        key = family.fingerprint()
        if key != self._key:
            self._data.clear()
            self._key = key
            self.family = family

    def get(self, index: int):
        return self._data.get(index)

    def put_many(self, items):
        for index, x in items:
            if self.family is not None and (np.any(x < self.family.lower) or np.any(x > self.family.upper)):
                raise ValueError(f"warm start for instance {index} leaves the box")
            self._data[int(index)] = x

    def __len__(self):
        return len(self._data)

    def __contains__(self, index):
        return index in self._data


@dataclass
class EpochStats:
    mean_dual_value: float
    mean_output_grad_norm: float
    inner_iterations: dict[int, int] = field(default_factory=dict)
    inner_nonconverged: int = 0
    steps: int = 0


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


def _batches(instances, batch_size):
    # a trailing batch of one would break batch statistics; fold it into the previous one
    n = len(instances)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    for k, s in enumerate(starts):
        e = starts[k + 1] if k + 1 < len(starts) else n
        yield instances[s:e]


def build_model(family: ProblemFamily, cfg: TrainConfig) -> MLP:
    """The five-layer dual predictor with Xavier init and batch normalization."""
    dims = [family.n] + [cfg.hidden] * (N_AFFINE_LAYERS - 1) + [cfg.out_dim(family)]
    return init_xavier(cfg.seed, dims, batchnorm=True)


def train_dda_epoch(
    model,
    family: ProblemFamily,
    instances: list[ProblemInstance],
    cfg: TrainConfig,
    optimizer,
    store: WarmStartStore | None = None,
) -> EpochStats:
    """One pass of Deep Dual Ascent over ``instances`` (in the given order).

    Per mini-batch: predict ``(lam, nu)``, clamp ``lam`` with ReLU, recover
    ``x*`` in closed form, backpropagate ``(g(x*), h(x*))`` reduced over the
    batch (``cfg.batch_reduction``), and take an ascent step.
    """
    if family.mode is not Mode.CONVEX_QP:
        raise ValueError("Deep Dual Ascent is defined for the convex QP family only")
    m = family.m
    vals_all, gn_all, steps = [], [], 0
    for batch in _batches(instances, cfg.batch_size):
        C = np.stack([inst.c for inst in batch])
        idx = np.array([inst.index for inst in batch])
        out, cache = model.forward(C, train=True)
        lam, nu = relu_clamp_head(out, m)
        vals, X = dual_function_batch(family, C, lam, nu)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite dual value in batch starting at instance {idx[0]}")
        g_lam = inequality_residual(family, X)
        g_nu = equality_residual(family, X)
        grad_out = relu_clamp_head_backward(out, g_lam, g_nu) * cfg.batch_scale(len(batch))
        optimizer.step(model.parameters(), model.backward(cache, grad_out), ascent=True)
        vals_all.append(vals)
        gn_all.append(np.linalg.norm(np.hstack([g_lam, g_nu]), axis=1))
        steps += 1
    vals_all = np.concatenate(vals_all) if vals_all else np.zeros(0)
    gn_all = np.concatenate(gn_all) if gn_all else np.zeros(0)
    return EpochStats(
        mean_dual_value=float(vals_all.mean()) if vals_all.size else float("nan"),
        mean_output_grad_norm=float(gn_all.mean()) if gn_all.size else float("nan"),
        steps=steps,
    )


def train_dalm_epoch(
    model,
    family: ProblemFamily,
    instances: list[ProblemInstance],
    cfg: TrainConfig,
    optimizer,
    store: WarmStartStore,
    rho: float,
    mapper=map,
) -> EpochStats:
    """One pass of Deep ALM over ``instances`` at penalty weight ``rho``.

    Per mini-batch: predict ``nu``, minimize the box-augmented Lagrangian for
    each sample (warm-started from its previous solution, else from the
    projected origin), backpropagate ``h(x*)`` reduced over the batch, take
    an ascent step, and write the solutions back to ``store``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    store.bind(family)
    cold = project_box(np.zeros(family.n), family.lower, family.upper)
    vals_all, gn_all, iters, nonconv, steps = [], [], {}, 0, 0
    for batch in _batches(instances, cfg.batch_size):
        C = np.stack([inst.c for inst in batch])
        idx = [inst.index for inst in batch]
        nu_hat, cache = model.forward(C, train=True)

        def solve(k):
            x0 = store.get(idx[k])
            return primal_recovery_box(
                family, C[k], nu_hat[k], rho, warm_start=cold if x0 is None else x0, cfg=cfg.inner
            )

        recs = list(mapper(solve, range(len(batch))))
        X = np.stack([r.x for r in recs])
        H = equality_residual(family, X)
        optimizer.step(model.parameters(), model.backward(cache, H * cfg.batch_scale(len(batch))), ascent=True)
        store.put_many(zip(idx, X))
        for k, r in enumerate(recs):
            iters[idx[k]] = r.inner_iterations
            if not r.converged:
                nonconv += 1
        vals_all.extend(augmented_lagrangian_value(family, C[k], X[k], nu_hat[k], rho) for k in range(len(batch)))
        gn_all.append(np.linalg.norm(H, axis=1))
        steps += 1
    if nonconv:
        logger.info("inner solver hit its cap on %d of %d samples (rho=%.3g)", nonconv, len(instances), rho)
    return EpochStats(
        mean_dual_value=float(np.mean(vals_all)) if vals_all else float("nan"),
        mean_output_grad_norm=float(np.concatenate(gn_all).mean()) if gn_all else float("nan"),
        inner_iterations=iters,
        inner_nonconverged=nonconv,
        steps=steps,
    )


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def run_training(
    dataset: Dataset,
    cfg: TrainConfig,
    eval_hook=None,
    eval_every: int = 1,
    model: MLP | None = None,
    on_epoch=None,
):
    """Train for ``cfg.epochs`` epochs; returns ``(model, metric history)``.

    ``eval_hook(model, epoch, rho)`` is called after every ``eval_every``-th
    epoch (and after the last one) with the 1-based epoch count and the
    penalty weight that epoch trained with.
    """
    if eval_every < 1:
        raise ValueError("eval_every must be >= 1")
    family = dataset.family
    if cfg.method == "dda" and family.mode is not Mode.CONVEX_QP:
        raise ValueError("Deep Dual Ascent is only offered on the convex QP family")
    if model is None:
        model = build_model(family, cfg)
    if model.out_dim != cfg.out_dim(family) or model.in_dim != family.n:
        raise ValueError("model dimensions do not match the dataset and method")
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
    store = WarmStartStore(family)
    history = []
    train = dataset.train
    with _mapper(cfg.threads) as mapper:
        for epoch in range(cfg.epochs):
            rho = cfg.rho_at(epoch)
            order = [train[i] for i in epoch_permutation(cfg.seed, epoch, len(train))]
            if cfg.method == "dda":
                stats = train_dda_epoch(model, family, order, cfg, optimizer)
            else:
                stats = train_dalm_epoch(model, family, order, cfg, optimizer, store, rho, mapper=mapper)
            if on_epoch is not None:
                on_epoch(epoch + 1, rho, stats)
            if eval_hook is not None and ((epoch + 1) % eval_every == 0 or epoch + 1 == cfg.epochs):
                history.append(eval_hook(model, epoch + 1, rho))
    return model, history
