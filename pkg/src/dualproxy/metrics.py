"""Test-set metrics for dual-predicting proxy models."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .boxsolve import ORACLE_CONFIG, BoxSolveConfig
from .lagrangian import (
    DualEstimate,
    augmented_dual_function,
    dual_function,
)
from .neural import relu_clamp_head
from .oracle import GroundTruth
from .problems import ProblemFamily, equality_residual, inequality_residual, objective

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "epoch",
    "dual_gap_mean",
    "dual_gap_std",
    "primal_obj_mean",
    "primal_obj_std",
    "optimal_obj_mean",
    "eq_res_mean",
    "eq_res_std",
    "ineq_res_mean",
    "ineq_res_std",
    "sol_res_mean",
    "sol_res_std",
)


@dataclass
class InstanceMetrics:
    dual_gap: float
    primal_obj: float
    optimal_obj: float
    eq_residual: float
    ineq_residual: float
    solution_residual: float
    x_hat: np.ndarray | None = None

    @property
    def rel_obj_gap(self) -> float:
        return abs(self.primal_obj - self.optimal_obj) / (1.0 + abs(self.optimal_obj))


@dataclass
class MetricsRecord:
    epoch: int
    dual_gap_mean: float
    dual_gap_std: float
    primal_obj_mean: float
    primal_obj_std: float
    optimal_obj_mean: float
    eq_residual_mean: float
    eq_residual_std: float
    ineq_residual_mean: float
    ineq_residual_std: float
    solution_residual_mean: float
    solution_residual_std: float
    rel_obj_gap_mean: float = float("nan")
    rel_obj_gap_std: float = float("nan")

    def csv_row(self) -> list[str]:
        vals = [
            self.dual_gap_mean,
            self.dual_gap_std,
            self.primal_obj_mean,
            self.primal_obj_std,
            self.optimal_obj_mean,
            self.eq_residual_mean,
            self.eq_residual_std,
            self.ineq_residual_mean,
            self.ineq_residual_std,
            self.solution_residual_mean,
            self.solution_residual_std,
        ]
        return [str(self.epoch)] + [repr(float(v)) for v in vals]


def evaluate_instance(
    family: ProblemFamily,
    c,
    raw_output,
    method: str,
    ground_truth: GroundTruth | None,
    rho: float | None = None,
    warm_start=None,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
) -> InstanceMetrics:
    """All five metrics for one instance given the network's raw output row.

    ``method`` is ``"dda"`` (output is ``[lam, nu]``) or ``"dalm"`` (output is
    ``nu``; requires ``rho``). For Deep ALM the dual gap compares box-augmented
    dual values at the same ``rho``.
    """
    if ground_truth is None:
        raise ValueError("missing ground truth for instance")
    c = np.asarray(c, dtype=np.float64)
    raw = np.asarray(raw_output, dtype=np.float64).reshape(1, -1)
    gt = ground_truth
    if method == "dda":
        lam, nu = relu_clamp_head(raw, family.m)
        dual = DualEstimate(lam=lam[0], nu=nu[0])
        d_hat, rec = dual_function(family, c, dual, cfg=cfg, warm_start=warm_start)
        gap = gt.d_star - d_hat
    elif method == "dalm":
        if rho is None:
            raise ValueError("Deep ALM evaluation needs rho")
        d_hat, rec = augmented_dual_function(family, c, raw[0], rho, warm_start=warm_start, cfg=cfg)
        d_opt, _ = augmented_dual_function(family, c, gt.nu_star, rho, warm_start=gt.x_star, cfg=cfg)
        gap = d_opt - d_hat
    else:
        raise ValueError(f"unknown method {method!r}")
    x = rec.x
    return InstanceMetrics(
        dual_gap=float(gap),
        primal_obj=float(objective(family, c, x)),
        optimal_obj=float(gt.f_star),
        eq_residual=float(np.linalg.norm(equality_residual(family, x))),
        ineq_residual=float(np.linalg.norm(np.maximum(inequality_residual(family, x), 0.0))),
        solution_residual=float(np.linalg.norm(x - gt.x_star)),
        x_hat=x,
    )


def _mean_std(v):
    v = np.asarray(v, dtype=np.float64)
    return float(v.mean()), float(v.std())


def aggregate(records: list[InstanceMetrics], epoch: int) -> MetricsRecord:
    """Mean and population standard deviation of each metric."""
    if len(records) == 0:
        raise ValueError("cannot aggregate an empty set of instance metrics")
    col = {f.name: [getattr(r, f.name) for r in records] for f in fields(InstanceMetrics) if f.name != "x_hat"}
    dg = _mean_std(col["dual_gap"])
    po = _mean_std(col["primal_obj"])
    eq = _mean_std(col["eq_residual"])
    iq = _mean_std(col["ineq_residual"])
    sr = _mean_std(col["solution_residual"])
    rg = _mean_std([r.rel_obj_gap for r in records])
    return MetricsRecord(
        epoch=epoch,
        dual_gap_mean=dg[0],
        dual_gap_std=dg[1],
        primal_obj_mean=po[0],
        primal_obj_std=po[1],
        optimal_obj_mean=_mean_std(col["optimal_obj"])[0],
        eq_residual_mean=eq[0],
        eq_residual_std=eq[1],
        ineq_residual_mean=iq[0],
        ineq_residual_std=iq[1],
        solution_residual_mean=sr[0],
        solution_residual_std=sr[1],
        rel_obj_gap_mean=rg[0],
        rel_obj_gap_std=rg[1],
    )


class Evaluator:
    """Evaluates a model on a fixed test set with precomputed ground truth.

    Primal recoveries are warm-started from the previous evaluation of the
    same instance (the store is private to the evaluator).
    """

    def __init__(
        self,
        family: ProblemFamily,
        C,
        ground_truth: list[GroundTruth],
        method: str,
        cfg: BoxSolveConfig = ORACLE_CONFIG,
        mapper=map,
    ):
        self.family = family
        self.C = np.asarray(C, dtype=np.float64)
        if len(ground_truth) != len(self.C):
            raise ValueError("ground truth count does not match test set")
        self.ground_truth = ground_truth
        self.method = method
        self.cfg = cfg
        self.mapper = mapper
        self._warm: dict[int, np.ndarray] = {}
        self.last_instances: list[InstanceMetrics] = []

    def __call__(self, model, epoch: int, rho: float | None = None) -> MetricsRecord:
        out, _ = model.forward(self.C, train=False)

        def one(i):
            return evaluate_instance(
                self.family,
                self.C[i],
                out[i],
                self.method,
                self.ground_truth[i],
                rho=rho,
                warm_start=self._warm.get(i),
                cfg=self.cfg,
            )

        recs = list(self.mapper(one, range(len(self.C))))
        if self.method == "dalm":
            for i, r in enumerate(recs):
                self._warm[i] = r.x_hat
        self.last_instances = recs
        return aggregate(recs, epoch)


def write_metrics_csv(records: list[MetricsRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())


def metrics_csv_text(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    write_metrics_csv(records, buf)
    return buf.getvalue()


def record_dict(r: MetricsRecord) -> dict:
    return asdict(r)
