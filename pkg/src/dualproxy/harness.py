"""Experiment orchestration: file formats, run configuration and commands."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import ArchiveError, read_archive, write_archive
from .boxsolve import BoxSolveConfig, TRAINING_CONFIG
from .metrics import CSV_COLUMNS, CSV_SCHEMA_VERSION, Evaluator, MetricsRecord, write_metrics_csv
from .neural import load_model, save_model
from .oracle import GroundTruth, classical_alm, kkt_check
from .problems import Dataset, Mode, ProblemFamily, ProblemInstance, generate_dataset, generate_family
from .training import TrainConfig, _mapper, run_training

logger = logging.getLogger(__name__)

DATASET_MAGIC = "DPX1"
GROUND_TRUTH_MAGIC = "DPXG1"
KKT_ABORT_TOL = 1e-5


class HarnessError(RuntimeError):
    pass


# --- dataset archive -------------------------------------------------------


def save_dataset(ds: Dataset, path) -> str:
    fam = ds.family
    all_inst = ds.train + ds.test
    meta = {
        "format": DATASET_MAGIC,
        "mode": fam.mode.value,
        "n": fam.n,
        "p": fam.p,
        "seed": ds.seed,
        "split": ds.split,
        "low": ds.low,
        "high": ds.high,
        "n_train": len(ds.train),
    }
    arrays = {
        "Q": fam.Q,
        "A": fam.A,
        "b": fam.b,
        "lower": fam.lower,
        "upper": fam.upper,
        "witness": fam.witness if fam.witness is not None else np.zeros(0),
        "C": np.array([i.c for i in all_inst]).reshape(len(all_inst), fam.n),
        "index": np.array([i.index for i in all_inst], dtype=np.int64),
    }
    return write_archive(path, DATASET_MAGIC, meta, arrays)


def load_dataset(path) -> tuple[Dataset, str]:
    """Load a dataset archive; returns the dataset and its content hash."""
    meta, a, digest = read_archive(path, DATASET_MAGIC)
    witness = a["witness"] if a["witness"].size else None
    fam = ProblemFamily(
        Q=a["Q"], A=a["A"], b=a["b"], lower=a["lower"], upper=a["upper"], mode=Mode(meta["mode"]), witness=witness
    )
    inst = [ProblemInstance(c=a["C"][k].copy(), index=int(a["index"][k])) for k in range(len(a["index"]))]
    k = meta["n_train"]
    ds = Dataset(
        family=fam,
        train=inst[:k],
        test=inst[k:],
        seed=meta["seed"],
        split=meta["split"],
        low=meta["low"],
        high=meta["high"],
    )
    return ds, digest


# --- ground-truth archive --------------------------------------------------


def save_ground_truth(path, dataset_hash: str, indices, gts: list[GroundTruth]) -> str:
    meta = {"format": GROUND_TRUTH_MAGIC, "dataset_hash": dataset_hash, "count": len(gts)}
    arrays = {
        "index": np.asarray(indices, dtype=np.int64),
        "x_star": np.array([g.x_star for g in gts]),
        "nu_star": np.array([g.nu_star for g in gts]),
        "lambda_star": np.array([g.lambda_star for g in gts]),
        "f_star": np.array([g.f_star for g in gts]),
        "d_star": np.array([g.d_star for g in gts]),
        "kkt_residual": np.array([g.kkt_residual for g in gts]),
        "feasible": np.array([int(g.feasible) for g in gts], dtype=np.int64),
    }
    return write_archive(path, GROUND_TRUTH_MAGIC, meta, arrays)


def load_ground_truth(path, dataset_hash: str | None = None) -> dict[int, GroundTruth]:
    """Ground truth keyed by instance index; refuses a mismatched dataset hash."""
    meta, a, _ = read_archive(path, GROUND_TRUTH_MAGIC)
    if dataset_hash is not None and meta["dataset_hash"] != dataset_hash:
        raise HarnessError(
            f"ground truth was computed for dataset {meta['dataset_hash'][:12]}..., not {dataset_hash[:12]}..."
        )
    out = {}
    for k, idx in enumerate(a["index"]):
        out[int(idx)] = GroundTruth(
            x_star=a["x_star"][k],
            nu_star=a["nu_star"][k],
            lambda_star=a["lambda_star"][k],
            f_star=float(a["f_star"][k]),
            d_star=float(a["d_star"][k]),
            kkt_residual=float(a["kkt_residual"][k]),
            feasible=bool(a["feasible"][k]),
        )
    return out


# --- run configuration -----------------------------------------------------


@dataclass
class RunConfig:
    dataset: str = "dataset.dpx"
    ground_truth: str = "ground_truth.dpxg"
    out_dir: str = "run"
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
    inner_memory: int = TRAINING_CONFIG.memory
    inner_max_iters: int = TRAINING_CONFIG.max_iters
    inner_grad_tol: float = TRAINING_CONFIG.grad_tol
    batch_reduction: str = "mean"
    eval_every: int = 1
    threads: int = field(default_factory=lambda: int(os.environ.get("DPX_THREADS", "1")))
    strict_serial: bool = False

    def __post_init__(self):
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.strict_serial:
            self.threads = 1

    @classmethod
    def from_sources(cls, config_file=None, **overrides) -> "RunConfig":
        """JSON config file values, then non-None keyword overrides (CLI flags)."""
        values = {}
        if config_file:
            values.update(json.loads(Path(config_file).read_text()))
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            rho0=self.rho0,
            gamma=self.gamma,
            rho_max=self.rho_max,
            seed=self.seed,
            hidden=self.hidden,
            inner=BoxSolveConfig(
                memory=self.inner_memory, max_iters=self.inner_max_iters, grad_tol=self.inner_grad_tol
            ),
            threads=1 if self.strict_serial else self.threads,
            batch_reduction=self.batch_reduction,
        )


# --- commands --------------------------------------------------------------


def cmd_gen_data(out, n=50, p=20, count=10_000, low=-20.0, high=20.0, seed=0, split=0.8, mode="convex_qp") -> str:
    fam = generate_family(seed, n, p, Mode(mode))
    ds = generate_dataset(fam, count, low=low, high=high, seed=seed + 1, split=split)
    return save_dataset(ds, out)


def cmd_oracle(dataset_path, out, part="all", threads=1, kkt_tol=KKT_ABORT_TOL) -> str:
    """Certified ground truth for every instance of ``part`` ('all', 'train' or 'test')."""
    try:
        ds, digest = load_dataset(dataset_path)
    except ArchiveError as exc:
        raise HarnessError(f"refusing dataset {dataset_path}: {exc}") from exc
    insts = {"all": ds.train + ds.test, "train": ds.train, "test": ds.test}[part]
    fam = ds.family

    def solve(inst):
        return classical_alm(fam, inst.c, start_seed=inst.index)

    with _mapper(threads) as mapper:
        gts = list(mapper(solve, insts))
    for inst, gt in zip(insts, gts):
        res = kkt_check(fam, inst.c, gt)
        if res > kkt_tol or not gt.feasible:
            raise HarnessError(f"oracle certification failed at instance {inst.index}: KKT residual {res:.3e}")
    return save_ground_truth(out, digest, [i.index for i in insts], gts)


def _test_ground_truth(ds: Dataset, gt_map: dict[int, GroundTruth]) -> list[GroundTruth]:
    missing = [i.index for i in ds.test if i.index not in gt_map]
    if missing:
        raise HarnessError(f"ground truth missing for test instances, e.g. {missing[:5]}")
    return [gt_map[i.index] for i in ds.test]


def cmd_train(cfg: RunConfig) -> tuple[Path, Path]:
    """Train, writing ``metrics.csv``, ``model.dpxm`` and ``run.json`` to ``cfg.out_dir``."""
    try:
        ds, digest = load_dataset(cfg.dataset)
    except ArchiveError as exc:
        raise HarnessError(f"refusing dataset {cfg.dataset}: {exc}") from exc
    gts = _test_ground_truth(ds, load_ground_truth(cfg.ground_truth, digest))
    tcfg = cfg.train_config()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _mapper(tcfg.threads) as mapper:
        evaluator = Evaluator(ds.family, ds.costs("test"), gts, tcfg.method, mapper=mapper)
        model, history = run_training(ds, tcfg, evaluator, eval_every=cfg.eval_every)
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        write_metrics_csv(history, fh)
    model_path = out / "model.dpxm"
    save_model(model, model_path)
    manifest = {
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "csv_columns": list(CSV_COLUMNS),
        "dataset_hash": digest,
        "config": dataclasses.asdict(cfg),
    }
    manifest["config"].pop("threads")
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, model_path


def cmd_eval(model_path, dataset_path, ground_truth_path, method, rho=None, epoch=0, threads=1) -> MetricsRecord:
    ds, digest = load_dataset(dataset_path)
    gts = _test_ground_truth(ds, load_ground_truth(ground_truth_path, digest))
    fam = ds.family
    out_dim = fam.m + fam.p if method == "dda" else fam.p
    model = load_model(model_path, expected_out_dim=out_dim, expected_in_dim=fam.n)
    if method == "dalm" and rho is None:
        raise HarnessError("--rho is required to evaluate a Deep ALM model")
    with _mapper(threads) as mapper:
        return Evaluator(fam, ds.costs("test"), gts, method, mapper=mapper)(model, epoch, rho)
