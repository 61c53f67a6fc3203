"""Dual-predicting proxy solvers for parametric constrained optimization.

Networks are trained to predict Lagrange multipliers of a family of
equality- and bound-constrained programs, trained either by Deep Dual
Ascent or by Deep ALM (an augmented Lagrangian with box-constrained
primal recovery).
"""

from .boxsolve import BoxSolveConfig, SolveReport, minimize_box, project_box
from .lagrangian import DualEstimate, PrimalRecovery, dual_function, dual_gradients, primal_recovery_box
from .metrics import CSV_COLUMNS, Evaluator, InstanceMetrics, MetricsRecord, aggregate, evaluate_instance
from .neural import MLP, SGD, Adam, init_xavier, load_model, save_model
from .oracle import GroundTruth, classical_alm, kkt_check, projected_dual_ascent, projected_dual_ascent_batch
from .problems import Dataset, Mode, ProblemFamily, ProblemInstance, generate_dataset, generate_family
from .training import TrainConfig, WarmStartStore, run_training

__all__ = [
    "BoxSolveConfig", "SolveReport", "minimize_box", "project_box",
    "DualEstimate", "PrimalRecovery", "dual_function", "dual_gradients", "primal_recovery_box",
    "CSV_COLUMNS", "Evaluator", "InstanceMetrics", "MetricsRecord", "aggregate", "evaluate_instance",
    "MLP", "SGD", "Adam", "init_xavier", "load_model", "save_model",
    "GroundTruth", "classical_alm", "kkt_check", "projected_dual_ascent", "projected_dual_ascent_batch",
    "Dataset", "Mode", "ProblemFamily", "ProblemInstance", "generate_dataset", "generate_family",
    "TrainConfig", "WarmStartStore", "run_training",
]
