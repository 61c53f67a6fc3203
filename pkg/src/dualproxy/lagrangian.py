"""Lagrangians, dual functions and primal recovery from multipliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .boxsolve import ORACLE_CONFIG, BoxSolveConfig, minimize_box, minimize_unconstrained, project_box
from .problems import (
    Mode,
    ProblemFamily,
    equality_residual,
    inequality_residual,
    objective,
    objective_grad,
)


@dataclass(frozen=True, eq=False)
class DualEstimate:
    """Multipliers ``(lam, nu)``; ``lam`` is clamped at zero on construction."""

    lam: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        lam = np.maximum(np.asarray(self.lam, dtype=np.float64), 0.0)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=np.float64))

    @classmethod
    def equality_only(cls, nu) -> "DualEstimate":
        return cls(lam=np.zeros(0), nu=nu)


@dataclass
class PrimalRecovery:
    x: np.ndarray
    inner_iterations: int = 0
    inner_grad_norm: float = 0.0
    converged: bool = True


def _check_dual(family: ProblemFamily, dual: DualEstimate):
    if dual.nu.shape[-1] != family.p:
        raise ValueError(f"nu has dimension {dual.nu.shape[-1]}, expected {family.p}")
    if dual.lam.shape[-1] not in (0, family.m):
        raise ValueError(f"lam has dimension {dual.lam.shape[-1]}, expected {family.m}")


def ineq_jacobian_t(family: ProblemFamily, lam) -> np.ndarray:
    """``J_g^T lam`` for the box inequalities; equals ``-lam`` for ``x >= 0``."""
    lam = np.asarray(lam, dtype=np.float64)
    lo = np.isfinite(family.lower)
    up = np.isfinite(family.upper)
    if np.all(lo) and not np.any(up):
        return -lam
    out = np.zeros(lam.shape[:-1] + (family.n,))
    k = int(lo.sum())
    out[..., lo] -= lam[..., :k]
    out[..., up] += lam[..., k:]
    return out


def lagrangian_value(family: ProblemFamily, c, x, dual: DualEstimate) -> float:
    _check_dual(family, dual)
    val = objective(family, c, x) + equality_residual(family, x) @ dual.nu
    if dual.lam.size:
        val = val + inequality_residual(family, x) @ dual.lam
    return float(val)


def augmented_lagrangian_value(family: ProblemFamily, c, x, nu, rho: float) -> float:
    """``f + nu^T h + rho * ||h||^2`` (the box indicator is left to the solver)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    h = equality_residual(family, x)
    return float(objective(family, c, x) + h @ nu + rho * (h @ h))


def augmented_lagrangian_grad(family: ProblemFamily, c, x, nu, rho: float) -> np.ndarray:
    h = equality_residual(family, x)
    return objective_grad(family, c, x) + (np.asarray(nu) + 2.0 * rho * h) @ family.A


def closed_form_minimizer(family: ProblemFamily, c, lam, nu) -> np.ndarray:
    """Unconstrained minimizer of the QP Lagrangian: ``2Q x = -(c + A^T nu + J_g^T lam)``.

    Accepts batches: ``c`` (B, n), ``lam`` (B, m) or empty, ``nu`` (B, p).
    """
    if family.mode is not Mode.CONVEX_QP:
        raise ValueError("closed-form Lagrangian minimizer requires a convex QP family")
    c = np.asarray(c, dtype=np.float64)
    rhs = c + np.asarray(nu, dtype=np.float64) @ family.A
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[-1]:
        rhs = rhs + ineq_jacobian_t(family, lam)
    return -scipy.linalg.cho_solve(family.chol_2q, rhs.T).T


def augmented_minimizer_unboxed(family: ProblemFamily, c, nu, rho: float) -> np.ndarray:
    """Closed-form minimizer of ``f + nu^T h + rho ||h||^2`` over all of R^n (convex QP)."""
    if family.mode is not Mode.CONVEX_QP:
        raise ValueError("requires a convex QP family")
    A = family.A
    H = 2.0 * family.Q + 2.0 * rho * A.T @ A
    rhs = -(np.asarray(c) + np.asarray(nu) @ A - 2.0 * rho * family.b @ A)
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), rhs)


def dual_function(
    family: ProblemFamily,
    c,
    dual: DualEstimate,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
    warm_start=None,
) -> tuple[float, PrimalRecovery]:
    """Evaluate ``d(lam, nu) = min_x L(x, lam, nu)`` and return the minimizer.

    Convex QPs use a Cholesky solve. The sinusoidal family minimizes the
    Lagrangian iteratively (a local minimizer), and reports convergence in the
    returned recovery.
    """
    _check_dual(family, dual)
    c = np.asarray(c, dtype=np.float64)
    if family.mode is Mode.CONVEX_QP:
        x = closed_form_minimizer(family, c, dual.lam, dual.nu)
        rec = PrimalRecovery(x=x)
    else:
        shift = dual.nu @ family.A
        if dual.lam.size:
            shift = shift + ineq_jacobian_t(family, dual.lam)

        def fg(x):
            return objective(family, c, x) + shift @ x, objective_grad(family, c, x) + shift

        x0 = np.zeros(family.n) if warm_start is None else warm_start
        rep = minimize_unconstrained(fg, x0, cfg)
        rec = PrimalRecovery(
            x=rep.x,
            inner_iterations=rep.iterations,
            inner_grad_norm=rep.final_projected_grad_norm,
            converged=rep.converged,
        )
    return lagrangian_value(family, c, rec.x, dual), rec


def dual_function_batch(family: ProblemFamily, C, lam, nu) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized convex-QP dual values and minimizers for a batch of instances."""
    X = closed_form_minimizer(family, C, lam, nu)
    vals = objective(family, C, X) + np.sum(equality_residual(family, X) * nu, axis=-1)
    if np.asarray(lam).shape[-1]:
        vals = vals + np.sum(inequality_residual(family, X) * lam, axis=-1)
    return vals, X


def dual_gradients(family: ProblemFamily, c, recovery: PrimalRecovery) -> tuple[np.ndarray, np.ndarray]:
    """``(grad_lam d, grad_nu d) = (g(x*), h(x*))``."""
    x = recovery.x
    return inequality_residual(family, x), equality_residual(family, x)


def primal_recovery_box(
    family: ProblemFamily,
    c,
    nu,
    rho: float,
    warm_start=None,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
) -> PrimalRecovery:
    """Minimize the augmented Lagrangian ``f + nu^T h + rho ||h||^2`` over the box."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    c = np.asarray(c, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != (family.p,):
        raise ValueError(f"nu has shape {nu.shape}, expected ({family.p},)")
    A, b = family.A, family.b

    def fg(x):
        h = A @ x - b
        f = objective(family, c, x) + h @ nu + rho * (h @ h)
        g = objective_grad(family, c, x) + (nu + 2.0 * rho * h) @ A
        return f, g

    x0 = np.zeros(family.n) if warm_start is None else warm_start
    x0 = project_box(x0, family.lower, family.upper)
    rep = minimize_box(fg, x0, family.lower, family.upper, cfg)
    return PrimalRecovery(
        x=rep.x,
        inner_iterations=rep.iterations,
        inner_grad_norm=rep.final_projected_grad_norm,
        converged=rep.converged,
    )


def augmented_dual_function(
    family: ProblemFamily,
    c,
    nu,
    rho: float,
    warm_start=None,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
) -> tuple[float, PrimalRecovery]:
    """Box-augmented dual value ``min_{l<=x<=u} f + nu^T h + rho ||h||^2``."""
    rec = primal_recovery_box(family, c, nu, rho, warm_start=warm_start, cfg=cfg)
    return augmented_lagrangian_value(family, c, rec.x, nu, rho), rec


def recover_primal_proxy(
    family: ProblemFamily,
    c,
    dual: DualEstimate,
    rho: float | None = None,
    warm_start=None,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
) -> np.ndarray:
    """Map predicted multipliers to a primal point.

    With ``rho`` given, the box-augmented Lagrangian is minimized (the Deep ALM
    proxy); otherwise the plain Lagrangian is minimized without the box.
    """
    if rho is not None:
        return primal_recovery_box(family, c, dual.nu, rho, warm_start=warm_start, cfg=cfg).x
    return dual_function(family, c, dual, cfg=cfg, warm_start=warm_start)[1].x
