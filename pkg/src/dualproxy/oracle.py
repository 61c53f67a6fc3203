"""Classical reference solvers producing certified primal/dual optima."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .boxsolve import BoxSolveConfig, project_box, projected_grad_norm
from .lagrangian import DualEstimate, dual_function, ineq_jacobian_t, primal_recovery_box
from .problems import (
    Mode,
    ProblemFamily,
    equality_residual,
    inequality_residual,
    objective,
    objective_grad,
)

logger = logging.getLogger(__name__)

ORACLE_INNER = BoxSolveConfig(memory=20, max_iters=2000, grad_tol=1e-8)


class DivergenceError(FloatingPointError):
    """Dual iterates blew up; ``last`` holds the final (lam, nu)."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass
class GroundTruth:
    x_star: np.ndarray
    nu_star: np.ndarray
    lambda_star: np.ndarray
    f_star: float
    d_star: float
    kkt_residual: float
    feasible: bool
    iterations: int = 0
    status: str = "converged"


def multipliers_from_stationarity(family: ProblemFamily, c, x, nu) -> np.ndarray:
    """Bound multipliers implied by ``grad f + A^T nu + J_g^T lam = 0``.

    Only bounds that are exactly active get a (nonnegative) multiplier.
    """
    r = objective_grad(family, c, x) + nu @ family.A
    lo = np.isfinite(family.lower)
    up = np.isfinite(family.upper)
    lam_lo = np.where(x <= family.lower, np.maximum(r, 0.0), 0.0)[lo]
    lam_up = np.where(x >= family.upper, np.maximum(-r, 0.0), 0.0)[up]
    return np.concatenate([lam_lo, lam_up])


def kkt_check(family: ProblemFamily, c, gt: GroundTruth) -> float:
    """Largest violation among stationarity, feasibility, sign and complementarity."""
    x, nu, lam = gt.x_star, gt.nu_star, gt.lambda_star
    stat = objective_grad(family, c, x) + nu @ family.A + ineq_jacobian_t(family, lam)
    g = inequality_residual(family, x)
    parts = [
        np.max(np.abs(stat), initial=0.0),
        np.max(np.abs(equality_residual(family, x)), initial=0.0),
        np.max(np.maximum(g, 0.0), initial=0.0),
        np.max(np.maximum(-lam, 0.0), initial=0.0),
        np.max(np.abs(lam * g), initial=0.0),
    ]
    return float(max(parts))


def _finish(family, c, x, nu, iterations, status, feas_tol) -> GroundTruth:
    lam = multipliers_from_stationarity(family, c, x, nu)
    d_star, _ = dual_function(family, c, DualEstimate(lam=lam, nu=nu), warm_start=x)
    gt = GroundTruth(
        x_star=x,
        nu_star=nu,
        lambda_star=lam,
        f_star=float(objective(family, c, x)),
        d_star=float(d_star),
        kkt_residual=0.0,
        feasible=bool(np.linalg.norm(equality_residual(family, x)) <= feas_tol),
        iterations=iterations,
        status=status,
    )
    gt.kkt_residual = kkt_check(family, c, gt)
    return gt


def _alm_run(family, c, x0, rho0, gamma, rho_max, max_outer, inner_cfg, feas_tol, stat_tol):
    nu = np.zeros(family.p)
    x = project_box(x0, family.lower, family.upper)
    rho = rho0
    for k in range(1, max_outer + 1):
        rec = primal_recovery_box(family, c, nu, rho, warm_start=x, cfg=inner_cfg)
        x = rec.x
        h = equality_residual(family, x)
        # first-order multiplier estimate: makes the plain Lagrangian gradient
        # equal the augmented one at x
        nu_est = nu + 2.0 * rho * h
        stat = projected_grad_norm(
            x, objective_grad(family, c, x) + nu_est @ family.A, family.lower, family.upper
        )
        if np.linalg.norm(h) <= feas_tol and stat <= stat_tol:
            return x, nu_est, k, "converged"
        nu = nu + rho * h
        rho = min(rho * gamma, rho_max)
    return x, nu_est, max_outer, "outer cap reached"


def classical_alm(
    family: ProblemFamily,
    c,
    rho0: float = 10.0,
    gamma_oracle: float = 2.0,
    max_outer: int = 200,
    inner_cfg: BoxSolveConfig = ORACLE_INNER,
    rho_max: float = 1e8,
    feas_tol: float = 1e-9,
    stat_tol: float = 1e-8,
    n_starts: int | None = None,
    start_seed: int = 0,
) -> GroundTruth:
    """Method of multipliers on the box-constrained form.

    Each outer step minimizes ``f + nu^T h + rho ||h||^2`` over the box
    (warm-started), then sets ``nu <- nu + rho h`` and ``rho <- gamma rho``.
    Nonconvex families run from ``n_starts`` points (default 8: the cold start
    plus seeded random box points) and keep the best feasible run.
    """
    c = np.asarray(c, dtype=np.float64)
    if n_starts is None:
        n_starts = 1 if family.mode is Mode.CONVEX_QP else 8
    starts = [np.zeros(family.n)]
    if n_starts > 1:
        rng = np.random.default_rng(start_seed)
        lo = np.where(np.isfinite(family.lower), family.lower, -1.0)
        hi = np.where(np.isfinite(family.upper), family.upper, lo + 1.0)
        starts += [rng.uniform(lo, hi) for _ in range(n_starts - 1)]

    best = None
    for x0 in starts:
        x, nu, k, status = _alm_run(
            family, c, x0, rho0, gamma_oracle, rho_max, max_outer, inner_cfg, feas_tol, stat_tol
        )
        gt = _finish(family, c, x, nu, k, status, feas_tol)
        if status != "converged":
            gt.feasible = False
            logger.warning("classical ALM: %s (|h|=%.3e)", status, np.linalg.norm(equality_residual(family, x)))
        if best is None or (gt.feasible, -gt.f_star) > (best.feasible, -best.f_star):
            best = gt
    return best


def dual_lipschitz(family: ProblemFamily) -> float:
    """Largest eigenvalue of ``B (2Q)^{-1} B^T`` with ``B = [J_g; A]``."""
    J = ineq_jacobian_t(family, np.eye(family.m))  # rows: J_g^T e_i, i.e. J_g
    B = np.vstack([J, family.A])
    return float(np.linalg.eigvalsh(B @ family.inv_2q @ B.T)[-1])


def _affine_inequalities(family: ProblemFamily):
    """``g(x) = G x + g0`` for the box rows of :func:`inequality_residual`."""
    G = ineq_jacobian_t(family, np.eye(family.m))
    g0 = inequality_residual(family, np.zeros(family.n))
    return G, g0


def projected_dual_ascent_batch(
    family: ProblemFamily,
    C,
    alpha: float | None = None,
    max_iters: int = 200_000,
    tol: float = 1e-9,
    lam0=None,
    nu0=None,
    divergence_factor: float = 1e6,
) -> list[GroundTruth]:
    """Projected Dual Ascent run on every row of ``C`` in lockstep.

    ``x^k = argmin_x L(x, lam^k, nu^k)``, ``nu += alpha h(x^k)``,
    ``lam = [lam + alpha g(x^k)]_+``. Rows stop individually once
    ``max(|h|, |[g]_+|, |lam * g|)`` (inf-norms) is at most ``tol``, or flag
    ``"diverging"`` once the residual exceeds ``divergence_factor`` times its
    best value so far. The default step is ``1.8 / L`` with ``L`` the dual
    curvature bound from :func:`dual_lipschitz`.
    """
    if family.mode is not Mode.CONVEX_QP:
        raise ValueError("projected dual ascent is provided for convex QP families only")
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    B = C.shape[0]
    if alpha is None:
        alpha = 1.8 / dual_lipschitz(family)
    lam = np.zeros((B, family.m)) if lam0 is None else np.array(np.broadcast_to(lam0, (B, family.m)), dtype=float)
    nu = np.zeros((B, family.p)) if nu0 is None else np.array(np.broadcast_to(nu0, (B, family.p)), dtype=float)
    lam = np.maximum(lam, 0.0)

    K = family.inv_2q
    G, g0 = _affine_inequalities(family)
    KA = family.A @ K
    KG = G @ K
    At, Gt, b = family.A.T, G.T, family.b

    X = np.empty((B, family.n))
    iters = np.full(B, max_iters)
    status = np.array(["iteration cap reached"] * B, dtype=object)
    act = np.arange(B)
    kc, la, na = C @ K, lam.copy(), nu.copy()
    best = np.full(B, np.inf)
    for k in range(max_iters + 1):
        xa = -(kc + na @ KA + la @ KG)
        h = xa @ At - b
        g = xa @ Gt + g0
        res = np.maximum(np.abs(h).max(axis=1), np.maximum(g, 0.0).max(axis=1, initial=0.0))
        res = np.maximum(res, np.abs(la * g).max(axis=1, initial=0.0))
        if not np.all(np.isfinite(res)):
            lam[act], nu[act] = la, na
            raise DivergenceError("dual ascent produced non-finite iterates", last=(lam, nu))
        best = np.minimum(best, res)
        conv = res <= tol
        div = res > divergence_factor * np.maximum(best, tol)
        stop = conv | div if k < max_iters else np.ones_like(conv)
        if np.any(stop):
            idx = act[stop]
            X[idx], lam[idx], nu[idx], iters[idx] = xa[stop], la[stop], na[stop], k
            status[act[conv]] = "converged"
            status[act[div & ~conv]] = "diverging"
            keep = ~stop
            act, kc, la, na, h, g, best = act[keep], kc[keep], la[keep], na[keep], h[keep], g[keep], best[keep]
            if act.size == 0:
                break
        na = na + alpha * h
        la = np.maximum(la + alpha * g, 0.0)

    out = []
    for i in range(B):
        gt = GroundTruth(
            x_star=X[i].copy(),
            nu_star=nu[i].copy(),
            lambda_star=lam[i].copy(),
            f_star=float(objective(family, C[i], X[i])),
            d_star=float(dual_function(family, C[i], DualEstimate(lam=lam[i], nu=nu[i]))[0]),
            kkt_residual=0.0,
            feasible=status[i] == "converged",
            iterations=int(iters[i]),
            status=str(status[i]),
        )
        gt.kkt_residual = kkt_check(family, C[i], gt)
        out.append(gt)
    return out


def projected_dual_ascent(
    family: ProblemFamily,
    c,
    alpha: float | None = None,
    max_iters: int = 200_000,
    tol: float = 1e-9,
    lam0=None,
    nu0=None,
) -> GroundTruth:
    return projected_dual_ascent_batch(family, np.asarray(c)[None, :], alpha, max_iters, tol, lam0, nu0)[0]


def ground_truth_for(family: ProblemFamily, C, **kw) -> list[GroundTruth]:
    """Oracle solutions for each row of ``C`` (multi-start seeds derived per row)."""
    seed = kw.pop("start_seed", 0)
    return [classical_alm(family, c, start_seed=seed + i, **kw) for i, c in enumerate(np.atleast_2d(C))]


__all__ = [
    "GroundTruth",
    "DivergenceError",
    "ORACLE_INNER",
    "classical_alm",
    "projected_dual_ascent",
    "projected_dual_ascent_batch",
    "kkt_check",
    "multipliers_from_stationarity",
    "dual_lipschitz",
    "ground_truth_for",
]
