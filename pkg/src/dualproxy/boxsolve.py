"""Projected limited-memory BFGS for smooth objectives on a box.

The search direction comes from the usual two-loop recursion applied to the
gradient restricted to free variables (those not pinned at a bound with the
gradient pushing outward). Trial points are projected onto the box and accepted
by an Armijo test along the projected path. When the quasi-Newton direction
fails to give descent after projection, the step falls back to projected
steepest descent.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

FunGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class NonFiniteError(FloatingPointError):
    """Objective or gradient evaluated to NaN/inf."""


@dataclass(frozen=True)
class BoxSolveConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 60
    roundoff: float = 1e-12

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack_factor < 1:
            raise ValueError("armijo_c and backtrack_factor must lie in (0, 1)")


ORACLE_CONFIG = BoxSolveConfig()
TRAINING_CONFIG = BoxSolveConfig(max_iters=100, grad_tol=1e-6)


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    final_projected_grad_norm: float
    converged: bool
    objective_value: float


def project_box(x, lower, upper) -> np.ndarray:
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(lower > upper):
        raise ValueError("crossed bounds: lower > upper")
    return np.minimum(np.maximum(np.asarray(x, dtype=np.float64), lower), upper)


def projected_grad_norm(x, g, lower, upper) -> float:
    """inf-norm of ``x - P(x - g)``; zero exactly at box-KKT points."""
    return float(np.max(np.abs(x - project_box(x - g, lower, upper)), initial=0.0))


def _eval(fun: FunGrad, x):
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite objective/gradient at x with |x|_inf={np.max(np.abs(x)):.3e}: f={f}")
    return f, g


def _two_loop(q: np.ndarray, S, Y, rho) -> np.ndarray:
    q = q.copy()
    alphas = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
        a = r * (s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
        b = r * (y @ q)
        q += (a - b) * s
    return q


def minimize_box(
    f_and_grad: FunGrad,
    x0,
    lower,
    upper,
    cfg: BoxSolveConfig = ORACLE_CONFIG,
) -> SolveReport:
    """Minimize ``f`` over ``lower <= x <= upper``.

    Parameters
    ----------
    f_and_grad : callable
        Pure function returning ``(f(x), grad f(x))``.
    x0 : array_like
        Starting point, clamped into the box.
    lower, upper : array_like
        Box bounds; infinite entries are allowed.
    cfg : BoxSolveConfig
        Memory, iteration cap, and tolerances.

    Returns
    -------
    SolveReport
        ``converged`` is True iff the projected-gradient inf-norm fell below
        ``cfg.grad_tol``. The returned point always lies in the box.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteError("x0 must be finite")
    lower = np.broadcast_to(lower, x0.shape)
    upper = np.broadcast_to(upper, x0.shape)
    x = project_box(x0, lower, upper)
    f, g = _eval(f_and_grad, x)

    S: deque = deque(maxlen=cfg.memory)
    Y: deque = deque(maxlen=cfg.memory)
    R: deque = deque(maxlen=cfg.memory)
    pg = projected_grad_norm(x, g, lower, upper)
    it = 0
    while it < cfg.max_iters and pg > cfg.grad_tol:
        it += 1
        active = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        gf = np.where(active, 0.0, g)

        accepted = False
        for use_qn in ((True, False) if S else (False,)):
            if use_qn:
                d = -_two_loop(gf, S, Y, R)
                d[active] = 0.0
                if not gf @ d < 0.0:
                    continue
                t = 1.0
            else:
                d = -gf
                t = 1.0 if S else min(1.0, 1.0 / max(np.max(np.abs(gf)), 1e-300))
            for _ in range(cfg.max_backtracks):
                xt = project_box(x + t * d, lower, upper)
                dx = xt - x
                slope = float(g @ dx)
                if slope >= 0.0:
                    t *= cfg.backtrack_factor
                    continue
                ft, gt = _eval(f_and_grad, xt)
                if ft <= f + cfg.armijo_c * slope:
                    accepted = True
                    break
                # f cannot resolve the decrease: use the secant form of Armijo,
                # exact for quadratics along the step
                if abs(ft - f) <= cfg.roundoff * (1.0 + abs(f)) and gt @ dx <= (2.0 * cfg.armijo_c - 1.0) * slope:
                    accepted = True
                    break
                t *= cfg.backtrack_factor
            if accepted:
                break
        if not accepted:
            logger.debug("line search failed at iteration %d (pg=%.3e)", it, pg)
            break

        s = dx
        y = gt - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            R.append(1.0 / sy)
        else:
            S.clear()
            Y.clear()
            R.clear()
        x, f, g = xt, ft, gt
        pg = projected_grad_norm(x, g, lower, upper)

    return SolveReport(
        x=x,
        iterations=it,
        final_projected_grad_norm=pg,
        converged=pg <= cfg.grad_tol,
        objective_value=f,
    )


def minimize_unconstrained(f_and_grad: FunGrad, x0, cfg: BoxSolveConfig = ORACLE_CONFIG) -> SolveReport:
    x0 = np.asarray(x0, dtype=np.float64)
    inf = np.full(x0.shape, np.inf)
    return minimize_box(f_and_grad, x0, -inf, inf, cfg)
