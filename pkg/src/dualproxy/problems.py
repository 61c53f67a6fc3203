"""Parametric problem families and instance datasets.

Two families share the constraint set ``A x = b, lower <= x <= upper``:

* ``Mode.CONVEX_QP``:      f_c(x) = x^T Q x + c^T x
* ``Mode.NONCONVEX_SIN``:  f_c(x) = x^T Q x + c^T sin(x)

The cost vector ``c`` is the instance parameter.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg


class Mode(str, enum.Enum):
    CONVEX_QP = "convex_qp"
    NONCONVEX_SIN = "nonconvex_sin"


class GenerationError(RuntimeError):
    """Raised when a random family cannot be made to satisfy its invariants."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemFamily:
    Q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mode: Mode = Mode.CONVEX_QP
    witness: np.ndarray | None = None

    def __post_init__(self):
        Q, A, b = _frozen(self.Q), _frozen(np.atleast_2d(self.A)), _frozen(np.atleast_1d(self.b))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {Q.shape}")
        if A.shape[1] != n or b.shape != (A.shape[0],):
            raise ValueError(f"inconsistent shapes Q{Q.shape} A{A.shape} b{b.shape}")
        lower = _frozen(np.broadcast_to(self.lower, (n,)))
        upper = _frozen(np.broadcast_to(self.upper, (n,)))
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.witness is not None:
            object.__setattr__(self, "witness", _frozen(self.witness))

    @classmethod
    def from_arrays(cls, Q, A, b, lower=0.0, upper=np.inf, mode=Mode.CONVEX_QP, witness=None):
        return cls(Q=Q, A=A, b=b, lower=lower, upper=upper, mode=mode, witness=witness)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def is_standard_box(self) -> bool:
        """True when the box is exactly ``x >= 0`` (both paper benchmarks)."""
        return bool(np.all(self.lower == 0.0) and np.all(np.isposinf(self.upper)))

    @property
    def m(self) -> int:
        """Number of inequality rows produced by :func:`inequality_residual`."""
        return int(np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())

    @cached_property
    def chol_2q(self):
        """Cholesky factor of 2Q, used by every closed-form Lagrangian solve."""
        return scipy.linalg.cho_factor(2.0 * self.Q, lower=True)

    @cached_property
    def inv_2q(self) -> np.ndarray:
        inv = scipy.linalg.cho_solve(self.chol_2q, np.eye(self.n))
        inv = 0.5 * (inv + inv.T)
        inv.setflags(write=False)
        return inv

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.mode.value.encode())
        for a in (self.Q, self.A, self.b, self.lower, self.upper):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ProblemInstance:
    c: np.ndarray
    index: int


@dataclass(eq=False)
class Dataset:
    family: ProblemFamily
    train: list[ProblemInstance]
    test: list[ProblemInstance]
    seed: int
    split: float = 0.8
    low: float = -20.0
    high: float = 20.0
    _cache: dict = field(default_factory=dict, repr=False)

    def costs(self, part: str) -> np.ndarray:
        """Stack the cost vectors of ``part`` ('train' or 'test') into a matrix."""
        if part not in self._cache:
            insts = getattr(self, part)
            mat = np.array([i.c for i in insts], dtype=np.float64).reshape(len(insts), self.family.n)
            mat.setflags(write=False)
            self._cache[part] = mat
        return self._cache[part]

    def indices(self, part: str) -> np.ndarray:
        return np.array([i.index for i in getattr(self, part)], dtype=np.int64)


def generate_family(
    seed: int,
    n: int,
    p: int,
    mode: Mode | str = Mode.CONVEX_QP,
    eps_q: float = 0.1,
    max_retries: int = 20,
) -> ProblemFamily:
    """Draw a random family with SPD ``Q`` and a feasible ``{Ax = b, x >= 0}``.

    ``Q = M^T M / n + eps_q I`` with ``M ~ U[0,1]``, ``A ~ U[-1,1]`` (redrawn
    until full row rank) and ``b = A x0`` for a witness ``x0 ~ U[0,1]``.
    """
    if n < 1 or p < 1 or p >= n:
        raise ValueError(f"need 1 <= p < n, got n={n}, p={p}")
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.0, 1.0, size=(n, n))
    Q = M.T @ M / n + eps_q * np.eye(n)
    Q = 0.5 * (Q + Q.T)
    for _ in range(max_retries):
        A = rng.uniform(-1.0, 1.0, size=(p, n))
        if np.linalg.matrix_rank(A) == p:
            break
    else:
        raise GenerationError(f"A stayed rank deficient after {max_retries} draws")
    x0 = rng.uniform(0.0, 1.0, size=n)
    b = A @ x0
    fam = ProblemFamily(Q=Q, A=A, b=b, lower=np.zeros(n), upper=np.full(n, np.inf), mode=mode, witness=x0)
    try:
        fam.chol_2q
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eps_q > 0 prevents this
        raise GenerationError("Q is not positive definite") from exc
    return fam


def generate_dataset(
    family: ProblemFamily,
    count: int,
    low: float = -20.0,
    high: float = 20.0,
    seed: int = 0,
    split: float = 0.8,
) -> Dataset:
    if count < 2:
        raise ValueError("count must be at least 2")
    if not low < high:
        raise ValueError("need low < high")
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    C = rng.uniform(low, high, size=(count, family.n))
    np.clip(C, low, high, out=C)
    n_train = int(round(count * split))
    instances = [ProblemInstance(c=_frozen(C[i]), index=i) for i in range(count)]
    return Dataset(
        family=family,
        train=instances[:n_train],
        test=instances[n_train:],
        seed=seed,
        split=split,
        low=low,
        high=high,
    )


def _check_x(family: ProblemFamily, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != family.n:
        raise ValueError(f"x has trailing dimension {x.shape[-1]}, expected {family.n}")
    return x


def _check_c(family: ProblemFamily, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != family.n:
        raise ValueError(f"c has trailing dimension {c.shape[-1]}, expected {family.n}")
    return c


def objective(family: ProblemFamily, c, x):
    """Objective value; ``c`` and ``x`` may carry matching leading batch axes."""
    c, x = _check_c(family, c), _check_x(family, x)
    quad = np.einsum("...i,ij,...j->...", x, family.Q, x)
    if family.mode is Mode.CONVEX_QP:
        return quad + np.sum(c * x, axis=-1)
    return quad + np.sum(c * np.sin(x), axis=-1)


def objective_grad(family: ProblemFamily, c, x) -> np.ndarray:
    c, x = _check_c(family, c), _check_x(family, x)
    g = 2.0 * x @ family.Q
    if family.mode is Mode.CONVEX_QP:
        return g + c
    return g + c * np.cos(x)


def equality_residual(family: ProblemFamily, x) -> np.ndarray:
    """h(x) = A x - b."""
    x = _check_x(family, x)
    return x @ family.A.T - family.b


def inequality_residual(family: ProblemFamily, x) -> np.ndarray:
    """g(x) <= 0 form of the box: ``lower - x`` then ``x - upper`` on finite bounds.

    For the standard ``x >= 0`` box this is simply ``-x``.
    """
    x = _check_x(family, x)
    lo = np.isfinite(family.lower)
    up = np.isfinite(family.upper)
    if np.all(lo) and not np.any(up):
        return family.lower - x
    return np.concatenate([(family.lower - x)[..., lo], (x - family.upper)[..., up]], axis=-1)
