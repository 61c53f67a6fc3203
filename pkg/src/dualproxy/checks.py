"""Finite-difference and cross-solver checks runnable on demand (``dualproxy check``)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxsolve import BoxSolveConfig, minimize_box, project_box
from .lagrangian import DualEstimate, dual_function, dual_gradients
from .neural import init_xavier
from .oracle import classical_alm, kkt_check, projected_dual_ascent_batch
from .problems import Mode, generate_dataset, generate_family, objective, objective_grad

FAULTS = ("dual_grad_sign", "backprop_scale", "objective_grad_sign")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} {self.detail}"


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def central_diff(fun, x, h=1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _kink_aware_diff(net, p, X, G, train, h=1e-4, min_h=1e-7) -> np.ndarray:
    """Five-point differences of ``sum(G * net(X))`` in ``p``.

    The step is shrunk for any element whose probes flip a ReLU activation
    pattern, since a stencil straddling a kink measures a one-sided slope.
    """

    def probe(flat_i, t):
        saved = p.flat[flat_i]
        p.flat[flat_i] = saved + t
        out, cache = net.forward(X, train=train)
        p.flat[flat_i] = saved
        return float(np.sum(G * out)), [z > 0 for z in cache.pre_relu]

    base = [z > 0 for z in net.forward(X, train=train)[1].pre_relu]
    fd = np.zeros_like(p)
    for i in range(p.size):
        step = h
        while True:
            vals, pats = zip(*(probe(i, k * step) for k in (-2, -1, 1, 2)))
            smooth = all(np.array_equal(a, b) for pat in pats for a, b in zip(pat, base))
            if smooth or step <= min_h:
                break
            step /= 10
        fd.flat[i] = (8 * (vals[2] - vals[1]) - (vals[3] - vals[0])) / (12 * step)
    return fd


def network_gradcheck(seed: int, dims, batch: int = 3, batchnorm: bool = True, train: bool = True, fault=None):
    """Worst relative error between backprop and central differences over all parameter tensors."""
    rng = np.random.default_rng(seed)
    net = init_xavier(seed, dims, batchnorm=batchnorm)
    for gam, bet in zip(net.gamma, net.beta):
        gam[...] = rng.uniform(0.5, 1.5, gam.shape)
        bet[...] = rng.normal(0.0, 0.5, bet.shape)
    for b in net.b:
        b[...] = rng.normal(0.0, 0.5, b.shape)
    if batchnorm and not train:
        for rm, rv in zip(net.running_mean, net.running_var):
            rm[...] = rng.normal(0.0, 0.5, rm.shape)
            rv[...] = rng.uniform(0.5, 2.0, rv.shape)
    X = rng.normal(size=(batch, dims[0]))
    G = rng.normal(size=(batch, dims[-1]))
    out, cache = net.forward(X, train=train)
    grads = net.backward(cache, G)
    if fault == "backprop_scale":
        grads = [1.01 * g for g in grads]
    scale = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        fd = _kink_aware_diff(net, p, X, G, train)
        if np.linalg.norm(g) > 1e-12 * scale or scale == 0:
            worst = max(worst, rel_err(g, fd))
        else:
            # biases feeding train-mode batch norm have a zero gradient (up to roundoff);
            # measure the difference against the whole gradient instead
            worst = max(worst, float(np.linalg.norm(fd)) / scale)
    return worst


def check_network_gradients(quick: bool, fault=None) -> CheckResult:
    cases = 4 if quick else 20
    worst = 0.0
    for s in range(cases):
        rng = np.random.default_rng(1000 + s)
        dims = [int(d) for d in rng.integers(2, 9, size=int(rng.integers(2, 5)))]
        for bn in (True, False):
            worst = max(worst, network_gradcheck(s, dims, batchnorm=bn, train=True, fault=fault))
        worst = max(worst, network_gradcheck(s, dims, batchnorm=True, train=False, fault=fault))
    return CheckResult("network_gradients", worst <= 1e-5, f"max rel err {worst:.2e} over {cases} nets")


def check_objective_gradients(quick: bool, fault=None) -> CheckResult:
    worst = 0.0
    for mode in Mode:
        fam = generate_family(3, 8, 3, mode)
        rng = np.random.default_rng(4)
        for _ in range(10 if quick else 100):
            c = rng.uniform(-20, 20, fam.n)
            x = rng.uniform(-2, 2, fam.n)
            g = objective_grad(fam, c, x)
            if fault == "objective_grad_sign":
                g = -g
            fd = central_diff(lambda v: objective(fam, c, v), x)
            worst = max(worst, rel_err(g, fd))
    return CheckResult("objective_gradients", worst <= 1e-6, f"max rel err {worst:.2e}")


def check_dual_gradients(quick: bool, fault=None) -> CheckResult:
    fam = generate_family(5, 10, 4)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10 if quick else 50):
        c = rng.uniform(-20, 20, fam.n)
        lam = rng.uniform(0.5, 5.0, fam.m)
        nu = rng.normal(0.0, 5.0, fam.p)
        _, rec = dual_function(fam, c, DualEstimate(lam, nu))
        g_lam, g_nu = dual_gradients(fam, c, rec)
        if fault == "dual_grad_sign":
            g_nu = -g_nu
        z = np.concatenate([lam, nu])

        def d_of(v):
            return dual_function(fam, c, DualEstimate(v[: fam.m], v[fam.m :]))[0]

        worst = max(worst, rel_err(np.concatenate([g_lam, g_nu]), central_diff(d_of, z, h=1e-4)))
    return CheckResult("dual_gradients", worst <= 1e-4, f"max rel err {worst:.2e}")


def check_weak_duality(quick: bool, fault=None) -> CheckResult:
    fam = generate_family(7, 10, 4)
    rng = np.random.default_rng(8)
    worst = -np.inf
    for _ in range(20 if quick else 200):
        c = rng.uniform(-20, 20, fam.n)
        d, _ = dual_function(fam, c, DualEstimate(rng.exponential(2.0, fam.m), rng.normal(0, 10, fam.p)))
        worst = max(worst, d - objective(fam, c, fam.witness))
    return CheckResult("weak_duality", worst <= 1e-9, f"max d - f(x0) = {worst:.3e}")


def check_oracles(quick: bool, fault=None) -> CheckResult:
    n, p, k = (10, 4, 5) if quick else (20, 8, 20)
    fam = generate_family(9, n, p)
    C = generate_dataset(fam, 2 * k, seed=10).costs("train")[:k]
    alm = [classical_alm(fam, c) for c in C]
    pda = projected_dual_ascent_batch(fam, C, tol=1e-8, max_iters=2_000_000)
    dx = max(np.linalg.norm(a.x_star - b.x_star) for a, b in zip(alm, pda))
    kkt = max(kkt_check(fam, c, a) for c, a in zip(C, alm))
    gap = max(abs(a.f_star - a.d_star) / (1 + abs(a.f_star)) for a in alm)
    ok = dx <= 1e-5 and kkt <= 1e-6 and gap <= 1e-6
    return CheckResult("oracle_cross_check", ok, f"|dx|={dx:.1e} kkt={kkt:.1e} gap={gap:.1e} on {k} QPs")


def check_box_solver(quick: bool, fault=None) -> CheckResult:
    rng = np.random.default_rng(11)
    worst, outside = 0.0, False
    for _ in range(10 if quick else 50):
        n = int(rng.integers(2, 30))
        M = rng.normal(size=(n, n))
        H = M @ M.T / n + 0.5 * np.eye(n)
        q = rng.normal(0, 3, n)
        lo = rng.uniform(-1, 0, n)
        hi = lo + rng.uniform(0.1, 2, n)
        rep = minimize_box(lambda x: (0.5 * x @ H @ x + q @ x, H @ x + q), np.zeros(n), lo, hi, BoxSolveConfig(max_iters=2000))
        # projected gradient iteration with step 1/L as an independent reference
        x = project_box(np.zeros(n), lo, hi)
        step = 1.0 / np.linalg.eigvalsh(H)[-1]
        for _ in range(200_000):
            x_new = project_box(x - step * (H @ x + q), lo, hi)
            if np.max(np.abs(x_new - x)) < 1e-14:
                break
            x = x_new
        worst = max(worst, float(np.linalg.norm(rep.x - x)))
        outside |= bool(np.any(rep.x < lo) or np.any(rep.x > hi))
    return CheckResult("box_solver", worst <= 1e-6 and not outside, f"max |dx| {worst:.1e}")


ALL_CHECKS = (
    check_network_gradients,
    check_objective_gradients,
    check_dual_gradients,
    check_weak_duality,
    check_box_solver,
    check_oracles,
)


def run_checks(quick: bool = False, fault: str | None = None) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    return [chk(quick, fault) for chk in ALL_CHECKS]
