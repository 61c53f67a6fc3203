"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Criteria 5-7 train at desk scale (n=20, p=8, 2000 instances, 100 epochs) and
take tens of minutes on one CPU core.
"""

import time

import numpy as np
import pytest

from dualproxy.boxsolve import minimize_box, project_box
from dualproxy.checks import central_diff, network_gradcheck, rel_err
from dualproxy.harness import RunConfig, cmd_gen_data, cmd_oracle, cmd_train
from dualproxy.lagrangian import DualEstimate, closed_form_minimizer, dual_function, dual_gradients, primal_recovery_box
from dualproxy.metrics import Evaluator
from dualproxy.oracle import classical_alm, ground_truth_for, kkt_check, projected_dual_ascent, projected_dual_ascent_batch
from dualproxy.problems import Mode, equality_residual, generate_dataset, generate_family
from dualproxy.training import TrainConfig, run_training

DESK_N, DESK_P, DESK_COUNT, DESK_EPOCHS = 20, 8, 2000, 100
LAST_WINDOW = 20


def test_criterion_1_network_gradients(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        dims = [int(d) for d in rng.integers(2, 9, size=int(rng.integers(2, 5)))]
        for bn in (True, False):
            worst = max(worst, network_gradcheck(s, dims, batch=3, batchnorm=bn, train=True))
    dt = time.perf_counter() - t0
    ok = acceptance(1, "backprop vs finite differences", worst <= 1e-5 and dt < 10,
                    f"max rel err {worst:.2e} over 20 nets x {{bn, no bn}}, {dt:.1f} s")
    assert ok


def test_criterion_2_dual_gradients(acceptance):
    t0 = time.perf_counter()
    fam = generate_family(2, 10, 4)
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        c = rng.uniform(-20, 20, 10)
        lam, nu = rng.uniform(0.5, 5.0, fam.m), rng.normal(0.0, 5.0, fam.p)
        _, rec = dual_function(fam, c, DualEstimate(lam, nu))
        g = np.concatenate(dual_gradients(fam, c, rec))
        fd = central_diff(lambda z: dual_function(fam, c, DualEstimate(z[: fam.m], z[fam.m :]))[0],
                          np.concatenate([lam, nu]), h=1e-4)
        worst = max(worst, rel_err(g, fd))
    dt = time.perf_counter() - t0
    ok = acceptance(2, "analytic dual gradients", worst <= 1e-4 and dt < 30,
                    f"max rel err {worst:.2e} on 50 points, {dt:.1f} s")
    assert ok


def test_criterion_3_oracle_certification(acceptance):
    t0 = time.perf_counter()
    fam = generate_family(3, 50, 20)
    C = generate_dataset(fam, 125, seed=4).costs("train")[:100]
    alm = ground_truth_for(fam, C)
    pda = projected_dual_ascent_batch(fam, C, tol=1e-7, max_iters=3_000_000)
    dt = time.perf_counter() - t0
    h = max(np.linalg.norm(equality_residual(fam, g.x_star)) for g in alm)
    kkt = max(kkt_check(fam, c, g) for c, g in zip(C, alm))
    gap = max(abs(g.f_star - g.d_star) / (1 + abs(g.f_star)) for g in alm)
    dx = max(np.linalg.norm(a.x_star - b.x_star) for a, b in zip(alm, pda))
    ok = h <= 1e-9 and kkt <= 1e-6 and gap <= 1e-6 and dx <= 1e-5 and dt < 300
    acceptance(3, "oracle certification n=50 p=20", ok,
               f"|h| {h:.1e}, kkt {kkt:.1e}, rel |f-d| {gap:.1e}, |x_alm - x_pda| {dx:.1e}, {dt:.0f} s")
    assert ok


def test_criterion_4_hand_fixture(acceptance, two_var):
    c = np.zeros(2)
    x_ref, errs = np.array([0.5, 0.5]), {}
    errs["closed form"] = np.abs(closed_form_minimizer(two_var, c, np.zeros(2), np.array([-1.0])) - x_ref).max()
    errs["box ALM step"] = np.abs(primal_recovery_box(two_var, c, np.array([-1.0]), 10.0).x - x_ref).max()
    d, _ = dual_function(two_var, c, DualEstimate(np.zeros(2), np.array([-1.0])))
    errs["dual value"] = abs(d - 0.5)
    for name, gt in (("classical ALM", classical_alm(two_var, c)),
                     ("dual ascent", projected_dual_ascent(two_var, c, alpha=0.5, tol=1e-12))):
        errs[name] = max(np.abs(gt.x_star - x_ref).max(), abs(gt.nu_star[0] + 1), np.abs(gt.lambda_star).max(),
                         abs(gt.f_star - 0.5), abs(gt.d_star - 0.5))
    worst = max(errs.values())
    ok = acceptance(4, "2-variable hand-solved QP through every path", worst <= 1e-8,
                    ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    assert ok


class WindowedEvaluator:
    """Evaluates every epoch inside the final window, plus every 10th epoch."""

    def __init__(self, evaluator, epochs):
        self.evaluator, self.epochs = evaluator, epochs

    def __call__(self, model, epoch, rho):
        if epoch >= self.epochs - LAST_WINDOW or epoch % 10 == 0:
            return self.evaluator(model, epoch, rho)
        return None


def desk_run(mode, method):
    fam = generate_family(0, DESK_N, DESK_P, mode)
    ds = generate_dataset(fam, DESK_COUNT, seed=1)
    t0 = time.perf_counter()
    gts = ground_truth_for(fam, ds.costs("test"))
    t_gt = time.perf_counter() - t0
    ev = WindowedEvaluator(Evaluator(fam, ds.costs("test"), gts, method), DESK_EPOCHS)
    t0 = time.perf_counter()
    _, hist = run_training(ds, TrainConfig(method, epochs=DESK_EPOCHS), ev)
    return [r for r in hist if r is not None], t_gt, time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk_dalm():
    return desk_run(Mode.CONVEX_QP, "dalm")


@pytest.fixture(scope="module")
def desk_dda():
    return desk_run(Mode.CONVEX_QP, "dda")


def window(hist):
    return [r for r in hist if r.epoch >= DESK_EPOCHS - LAST_WINDOW]


@pytest.mark.slow
def test_criterion_5_desk_scale_deep_alm(acceptance, desk_dalm):
    hist, t_gt, t_train = desk_dalm
    final = hist[-1]
    eq = [r.eq_residual_mean for r in window(hist)]
    monotone = all(b <= a for a, b in zip(eq, eq[1:]))
    ok = final.epoch == DESK_EPOCHS and final.eq_residual_mean <= 1e-3 and final.rel_obj_gap_mean <= 1e-2 and monotone
    acceptance(5, "desk-scale Deep ALM", ok,
               f"eq {final.eq_residual_mean:.2e} (<= 1e-3), rel obj gap {final.rel_obj_gap_mean:.2e} (<= 1e-2), "
               f"non-increasing over epochs {DESK_EPOCHS - LAST_WINDOW}-{DESK_EPOCHS}: {monotone}, "
               f"oracle {t_gt:.0f} s + training {t_train / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_deep_alm_beats_dual_ascent(acceptance, desk_dalm, desk_dda):
    dalm, dda = desk_dalm[0][-1], desk_dda[0][-1]
    ratio = dda.dual_gap_mean / max(dalm.dual_gap_mean, 1e-300)
    ok = dalm.epoch == dda.epoch == DESK_EPOCHS and dalm.dual_gap_mean * 10 <= dda.dual_gap_mean
    acceptance(6, "Deep ALM dual gap >= 10x smaller than DDA", ok,
               f"DDA gap {dda.dual_gap_mean:.3e}, Deep ALM gap {dalm.dual_gap_mean:.3e}, ratio {ratio:.1f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_nonconvex_desk_scale(acceptance):
    hist, t_gt, t_train = desk_run(Mode.NONCONVEX_SIN, "dalm")
    final = hist[-1]
    ok = final.epoch == DESK_EPOCHS and final.eq_residual_mean <= 1e-2
    acceptance(7, "nonconvex desk-scale Deep ALM", ok,
               f"eq {final.eq_residual_mean:.2e} (<= 1e-2), solution residual {final.solution_residual_mean:.2e} "
               f"(not gated), oracle {t_gt:.0f} s + training {t_train / 60:.1f} min")
    assert ok


def test_criterion_8_determinism(acceptance, tmp_path):
    cmd_gen_data(tmp_path / "ds.dpx", n=10, p=4, count=200, seed=8)
    cmd_oracle(tmp_path / "ds.dpx", tmp_path / "gt.dpxg", part="test")
    same = {}
    for method in ("dda", "dalm"):
        outs = []
        for k in range(2):
            cfg = RunConfig(dataset=str(tmp_path / "ds.dpx"), ground_truth=str(tmp_path / "gt.dpxg"),
                            out_dir=str(tmp_path / f"{method}{k}"), method=method, epochs=3, hidden=32,
                            strict_serial=True)
            csv_path, model_path = cmd_train(cfg)
            outs.append((csv_path.read_bytes(), model_path.read_bytes()))
        same[method] = outs[0] == outs[1]
    ok = acceptance(8, "strict-serial replay is byte-identical", all(same.values()),
                    ", ".join(f"{m}: {'identical' if v else 'DIFFERENT'}" for m, v in same.items()))
    assert ok


class BoundsRecorder:
    def __init__(self, fun, lower, upper):
        self.fun, self.lower, self.upper = fun, lower, upper
        self.outside = False

    def __call__(self, x):
        self.outside |= bool(np.any(x < self.lower) or np.any(x > self.upper))
        return self.fun(x)


def test_criterion_9_box_solver(acceptance):
    rng = np.random.default_rng(9)
    worst, outside = 0.0, False
    for _ in range(100):
        n = int(rng.integers(1, 51))
        M = rng.normal(size=(n, n))
        H = M @ M.T / n + rng.uniform(0.1, 1.0) * np.eye(n)
        q = rng.normal(0, 5, n)
        lo = rng.uniform(-2, 0, n)
        hi = np.where(rng.random(n) < 0.2, np.inf, lo + rng.uniform(0.05, 3, n))
        fun = BoundsRecorder(lambda x: (0.5 * x @ H @ x + q @ x, H @ x + q), lo, hi)
        rep = minimize_box(fun, rng.normal(0, 3, n), lo, hi)
        outside |= fun.outside or bool(np.any(rep.x < lo) or np.any(rep.x > hi))
        # projected gradient with step 1/L, run until the iterates stop moving
        x, step = project_box(np.zeros(n), lo, hi), 1.0 / np.linalg.eigvalsh(H)[-1]
        for _ in range(1_000_000):
            x_new = project_box(x - step * (H @ x + q), lo, hi)
            if np.max(np.abs(x_new - x)) <= 1e-15:
                break
            x = x_new
        worst = max(worst, float(np.linalg.norm(rep.x - x)))
    ok = acceptance(9, "box solver vs projected gradient", worst <= 1e-6 and not outside,
                    f"max |dx| {worst:.1e} over 100 problems, any point outside box: {outside}")
    assert ok
