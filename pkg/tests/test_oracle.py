import numpy as np
import pytest

from dualproxy.oracle import (
    GroundTruth,
    classical_alm,
    dual_lipschitz,
    ground_truth_for,
    kkt_check,
    multipliers_from_stationarity,
    projected_dual_ascent,
    projected_dual_ascent_batch,
)
from dualproxy.problems import Mode, equality_residual, generate_dataset, generate_family, objective


def assert_two_var_optimum(gt, tol=1e-8):
    np.testing.assert_allclose(gt.x_star, [0.5, 0.5], atol=tol)
    np.testing.assert_allclose(gt.nu_star, [-1.0], atol=tol)
    np.testing.assert_allclose(gt.lambda_star, [0.0, 0.0], atol=tol)
    assert gt.f_star == pytest.approx(0.5, abs=tol)
    assert gt.d_star == pytest.approx(0.5, abs=tol)


def test_alm_two_var_hand_solution(two_var):
    gt = classical_alm(two_var, [0.0, 0.0])
    assert_two_var_optimum(gt)
    assert gt.feasible and gt.status == "converged"
    assert kkt_check(two_var, [0.0, 0.0], gt) <= 1e-9


def test_pda_two_var_hand_solution(two_var):
    gt = projected_dual_ascent(two_var, [0.0, 0.0], alpha=0.5, tol=1e-12)
    assert gt.status == "converged"
    assert_two_var_optimum(gt)


def test_pda_started_at_optimum_does_not_move(two_var):
    gt = projected_dual_ascent(two_var, [0.0, 0.0], alpha=0.5, lam0=[0.0, 0.0], nu0=[-1.0])
    assert gt.iterations == 0
    np.testing.assert_array_equal(gt.nu_star, [-1.0])


def test_pda_overlarge_step_reports_non_convergence():
    fam = generate_family(11, 20, 8)
    c = np.random.default_rng(0).uniform(-20, 20, 20)
    gt = projected_dual_ascent(fam, c, alpha=3.0 / dual_lipschitz(fam), max_iters=20_000)
    assert gt.status == "diverging"
    assert not gt.feasible


def test_kkt_check_sensitivity(two_var):
    good = classical_alm(two_var, [0.0, 0.0])
    bad = GroundTruth(good.x_star + 1e-3, good.nu_star, good.lambda_star, good.f_star, good.d_star, 0.0, True)
    assert kkt_check(two_var, [0.0, 0.0], bad) > 1e-4
    neg = GroundTruth(good.x_star, good.nu_star, np.array([-0.1, 0.0]), good.f_star, good.d_star, 0.0, True)
    assert kkt_check(two_var, [0.0, 0.0], neg) >= 0.1


def test_stationarity_multipliers_only_on_active_bounds(two_var):
    lam = multipliers_from_stationarity(two_var, np.array([3.0, 0.0]), np.array([0.0, 1.0]), np.array([-2.0]))
    # active x1: r1 = 3 - 2 = 1; x2 inactive
    np.testing.assert_allclose(lam, [1.0, 0.0])


@pytest.fixture(scope="module")
def convex_batch():
    fam = generate_family(21, 20, 8)
    C = generate_dataset(fam, 30, seed=22).costs("train")[:20]
    return fam, C, ground_truth_for(fam, C)


def test_alm_certified_with_strong_duality(convex_batch):
    fam, C, gts = convex_batch
    for c, gt in zip(C, gts):
        assert gt.feasible
        assert np.linalg.norm(equality_residual(fam, gt.x_star)) <= 1e-9
        assert kkt_check(fam, c, gt) <= 1e-6
        assert abs(gt.f_star - gt.d_star) <= 1e-6 * (1 + abs(gt.f_star))
        assert gt.f_star <= objective(fam, c, fam.witness) + 1e-9
        assert np.all(gt.lambda_star >= 0)


def test_alm_and_pda_agree(convex_batch):
    fam, C, gts = convex_batch
    pda = projected_dual_ascent_batch(fam, C, tol=1e-9, max_iters=2_000_000)
    for a, b in zip(gts, pda):
        assert np.linalg.norm(a.x_star - b.x_star) <= 1e-5


def test_pda_batch_matches_single_runs(convex_batch):
    fam, C, _ = convex_batch
    batch = projected_dual_ascent_batch(fam, C[:3], tol=1e-7)
    for c, gt in zip(C[:3], batch):
        single = projected_dual_ascent(fam, c, tol=1e-7)
        # batched matrix products round differently from single rows
        np.testing.assert_allclose(gt.x_star, single.x_star, rtol=0, atol=1e-12)
        assert abs(gt.iterations - single.iterations) <= 1


def test_pda_rejects_nonconvex_family():
    with pytest.raises(ValueError):
        projected_dual_ascent(generate_family(0, 4, 2, Mode.NONCONVEX_SIN), np.zeros(4))


def test_nonconvex_alm_local_certificate():
    fam = generate_family(31, 12, 5, Mode.NONCONVEX_SIN)
    C = generate_dataset(fam, 10, seed=32).costs("train")[:5]
    for i, c in enumerate(C):
        gt = classical_alm(fam, c, start_seed=i)
        assert gt.feasible
        assert kkt_check(fam, c, gt) <= 1e-5
        assert gt.f_star <= objective(fam, c, fam.witness) + 1e-9


def test_multistart_keeps_best_feasible_run():
    fam = generate_family(31, 12, 5, Mode.NONCONVEX_SIN)
    c = generate_dataset(fam, 10, seed=32).costs("train")[0]
    best = classical_alm(fam, c, n_starts=8)
    single = classical_alm(fam, c, n_starts=1)
    assert best.f_star <= single.f_star + 1e-12
