import math

import numpy as np
import pytest

from revdiff.measures import (
    GaussianLaw,
    PointCloudMeasure,
    gaussian_oracle,
    make_manifold_cloud,
    point_cloud_oracle,
    point_mass_oracle,
    spawn_rng,
)
from revdiff.metrics import (
    concentration_curve,
    discretization_error_meter,
    gaussian_kl,
    increment_quadrature,
    kl_experiment,
    marginal_law,
    martingale_checks,
    monotonicity_check,
    propagate_affine_reverse,
    score_error_budget,
)
from revdiff.sampler import ReverseRunConfig, ScorePerturbation
from revdiff.schedule import build_schedule


def rank_law(D, d, var=0.25, mean=None, seed=0, floor=0.0):
    rng = spawn_rng(seed, 77)
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    fac = q[:, :d] * math.sqrt(var)
    mean = np.zeros(D) if mean is None else np.asarray(mean, dtype=float)
    return GaussianLaw(mean=mean, factor=fac, diag_floor=floor)


# ---------------------------------------------------------------------------
# gaussian_kl
# ---------------------------------------------------------------------------


def test_kl_identical_laws_is_zero():
    law = rank_law(5, 2, floor=0.4)
    assert abs(gaussian_kl(law, law)) <= 1e-12


def test_kl_mean_shift_formula():
    m = np.array([0.3, -1.2, 0.5])
    p = GaussianLaw.isotropic(3)
    q = GaussianLaw.isotropic(3, mean=m)
    assert abs(gaussian_kl(p, q) - 0.5 * float(m @ m)) < 1e-12


def test_kl_variance_ratio_formula():
    p = GaussianLaw.isotropic(2, variance=2.0)
    q = GaussianLaw.isotropic(2, variance=1.0)
    assert abs(gaussian_kl(p, q) - (1.0 - math.log(2.0))) < 1e-12


def test_kl_nonnegative_randomized():
    rng = spawn_rng(1, 0)
    for i in range(20):
        p = rank_law(4, rng.integers(0, 3), var=float(rng.uniform(0.1, 2)), seed=i, floor=0.2)
        q = rank_law(4, rng.integers(0, 3), var=float(rng.uniform(0.1, 2)), seed=i + 100, floor=0.5)
        p = GaussianLaw(rng.standard_normal(4), p.factor, p.diag_floor)
        assert gaussian_kl(p, q) >= -1e-13


def test_kl_matches_dense_formula():
    p = rank_law(4, 2, var=0.5, seed=3, floor=0.3)
    q = rank_law(4, 1, var=1.5, seed=4, floor=0.8)
    p = GaussianLaw(np.array([0.1, 0.0, -0.2, 0.4]), p.factor, p.diag_floor)
    sp, sq = p.covariance(), q.covariance()
    dm = q.mean - p.mean
    dense = 0.5 * (
        np.trace(np.linalg.solve(sq, sp))
        + dm @ np.linalg.solve(sq, dm)
        - 4
        + np.linalg.slogdet(sq)[1]
        - np.linalg.slogdet(sp)[1]
    )
    assert abs(gaussian_kl(p, q) - dense) < 1e-11


def test_kl_rejects_singular_reference():
    p = GaussianLaw.isotropic(3)
    q = rank_law(3, 1, floor=0.0)
    with pytest.raises(ValueError, match="floor"):
        gaussian_kl(p, q)


def test_kl_singular_argument_is_infinite():
    p = rank_law(3, 1, floor=0.0)
    q = GaussianLaw.isotropic(3)
    assert gaussian_kl(p, q) == math.inf


def test_marginal_law_large_time_is_standard_normal():
    law = rank_law(3, 2, var=0.7, mean=np.array([1.0, 0.0, -1.0]))
    m = marginal_law(law, 20.0)
    assert abs(gaussian_kl(m, GaussianLaw.isotropic(3))) < 1e-12


# ---------------------------------------------------------------------------
# exact propagation
# ---------------------------------------------------------------------------


def test_channel_and_dense_propagation_agree():
    sched = build_schedule(0.2, 5, 15)
    law = rank_law(5, 2, var=0.5, mean=np.array([0.2, 0.0, -0.1, 0.3, 0.0]), floor=0.1)
    pert = ScorePerturbation(epsilon=0.05, constant=np.array([1.0, -0.5, 0.0, 0.2, 0.1]))
    for src in ("exact", pert):
        for init in ("standard_normal", "data_pT"):
            cfg = ReverseRunConfig(schedule=sched, score_source=src, init=init)
            fast = propagate_affine_reverse(law, cfg)
            # dense path is forced by attaching a zero linear bias
            eps = src.epsilon if isinstance(src, ScorePerturbation) else 1.0
            const = src.constant if isinstance(src, ScorePerturbation) else None
            dense_src = ScorePerturbation(
                epsilon=eps,
                constant=const if const is not None else np.zeros(5),
                linear=np.zeros((5, 5)),
            )
            cfg_dense = ReverseRunConfig(schedule=sched, score_source=dense_src, init=init)
            dense = propagate_affine_reverse(law, cfg_dense)
            np.testing.assert_allclose(fast.mean, dense.mean, atol=1e-11)
            np.testing.assert_allclose(fast.covariance(), dense.covariance(), atol=1e-11)


def test_point_mass_exactness_from_true_initialization():
    sched = build_schedule(0.2, 10, 40)
    y0 = np.array([0.6, -0.2, 0.1, 0.0])
    cfg = ReverseRunConfig(schedule=sched, init="data_pT")
    out = propagate_affine_reverse(GaussianLaw.point_mass(y0), cfg)
    delta = sched.early_stop
    c, s2 = math.exp(-delta), -math.expm1(-2 * delta)
    np.testing.assert_allclose(out.mean, c * y0, atol=1e-10)
    np.testing.assert_allclose(out.covariance(), s2 * np.eye(4), atol=1e-10)


def test_kl_experiment_ambient_dimension_insensitivity():
    # with T >= 10 the initialization contribution is ~1e-9, so KL at two
    # ambient dimensions agrees to well below 1e-6
    kls = []
    for D in (4, 64):
        sched = build_schedule(0.2, 45, 121)
        law = rank_law(D, 2, var=0.25, seed=5)
        kls.append(kl_experiment(law, ReverseRunConfig(schedule=sched)).value)
    assert abs(kls[0] - kls[1]) < 1e-6


def test_kl_tensorization_exact():
    sched = build_schedule(0.2, 10, 30)
    single = GaussianLaw(mean=np.array([0.3]), factor=np.array([[0.5]]))
    kl_one = kl_experiment(single, ReverseRunConfig(schedule=sched)).value
    for d in (2, 4, 7):
        prod = GaussianLaw(
            mean=np.full(d, 0.3), factor=0.5 * np.eye(d), diag_floor=0.0
        )
        kl_d = kl_experiment(prod, ReverseRunConfig(schedule=sched)).value
        assert abs(kl_d - d * kl_one) < 1e-10


def test_ei_terminal_kl_grows_with_ambient_dimension():
    sched = build_schedule(0.2, 45, 121)
    kls = []
    for D in (8, 64):
        law = rank_law(D, 2, var=0.25, seed=6)
        cfg = ReverseRunConfig(schedule=sched, scheme="exponential_integrator", init="data_pT")
        kls.append(kl_experiment(law, cfg).value)
    assert kls[1] > 2.0 * kls[0]


def test_propagation_mc_cross_check_rank2():
    from revdiff.sampler import run_reverse

    sched = build_schedule(0.2, 10, 30)
    law = rank_law(8, 2, var=0.5, seed=7)
    cfg = ReverseRunConfig(schedule=sched, batch=50_000, seed=29)
    exact = propagate_affine_reverse(law, cfg)
    res = run_reverse(cfg, gaussian_oracle(law))
    n = cfg.batch
    var_exact = np.diag(exact.covariance())
    np.testing.assert_allclose(
        res.terminal.mean(axis=0), exact.mean, atol=3.5 * math.sqrt(var_exact.max() / n)
    )
    np.testing.assert_allclose(
        res.terminal.var(axis=0, ddof=1), var_exact, rtol=3.5 * math.sqrt(2.0 / n)
    )


# ---------------------------------------------------------------------------
# discretization error meter
# ---------------------------------------------------------------------------


def test_meter_point_mass_is_zero():
    sched = build_schedule(0.2, 4, 12)
    oracle = point_mass_oracle(np.array([0.5, 0.2]))
    rng = spawn_rng(9, 0)
    rep = discretization_error_meter(oracle, sched, 400, rng)
    assert rep.value == 0.0
    assert rep.stderr == 0.0


def test_meter_exact_matches_mc_for_gaussian():
    sched = build_schedule(0.25, 3, 10)
    law = rank_law(2, 1, var=0.25, seed=8)
    oracle = gaussian_oracle(law)
    exact = discretization_error_meter(oracle, sched, 0, None, mode="exact")
    rng = spawn_rng(10, 0)
    mc = discretization_error_meter(oracle, sched, 4000, rng)
    assert abs(mc.value - exact.value) <= 3.5 * mc.stderr
    assert exact.stderr == 0.0 and exact.n_samples == 0


def test_meter_exact_tensorizes():
    sched = build_schedule(0.2, 5, 18)
    one = GaussianLaw(mean=np.zeros(1), factor=np.array([[0.5]]))
    base = discretization_error_meter(gaussian_oracle(one), sched, 0, None, mode="exact").value
    for d in (2, 5):
        prod = GaussianLaw(mean=np.zeros(d), factor=0.5 * np.eye(d))
        val = discretization_error_meter(gaussian_oracle(prod), sched, 0, None, mode="exact").value
        assert abs(val - d * base) < 1e-10


def test_meter_mc_matches_quadrature_for_two_point():
    sched = build_schedule(0.25, 2, 8)
    cloud = PointCloudMeasure.uniform(np.array([[-0.5], [0.5]]))
    oracle = point_cloud_oracle(cloud)
    rng = spawn_rng(11, 0)
    mc = discretization_error_meter(oracle, sched, 20_000, rng)
    total = 0.0
    for k in range(sched.n_steps):
        tau_hi, tau_lo = float(sched.taus[k]), float(sched.taus[k + 1])
        w = float(sched.gammas[k]) * math.exp(-2 * tau_lo) / (-math.expm1(-2 * tau_lo)) ** 2
        total += w * increment_quadrature(oracle, tau_lo, tau_hi)
    assert abs(mc.value - total) <= 3.0 * mc.stderr


def test_meter_midpoint_mode_runs_and_is_comparable():
    sched = build_schedule(0.25, 3, 10)
    law = rank_law(2, 1, var=0.25, seed=12)
    oracle = gaussian_oracle(law)
    right = discretization_error_meter(oracle, sched, 0, None, mode="exact").value
    mid = discretization_error_meter(oracle, sched, 0, None, mode="exact", quadrature="midpoint").value
    assert 0.0 < mid < right  # midpoint weight and increment are both smaller


def test_meter_reports_offending_step_on_floor_violation():
    # delta below the oracle floor: the last steps must be named in the error
    sched = build_schedule(0.2, 4, 120)
    assert sched.early_stop < 1e-8
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(np.array([[-0.5], [0.5]])))
    rng = spawn_rng(13, 0)
    with pytest.raises(ValueError, match="step k="):
        discretization_error_meter(oracle, sched, 200, rng)


def test_meter_requires_samples_and_rng():
    sched = build_schedule(0.2, 4, 12)
    oracle = point_mass_oracle(np.zeros(1))
    with pytest.raises(ValueError):
        discretization_error_meter(oracle, sched, 50, spawn_rng(0, 0))
    with pytest.raises(ValueError):
        discretization_error_meter(oracle, sched, 500, None)
    with pytest.raises(ValueError):
        discretization_error_meter(oracle, sched, 0, None, mode="exact")


# ---------------------------------------------------------------------------
# martingale and monotonicity checks
# ---------------------------------------------------------------------------


def test_martingale_degenerate_triple_residual_is_identically_zero():
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(np.array([[-0.5], [0.5]])))
    rng = spawn_rng(14, 0)
    rep = martingale_checks(oracle, 0.0, 0.4, 0.4, 2000, rng)
    assert rep.value == 0.0
    assert rep.stderr == 0.0


def test_martingale_residual_within_band_two_point():
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(np.array([[-0.5], [0.5]])))
    rng = spawn_rng(15, 0)
    rep = martingale_checks(oracle, 0.0, 0.25, 1.0, 100_000, rng)
    assert abs(rep.value) <= 3.0 * rep.stderr


def test_martingale_increments_match_gaussian_closed_form():
    law = rank_law(2, 1, var=0.25, seed=16)
    oracle = gaussian_oracle(law)
    rng = spawn_rng(17, 0)
    t1, t2, t3 = 0.1, 0.4, 1.1
    rep = martingale_checks(oracle, t1, t2, t3, 120_000, rng)

    def postvar(t):
        ch_var = 0.25
        c2, s2 = math.exp(-2 * t), -math.expm1(-2 * t)
        return ch_var * s2 / (c2 * ch_var + s2)

    closed = {
        0: postvar(t3) - postvar(t1),
        1: postvar(t3) - postvar(t2),
        2: postvar(t2) - postvar(t1),
    }
    for (i, _, val, se) in rep.components:
        assert abs(val - closed[i]) <= 3.5 * se
    assert abs(rep.value) <= 3.0 * rep.stderr
    assert rep.extras["tower_residual"] < 0.05


def test_martingale_rejects_bad_ordering():
    oracle = point_mass_oracle(np.zeros(1))
    rng = spawn_rng(18, 0)
    with pytest.raises(ValueError):
        martingale_checks(oracle, 0.5, 0.2, 1.0, 100, rng)


def test_monotonicity_point_mass_terms_vanish():
    oracle = point_mass_oracle(np.array([0.3]))
    rng = spawn_rng(19, 0)
    rep = monotonicity_check(oracle, 0.1, 0.3, 0.8, 1000, rng)
    assert rep.value == 0.0
    for (_, _, val, _) in rep.components:
        assert val == 0.0


def test_monotonicity_two_point_difference_nonnegative():
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(np.array([[-0.5], [0.5]])))
    rng = spawn_rng(20, 0)
    rep = monotonicity_check(oracle, 0.1, 0.3, 0.8, 100_000, rng)
    assert rep.value >= -3.0 * rep.stderr


def test_weight_prefactor_is_decreasing():
    # d/dt of c^2 / sigma^4 is negative; spot check by central differences
    def pref(t):
        return math.exp(-2 * t) / (-math.expm1(-2 * t)) ** 2

    h = 1e-6
    for t in (0.1, 1.0, 3.0):
        assert (pref(t + h) - pref(t - h)) / (2 * h) < 0.0


# ---------------------------------------------------------------------------
# concentration
# ---------------------------------------------------------------------------


def test_concentration_point_mass_is_zero_everywhere():
    oracle = point_mass_oracle(np.array([0.2, -0.2]))
    rng = spawn_rng(21, 0)
    rep = concentration_curve(oracle, [0.01, 0.1, 1.0], 500, rng)
    for (_, _, val, _) in rep.components:
        assert val == 0.0


def test_concentration_circle_bounded_and_normalized():
    rng = spawn_rng(22, 0)
    cloud, spec = make_manifold_cloud("circle", D=2, n=1024, rng=rng)
    oracle = point_cloud_oracle(cloud).with_manifold(spec)
    rep = concentration_curve(oracle, [1e-3, 1e-2, 1e-1], 20_000, rng)
    for (_, _, val, se) in rep.components:
        assert val <= 1.0 + 3 * se
    assert any(k.startswith("ratio@") for k in rep.extras)
    assert rep.extras["min_increment_z"] > -3.0


def test_concentration_without_spec_has_no_ratios():
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(np.array([[-0.5], [0.5]])))
    rng = spawn_rng(23, 0)
    rep = concentration_curve(oracle, [0.01, 0.1], 2000, rng)
    assert not any(k.startswith("ratio@") for k in rep.extras)


# ---------------------------------------------------------------------------
# score-error budget
# ---------------------------------------------------------------------------


def test_budget_zero_bias():
    sched = build_schedule(0.2, 5, 15)
    law = rank_law(3, 1, var=0.25, seed=24)
    bias = ScorePerturbation(epsilon=0.0, constant=np.array([1.0, 0.0, 0.0]))
    rep = score_error_budget(law, bias, sched)
    assert rep.value == 0.0
    assert abs(rep.extras["kl_excess"]) < 1e-14


def test_budget_constant_bias_quadratic_homogeneity():
    sched = build_schedule(0.2, 5, 15)
    law = rank_law(3, 1, var=0.25, seed=25)
    a = np.array([0.6, -0.2, 0.1])
    rep1 = score_error_budget(law, ScorePerturbation(epsilon=0.01, constant=a), sched)
    rep2 = score_error_budget(law, ScorePerturbation(epsilon=0.02, constant=a), sched)
    assert abs(rep2.value - 4.0 * rep1.value) < 1e-12
    assert abs(rep1.value - 0.01**2 * float(a @ a) * float(sched.gammas.sum())) < 1e-12


def test_budget_kl_excess_slope_is_two():
    sched = build_schedule(0.2, 45, 121)
    law = rank_law(4, 1, var=0.25, seed=26)
    a = np.array([1.0, 0.0, 0.0, 0.0])
    eps = [0.01, 0.02, 0.04, 0.08]
    dkl = [
        score_error_budget(law, ScorePerturbation(epsilon=e, constant=a), sched).extras["kl_excess"]
        for e in eps
    ]
    slope = np.polyfit(np.log(eps), np.log(dkl), 1)[0]
    assert abs(slope - 2.0) <= 0.2


def test_budget_linear_bias_uses_dense_path():
    sched = build_schedule(0.2, 4, 12)
    law = rank_law(3, 1, var=0.25, seed=27)
    bias = ScorePerturbation(epsilon=0.05, linear=np.diag([1.0, 0.5, 0.0]))
    rep = score_error_budget(law, bias, sched)
    assert rep.value > 0.0
    assert rep.extras["kl_perturbed"] >= 0.0


def test_budget_rejects_non_perturbation():
    sched = build_schedule(0.2, 4, 12)
    law = rank_law(2, 1, seed=28)
    with pytest.raises(ValueError):
        score_error_budget(law, "exact", sched)
