import math

import numpy as np
import pytest

from revdiff.measures import (
    GaussianLaw,
    PointCloudMeasure,
    forward_bridge,
    forward_sample,
    gaussian_oracle,
    load_cloud,
    make_manifold_cloud,
    point_cloud_oracle,
    point_mass_oracle,
    product_oracle,
    save_cloud,
    spawn_rng,
)

LN2 = math.log(2.0)


def two_point_cloud(sep=1.0, dim=1):
    pts = np.zeros((2, dim))
    pts[0, 0] = -sep / 2
    pts[1, 0] = sep / 2
    return PointCloudMeasure.uniform(pts)


# ---------------------------------------------------------------------------
# point mass
# ---------------------------------------------------------------------------


def test_point_mass_score_at_origin_data():
    oracle = point_mass_oracle(np.zeros(3))
    x = np.array([0.4, -1.0, 2.0])
    np.testing.assert_allclose(oracle.score(0.3, x), -x / (-math.expm1(-0.6)))
    np.testing.assert_allclose(oracle.score(0.3, np.zeros(3)), 0.0)


def test_point_mass_score_basis_vector():
    # (c * y0 - x) / sigma2 at t = ln 2, x = 0: 0.5 / 0.75 = 2/3
    oracle = point_mass_oracle(np.array([1.0, 0.0]))
    np.testing.assert_allclose(oracle.score(LN2, np.zeros(2)), [2.0 / 3.0, 0.0], atol=1e-15)


def test_point_mass_rejects_small_times():
    oracle = point_mass_oracle(np.zeros(2))
    for t in (0.0, 1e-9, -1.0):
        with pytest.raises(ValueError):
            oracle.score(t, np.zeros(2))


def test_point_mass_rejects_nonfinite_points():
    with pytest.raises(ValueError):
        point_mass_oracle(np.array([np.inf, 0.0]))
    oracle = point_mass_oracle(np.zeros(2))
    with pytest.raises(ValueError):
        oracle.score(0.5, np.array([np.nan, 0.0]))


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------


def test_cloud_weight_validation():
    pts = np.zeros((2, 1))
    with pytest.raises(ValueError):
        PointCloudMeasure(pts, np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        PointCloudMeasure(pts, np.array([1.5, -0.5]))


def test_symmetric_two_point_posterior_mean_is_zero():
    oracle = point_cloud_oracle(two_point_cloud())
    for t in (0.05, 0.5, 2.0):
        np.testing.assert_allclose(oracle.posterior_mean(t, np.zeros(1)), 0.0, atol=1e-14)


def test_single_point_cloud_matches_point_mass():
    y0 = np.array([0.3, -0.7])
    cloud = PointCloudMeasure.uniform(y0[None, :])
    pc = point_cloud_oracle(cloud)
    pm = point_mass_oracle(y0)
    rng = np.random.default_rng(5)
    for t in (0.03, 0.4, 1.7):
        x = rng.standard_normal((4, 2))
        np.testing.assert_allclose(pc.posterior_mean(t, x), pm.posterior_mean(t, x), atol=1e-12)
        np.testing.assert_allclose(pc.score(t, x), pm.score(t, x), atol=1e-10)
        np.testing.assert_allclose(pc.log_marginal(t, x), pm.log_marginal(t, x), atol=1e-10)


def test_two_point_posterior_matches_bruteforce_softmax():
    # data {0, e1}, equal weights, queried off the symmetry point
    pts = np.array([[0.0], [1.0]])
    oracle = point_cloud_oracle(PointCloudMeasure.uniform(pts))
    t, x = LN2, np.array([0.25])
    c, s2 = 0.5, 0.75
    logw = -((x - c * pts[:, 0]) ** 2) / (2 * s2)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    expected = w @ pts[:, 0]
    np.testing.assert_allclose(oracle.posterior_mean(t, x), [expected], atol=1e-14)
    # the brute-force weights at this point are equal, so the mean is 1/2
    np.testing.assert_allclose(expected, 0.5, atol=1e-14)


def test_cloud_log_weights_do_not_underflow_to_nan():
    # a faraway query must stay finite through the log-sum-exp path
    cloud = two_point_cloud()
    oracle = point_cloud_oracle(cloud)
    x = np.array([300.0])
    t = 0.01
    assert np.isfinite(oracle.posterior_mean(t, x)).all()
    assert np.isfinite(oracle.log_marginal(t, x))
    np.testing.assert_allclose(oracle.posterior_mean(t, x), [0.5], atol=1e-12)


def test_boundedness_for_diameter_one_cloud():
    rng = spawn_rng(2, 0)
    pts = rng.standard_normal((40, 3))
    cloud = PointCloudMeasure.uniform(pts).normalized()
    oracle = point_cloud_oracle(cloud)
    for t in (0.02, 0.3, 1.5):
        x0, xt = forward_sample(oracle, t, rng, 500)
        dist = np.linalg.norm(x0 - oracle.posterior_mean(t, xt), axis=1)
        assert (dist <= 1.0 + 1e-12).all()


def test_martingale_mean_property():
    rng = spawn_rng(3, 0)
    oracle = point_cloud_oracle(two_point_cloud(sep=0.8, dim=2))
    n = 100_000
    x0, xt = forward_sample(oracle, 0.7, rng, n)
    m = oracle.posterior_mean(0.7, xt)
    se = m.std(axis=0, ddof=1) / math.sqrt(n)
    assert (np.abs(m.mean(axis=0) - x0.mean(axis=0)) <= 3 * se + 3 * 0.4 / math.sqrt(n)).all()


# ---------------------------------------------------------------------------
# gaussian laws
# ---------------------------------------------------------------------------


def test_standard_gaussian_score_is_negative_identity():
    oracle = gaussian_oracle(GaussianLaw.isotropic(3))
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3))
    for t in (0.01, 0.5, 4.0):
        np.testing.assert_allclose(oracle.score(t, x), -x, atol=1e-12)


def test_degenerate_gaussian_matches_point_mass():
    y0 = np.array([0.2, -0.4, 1.0])
    oracle = gaussian_oracle(GaussianLaw.point_mass(y0))
    pm = point_mass_oracle(y0)
    x = np.array([0.5, 0.5, -0.2])
    for t in (0.05, 0.9):
        np.testing.assert_allclose(oracle.score(t, x), pm.score(t, x), atol=1e-12)
        np.testing.assert_allclose(
            oracle.posterior_mean(t, x), pm.posterior_mean(t, x), atol=1e-12
        )
        np.testing.assert_allclose(oracle.log_marginal(t, x), pm.log_marginal(t, x), atol=1e-12)


def test_rank_one_gaussian_matches_dense_inverse():
    law = GaussianLaw(mean=np.zeros(2), factor=np.array([[1.0], [0.0]]))
    oracle = gaussian_oracle(law)
    cov_t = 0.25 * np.outer([1, 0], [1, 0]) + 0.75 * np.eye(2)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((16, 2))
    np.testing.assert_allclose(
        oracle.score(LN2, x), -np.linalg.solve(cov_t, x.T).T, atol=1e-13
    )


def test_gaussian_posterior_mean_tweedie_inversion():
    rng = np.random.default_rng(2)
    law = GaussianLaw(mean=rng.standard_normal(4), factor=rng.standard_normal((4, 2)), diag_floor=0.3)
    oracle = gaussian_oracle(law)
    t = 0.6
    x = rng.standard_normal((5, 4))
    c, s2 = math.exp(-t), -math.expm1(-2 * t)
    np.testing.assert_allclose(
        oracle.posterior_mean(t, x), (x + s2 * oracle.score(t, x)) / c, atol=1e-13
    )


def test_gaussian_sampling_moments():
    rng = spawn_rng(4, 0)
    law = GaussianLaw(mean=np.array([1.0, -2.0]), factor=np.array([[0.5], [0.25]]), diag_floor=0.1)
    oracle = gaussian_oracle(law)
    n = 200_000
    x = oracle.sample0(rng, n)
    np.testing.assert_allclose(x.mean(axis=0), law.mean, atol=4 * 0.8 / math.sqrt(n))
    np.testing.assert_allclose(np.cov(x.T), law.covariance(), atol=0.01)


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def test_product_block_validation():
    pm = point_mass_oracle(np.zeros(1))
    with pytest.raises(ValueError):
        product_oracle([(pm, [0]), (pm, [0])])  # overlap
    with pytest.raises(ValueError):
        product_oracle([(pm, [0]), (pm, [2])])  # gap
    with pytest.raises(ValueError):
        product_oracle([(pm, [0, 1])])  # block size mismatch


def test_product_of_deltas_is_delta():
    factors = [(point_mass_oracle(np.zeros(1)), [i]) for i in range(3)]
    prod = product_oracle(factors)
    ref = point_mass_oracle(np.zeros(3))
    x = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(prod.score(0.4, x), ref.score(0.4, x), atol=1e-14)


def test_product_with_delta_block_has_pure_noise_score():
    # second coordinate is a point mass at zero: score there is -x2 / sigma2
    two = point_cloud_oracle(two_point_cloud())
    prod = product_oracle([(two, [0]), (point_mass_oracle(np.zeros(1)), [1])])
    t = 0.8
    x = np.array([0.3, -0.9])
    s = prod.score(t, x)
    np.testing.assert_allclose(s[1], -x[1] / (-math.expm1(-2 * t)), atol=1e-14)
    np.testing.assert_allclose(s[0], two.score(t, x[:1])[0], atol=1e-14)


def test_product_of_point_clouds_equals_product_cloud():
    a = PointCloudMeasure(np.array([[0.0], [1.0]]), np.array([0.3, 0.7]))
    b = PointCloudMeasure(np.array([[-0.5], [0.5]]), np.array([0.6, 0.4]))
    prod = product_oracle([(point_cloud_oracle(a), [0]), (point_cloud_oracle(b), [1])])
    # brute-force 2-D product cloud
    pts = np.array([[pa, pb] for pa in a.points[:, 0] for pb in b.points[:, 0]])
    wts = np.array([wa * wb for wa in a.weights for wb in b.weights])
    joint = point_cloud_oracle(PointCloudMeasure(pts, wts))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 2))
    for t in (0.05, 0.7):
        np.testing.assert_allclose(prod.posterior_mean(t, x), joint.posterior_mean(t, x), atol=1e-12)
        np.testing.assert_allclose(prod.score(t, x), joint.score(t, x), atol=1e-11)
        np.testing.assert_allclose(prod.log_marginal(t, x), joint.log_marginal(t, x), atol=1e-12)


# ---------------------------------------------------------------------------
# tweedie consistency via finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "maker",
    [
        lambda rng: point_cloud_oracle(
            PointCloudMeasure.uniform(0.4 * rng.standard_normal((5, 3)))
        ),
        lambda rng: gaussian_oracle(
            GaussianLaw(mean=0.2 * rng.standard_normal(3), factor=0.5 * rng.standard_normal((3, 2)))
        ),
        lambda rng: point_mass_oracle(np.array([0.6, -0.1, 0.0])),
    ],
)
def test_score_is_gradient_of_log_marginal(maker):
    rng = spawn_rng(11, 0)
    oracle = maker(rng)
    h = 1e-5
    for _ in range(25):
        t = float(np.exp(rng.uniform(math.log(0.02), math.log(3.0))))
        _, x = forward_sample(oracle, t, rng, 1)
        x = x[0]
        grad = np.zeros_like(x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = h
            grad[j] = (oracle.log_marginal(t, x + e) - oracle.log_marginal(t, x - e)) / (2 * h)
        s = oracle.score(t, x)
        assert np.linalg.norm(grad - s) <= 1e-4 * np.linalg.norm(s)


# ---------------------------------------------------------------------------
# forward process
# ---------------------------------------------------------------------------


def test_forward_sample_zero_time_identity():
    rng = spawn_rng(6, 0)
    oracle = point_cloud_oracle(two_point_cloud())
    x0, xt = forward_sample(oracle, 0.0, rng, 32)
    np.testing.assert_array_equal(x0, xt)


def test_forward_sample_point_mass_moments():
    rng = spawn_rng(7, 0)
    y0 = np.array([0.5, -0.25])
    oracle = point_mass_oracle(y0)
    t, n = 0.9, 100_000
    _, xt = forward_sample(oracle, t, rng, n)
    c, s2 = math.exp(-t), -math.expm1(-2 * t)
    resid = xt - c * y0
    np.testing.assert_allclose(resid.mean(axis=0), 0.0, atol=3 * math.sqrt(s2 / n))
    cov = np.cov(resid.T)
    np.testing.assert_allclose(np.diag(cov), s2, atol=3 * s2 * math.sqrt(2.0 / n))
    assert abs(cov[0, 1]) <= 3 * s2 / math.sqrt(n)


def test_forward_bridge_semigroup_contraction():
    # c(t2 - t) * c(t) == c(t2) holds exactly for the exponential
    t, t2 = 0.3, 1.1
    assert math.isclose(
        math.exp(-(t2 - t)) * math.exp(-t), math.exp(-t2), rel_tol=1e-15
    )


def test_forward_bridge_matches_direct_marginal():
    rng = spawn_rng(8, 0)
    y0 = np.array([1.0])
    oracle = point_mass_oracle(y0)
    t, t2, n = 0.4, 1.3, 120_000
    _, xt = forward_sample(oracle, t, rng, n)
    xt2 = forward_bridge(xt, t, t2, rng)
    c2, s2 = math.exp(-t2), -math.expm1(-2 * t2)
    assert abs(xt2.mean() - c2 * y0[0]) <= 3 * math.sqrt(s2 / n)
    assert abs(xt2.var(ddof=1) - s2) <= 3 * s2 * math.sqrt(2.0 / n)


def test_forward_bridge_rejects_backward_times():
    with pytest.raises(ValueError):
        forward_bridge(np.zeros((2, 1)), 0.5, 0.5, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# manifolds
# ---------------------------------------------------------------------------


def test_circle_cloud_geometry():
    rng = spawn_rng(9, 0)
    cloud, spec = make_manifold_cloud("circle", D=2, n=400, rng=rng, rotate=False)
    # after diameter normalization the circle has radius 1/2 around its center
    center = (cloud.points.max(axis=0) + cloud.points.min(axis=0)) / 2
    radii = np.linalg.norm(cloud.points - center, axis=1)
    np.testing.assert_allclose(radii, 0.5, atol=1e-3)
    assert spec.intrinsic_dim == 1
    np.testing.assert_allclose(spec.reach, 0.5, atol=1e-12)
    np.testing.assert_allclose(spec.volume, math.pi, atol=1e-12)
    assert cloud.diameter() <= 1.0 + 1e-9


def test_torus_cloud_spec():
    rng = spawn_rng(10, 0)
    cloud, spec = make_manifold_cloud("torus", D=4, n=500, rng=rng, intrinsic_dim=2)
    assert spec.intrinsic_dim == 2
    # equal unit radii scaled by 1/diam with diam = 2 sqrt(2)
    np.testing.assert_allclose(spec.reach, 1.0 / (2.0 * math.sqrt(2.0)), atol=1e-12)
    assert cloud.dim == 4
    assert cloud.diameter() <= 1.0 + 1e-9
    assert np.linalg.norm(cloud.points[0]) == 0.0


def test_torus_reach_by_nearest_point_uniqueness():
    # product of two circles with distinct radii: the reach is the smaller one
    r_small, r_big = 0.6, 1.0
    grid = np.linspace(0.0, 2 * math.pi, 720, endpoint=False)
    torus = np.stack(
        [
            r_small * np.cos(grid),
            r_small * np.sin(grid),
            np.full_like(grid, r_big),
            np.zeros_like(grid),
        ],
        axis=1,
    )
    foot = np.array([r_small, 0.0, r_big, 0.0])

    def nearest_angle(q):
        d = np.linalg.norm(torus - q, axis=1)
        return grid[np.argmin(d)], d

    # inward offset below the reach: projection stays at the foot point
    q_in = foot.copy()
    q_in[0] -= 0.9 * r_small
    ang, _ = nearest_angle(q_in)
    assert min(ang, 2 * math.pi - ang) < grid[1]
    # at the factor-circle center the projection degenerates: all angles tie
    q_center = foot.copy()
    q_center[0] -= r_small
    _, d = nearest_angle(q_center)
    assert d.std() < 1e-12


def test_hilbert_reach_decreases_with_order():
    rng = spawn_rng(11, 0)
    _, spec2 = make_manifold_cloud("hilbert", D=2, n=256, rng=rng, order=2)
    _, spec6 = make_manifold_cloud("hilbert", D=2, n=256, rng=rng, order=6)
    assert spec6.reach < spec2.reach
    assert spec6.regularity > spec2.regularity


def test_manifold_dimension_checks():
    rng = spawn_rng(12, 0)
    with pytest.raises(ValueError):
        make_manifold_cloud("circle", D=1, n=10, rng=rng)
    with pytest.raises(ValueError):
        make_manifold_cloud("torus", D=3, n=10, rng=rng, intrinsic_dim=2)
    with pytest.raises(ValueError):
        make_manifold_cloud("nope", D=2, n=10, rng=rng)


def test_rotation_is_isometric():
    rng = spawn_rng(13, 0)
    cloud, _ = make_manifold_cloud("circle", D=5, n=64, rng=rng)
    center = cloud.points.mean(axis=0)
    radii = np.linalg.norm(cloud.points - center, axis=1)
    # all points still lie on a circle of radius ~1/2 in the rotated plane
    assert radii.std() < 0.05


def test_cloud_save_load_roundtrip(tmp_path):
    rng = spawn_rng(14, 0)
    cloud, spec = make_manifold_cloud("circle", D=3, n=32, rng=rng)
    path = tmp_path / "cloud.txt"
    save_cloud(path, cloud, spec)
    back, back_spec = load_cloud(path)
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.weights, cloud.weights)
    assert back_spec.intrinsic_dim == spec.intrinsic_dim
    assert back_spec.reach == spec.reach
    assert back_spec.regularity == spec.regularity
