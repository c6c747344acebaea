import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itolift import filters as flt
from itolift.discretize import build_discrete, van_loan
from itolift.errors import InvalidInputError
from itolift.filters import GaussianBelief, kf_predict, kf_update
from itolift.lifting import ExponentialBasis, LiftedModel
from itolift.sde import (ObservationSeries, make_bessel, make_cubic, make_ou, make_wright_fisher,
                         observe, simulate_em)

C1 = np.array([[1.0, 0.0]])


def ou_obs(sigma_y=0.25, T=5.0, seed=0, sigma=0.5):
    m = make_ou(1.0, sigma)
    tr = simulate_em(m, 0.2, 1e-3, T, seed=seed)
    return m, tr, observe(tr, 0.1, sigma_y, seed=seed + 1)


def test_predict_trivial_cases():
    b = GaussianBelief([1.0, 2.0], [[1.0, 0.2], [0.2, 0.5]])
    same = kf_predict(b, np.eye(2), np.zeros((2, 2)))
    assert np.allclose(same.mean, b.mean) and np.allclose(same.cov, b.cov)
    Q0 = np.array([[0.3, 0.1], [0.1, 0.2]])
    z = kf_predict(b, np.zeros((2, 2)), Q0)
    assert np.allclose(z.mean, 0) and np.allclose(z.cov, Q0)


def test_predict_fixed_point():
    F, Q = np.exp(-0.1), 0.05
    p = Q / (1 - F * F)
    out = kf_predict(GaussianBelief([0.0], [[p]]), np.array([[F]]), np.array([[Q]]))
    assert out.cov[0, 0] == pytest.approx(p, rel=1e-12)


def test_update_limits():
    b = GaussianBelief([0.5, 1.0], [[0.4, 0.1], [0.1, 0.3]])
    loose, _ = kf_update(b, 3.0, C1, 1e12)
    assert np.allclose(loose.mean, b.mean, atol=1e-6) and np.allclose(loose.cov, b.cov, atol=1e-6)
    tight, _ = kf_update(b, 3.0, C1, 1e-14)
    assert abs(tight.mean[0] - 3.0) < 1e-8


@given(st.floats(-2, 2), st.floats(0.01, 3), st.floats(-5, 5), st.floats(0.01, 3))
def test_update_conjugate(m0, p0, y, r):
    post, info = kf_update(GaussianBelief([m0], [[p0]]), y, np.array([[1.0]]), r)
    assert post.mean[0] == pytest.approx((m0 / p0 + y / r) / (1 / p0 + 1 / r), rel=1e-9, abs=1e-12)
    assert post.cov[0, 0] == pytest.approx(1 / (1 / p0 + 1 / r), rel=1e-9)
    assert info.innovation_var == pytest.approx(p0 + r)


def test_linear_model_ekf_ukf_equal_kf():
    m, _, obs = ou_obs()
    cfg = flt.FilterConfig(sigma_model=0.5)
    ref = flt.regular_kf_run(m, obs, 0.2, flt.FilterConfig(sigma_model=0.5, linearization_point=0.0))
    assert np.max(np.abs(flt.ekf_run(m, obs, 0.2, cfg).estimates - ref.estimates)) < 1e-10
    assert np.max(np.abs(flt.ukf_run(m, obs, 0.2, cfg).estimates - ref.estimates)) < 1e-8


def test_lifted_kf_exact_zero_noise():
    # noiseless OU path x0 exp(-t) observed without error
    t = np.arange(51) * 0.1
    truth = 0.8 * np.exp(-t)
    obs = ObservationSeries(t, truth.copy(), 0.0, 0.1, 100)
    lm = LiftedModel(ExponentialBasis([0.0]), np.array([[-1.0, 0.0], [0.0, 0.0]]), np.zeros((2, 2)))
    est = flt.lifted_kf_run(lm, build_discrete(lm, 0.1, 0.0), obs, 0.8).estimates
    assert np.max(np.abs(est - truth)) < 1e-6


def test_lifted_kf_rejects_mismatched_discretization():
    _, _, obs = ou_obs()
    lm = LiftedModel(ExponentialBasis([0.0]), -np.eye(2), np.eye(2))
    with pytest.raises(InvalidInputError):
        flt.lifted_kf_run(lm, build_discrete(lm, 0.2, 0.25), obs, 0.0)


def test_similarity_invariance():
    rng = np.random.default_rng(3)
    _, _, obs = ou_obs()
    A = rng.normal(size=(3, 3)) - 2 * np.eye(3)
    B = 0.3 * rng.normal(size=(3, 3))
    F, Q = van_loan(A, B, 0.1)
    Pt = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    P = np.eye(3)
    P[1:, 1:] = Pt
    Pi = np.linalg.inv(P)
    C = np.array([[1.0, 0.0, 0.0]])
    u0 = np.array([0.2, 1.0, 0.5])
    b1 = GaussianBelief(u0, 0.1 * np.eye(3))
    b2 = GaussianBelief(P @ u0, 0.1 * P @ P.T)
    for k, y in enumerate(obs.values):
        if k:
            b1 = kf_predict(b1, F, Q)
            b2 = kf_predict(b2, P @ F @ Pi, P @ Q @ P.T)
        b1, _ = kf_update(b1, y, C, 0.0625)
        b2, _ = kf_update(b2, y, C, 0.0625)
        assert abs(b1.mean[0] - b2.mean[0]) < 1e-8


@pytest.mark.parametrize("make,x0", [(lambda: make_cubic(1.0), 0.5),
                                     (lambda: make_bessel(3, 1.0, 5.0), 2.0),
                                     (lambda: make_wright_fisher(2.0), 0.5)])
def test_filters_deterministic_and_finite(make, x0):
    m = make()
    tr = simulate_em(m, x0, 1e-3, 3.0, seed=2)
    obs = observe(tr, 0.1, 0.25, seed=3)
    cfg = flt.FilterConfig(sigma_model=1.0, pf_particles=300)
    for run in (flt.ekf_run, flt.ukf_run, flt.regular_kf_run):
        a, b = run(m, obs, x0, cfg), run(m, obs, x0, cfg)
        assert np.array_equal(a.estimates, b.estimates)
        assert np.all(np.isfinite(a.estimates)) and np.all(a.variances >= 0)
    p1 = flt.pf_run(m, obs, x0, cfg, seed=4)
    p2 = flt.pf_run(m, obs, x0, cfg, seed=4)
    assert np.array_equal(p1.estimates, p2.estimates)
    assert p1.extra["weight_norm_error"] <= 1e-12


def test_pf_follows_precise_observations():
    m = make_cubic(1.0)
    tr = simulate_em(m, 0.5, 1e-3, 3.0, seed=5)
    obs = observe(tr, 0.1, 0.02, seed=6)
    res = flt.pf_run(m, obs, 0.5, flt.FilterConfig(pf_particles=5000), seed=7)
    assert np.all(np.abs(res.estimates - obs.values) < 2 * 0.02 + 0.02)


def test_bessel_particles_stay_in_domain():
    m = make_bessel(3, 1.0, 5.0)
    obs = ObservationSeries(np.arange(5) * 0.1, np.array([0.01, 0.02, 4.99, 0.0, 5.0]), 0.25, 0.1, 100)
    res = flt.pf_run(m, obs, 0.01, flt.FilterConfig(pf_particles=500), seed=1)
    assert np.all((res.estimates >= 0) & (res.estimates <= 5))


def test_ekf_bessel_floor_keeps_finite():
    m = make_bessel(3, 1.0, 5.0)
    obs = ObservationSeries(np.arange(4) * 0.1, np.array([-0.3, -0.2, 0.0, 0.1]), 0.25, 0.1, 100)
    for run in (flt.ekf_run, flt.ukf_run):
        res = run(m, obs, 1e-6, flt.FilterConfig())
        assert np.all(np.isfinite(res.estimates))


def test_regular_kf_static_points():
    cfg = flt.FilterConfig()
    assert flt.static_point(make_cubic(1.0), cfg) == 1.0
    assert flt.static_point(make_bessel(3, 1.0, 5.0), cfg) == pytest.approx(3.75)
    assert flt.static_point(make_wright_fisher(2.0, 1.0, 3.0), cfg) == pytest.approx(0.75)


def test_regular_kf_pinned_truth_converges():
    m = make_wright_fisher(2.0, 1.0, 3.0)
    obs = ObservationSeries(np.arange(200) * 0.1, np.full(200, 0.75), 0.25, 0.1, 100)
    res = flt.regular_kf_run(m, obs, 0.2, flt.FilterConfig())
    assert abs(res.estimates[-1] - 0.75) < 1e-6


def test_rmse_oracles():
    x = np.linspace(0, 1, 50)
    assert flt.rmse(x, x) == 0.0
    assert flt.rmse(x + 0.3, x) == pytest.approx(0.3)
    rng = np.random.default_rng(0)
    K, s = 20000, 0.5
    assert abs(flt.rmse(rng.normal(0, s, K), np.zeros(K)) - s) < 3 * s / np.sqrt(2 * K)
    with pytest.raises(InvalidInputError):
        flt.rmse(x, x[:-1])


def test_systematic_resample_counts():
    rng = np.random.default_rng(0)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    idx = flt.systematic_resample(w, rng)
    counts = np.bincount(idx, minlength=4)
    assert np.all(np.abs(counts - 4 * w) < 1)


def test_ukf_weights_sum():
    lam, wm, wc = flt.ukf_weights(flt.FilterConfig())
    assert wm.sum() == pytest.approx(1.0)
    assert lam == pytest.approx(1e-6 - 1)
