import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import kalman_filter
from snlink.errors import ConfigurationError, ContractViolation, NumericalError
from snlink.feedback import CqiReport
from snlink.mukf import (AffineModel, DelayBuffer, DelayCompensatedTracker, FilterState, UtParams, _solve_gain,
                         condition_covariance, mukf_predict, mukf_update, propagate_through_model, sigma_points,
                         sptpr_mukf_step, ut_weights)
from snlink.sptpr import VdssmConfig, fit_dynamics_model

DEFAULT_UT = UtParams(kappa=0.96, alpha=1.0, beta_ut=2.0, nu=3.0)


def random_spd(rng, s, scale=1.0):
    a = rng.normal(size=(s, s))
    return scale * (a @ a.T + 0.1 * np.eye(s))


def spd_strategy(s):
    return arrays(np.float64, (s, s), elements=st.floats(-2, 2)).map(lambda a: a @ a.T + 1e-3 * np.eye(s))


# -- sigma points -----------------------------------------------------------------

def test_scalar_sigma_points_with_default_kappa():
    sp = sigma_points([0.0], [[1.0]], DEFAULT_UT)
    np.testing.assert_allclose(sp.points.ravel(), [0.0, np.sqrt(3 * 1.96), -np.sqrt(3 * 1.96)], rtol=1e-15)
    assert sp.points[0, 1] == pytest.approx(2.4249, abs=1e-4)
    np.testing.assert_allclose(sp.mean_weights, [0.96 / 1.96, 0.5 / 1.96, 0.5 / 1.96], rtol=1e-15)
    np.testing.assert_allclose(sp.mean_weights, [0.4898, 0.2551, 0.2551], atol=1e-4)
    assert sp.cov_weights[0] == pytest.approx(0.96 / 1.96 + 2.0, rel=1e-15)


def test_zero_covariance_collapses_points():
    sp = sigma_points([1.0, -2.0], np.zeros((2, 2)), DEFAULT_UT)
    assert np.all(sp.points == np.array([[1.0], [-2.0]]))


@given(st.integers(1, 5), st.integers(0, 10_000), st.sampled_from([3.0, 5.0, 30.0]))
def test_moment_recovery(s, seed, nu):
    rng = np.random.default_rng(seed)
    mu, cov = rng.normal(size=s) * 10, random_spd(rng, s)
    ut = UtParams(nu=nu)
    sp = sigma_points(mu, cov, ut)
    assert sp.mean_weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(sp.points[:, 0], mu)
    np.testing.assert_allclose(sp.points @ sp.mean_weights, mu, atol=1e-10)
    dev = sp.points - mu[:, None]
    np.testing.assert_allclose((dev * sp.cov_weights) @ dev.T, nu / (nu - 2) * cov, atol=1e-8)


def test_indefinite_covariance_is_rejected():
    with pytest.raises(NumericalError):
        sigma_points([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], DEFAULT_UT)


def test_ut_parameter_validation():
    with pytest.raises(ConfigurationError):
        UtParams(nu=2.0)
    with pytest.raises(ConfigurationError):
        ut_weights(1, UtParams(kappa=-1.5))


# -- covariance conditioning -----------------------------------------------------

def test_conditioning_symmetrises_and_floors():
    c = condition_covariance(np.array([[1.0, 0.5 + 1e-12], [0.5, 0.25 - 1e-12]]))
    assert np.array_equal(c, c.T)
    assert np.linalg.eigvalsh(c).min() >= -1e-9


@pytest.mark.parametrize("bad", [np.array([[np.nan]]), np.array([[1.0, 0.0], [0.0, -0.5]])])
def test_conditioning_rejects_nan_and_indefinite(bad):
    with pytest.raises(NumericalError):
        condition_covariance(bad)


# -- propagation ------------------------------------------------------------------

def test_identity_models_preserve_points():
    rng = np.random.default_rng(0)
    x = rng.uniform(-80, -50, 400)
    f = fit_dynamics_model(x, x, VdssmConfig(l_e=20, epochs=50), 0)
    pts = np.array([[-70.0, -65.0, -75.0], [-60.0, -55.0, -66.0]])
    out, c = propagate_through_model(pts, [f, f])
    assert np.all(np.abs(out - pts) <= np.abs(pts) * 0.02 + 0.1)
    assert c.shape == (2, 2) and np.all(np.diag(c) >= 0) and c[0, 1] == 0


def test_constant_model_collapses_coordinates():
    pts = np.array([[0.0, 1.0, -1.0]])
    out, c = propagate_through_model(pts, [AffineModel(0.0, 4.0, 0.3)])
    assert np.all(out == 4.0) and c[0, 0] == 0.3


def test_coordinates_are_separable():
    pts = np.array([[1.0, 2.0, 0.0], [5.0, 5.0, 5.0]])
    out, _ = propagate_through_model(pts, [AffineModel(2.0), AffineModel(-1.0)])
    assert np.array_equal(out[1], [-5.0, -5.0, -5.0])
    pts2 = pts.copy()
    pts2[0] += 10
    out2, _ = propagate_through_model(pts2, [AffineModel(2.0), AffineModel(-1.0)])
    assert np.array_equal(out2[1], out[1])


def test_dimension_mismatch_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        propagate_through_model(np.zeros((2, 5)), [AffineModel()])


# -- predict ----------------------------------------------------------------------

@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_literal_linear_prediction_inflates_by_student_t_factor(a):
    ut = UtParams(nu=3.0, spread_correction=False)
    st_, _ = mukf_predict(FilterState(np.array([2.0, -1.0]), np.array([[1.0, 0.3], [0.3, 2.0]]), 0),
                          [AffineModel(a), AffineModel(a)], ut)
    np.testing.assert_allclose(st_.mean, a * np.array([2.0, -1.0]), rtol=1e-12)
    np.testing.assert_allclose(st_.cov, a * a * 3.0 * np.array([[1.0, 0.3], [0.3, 2.0]]), rtol=1e-12)
    assert st_.cycle == 1


def test_corrected_linear_prediction_is_kalman():
    s = FilterState(np.array([2.0]), np.array([[1.5]]), 4)
    st_, _ = mukf_predict(s, [AffineModel(0.7, 1.0, 0.2)], DEFAULT_UT)
    assert st_.mean[0] == pytest.approx(0.7 * 2.0 + 1.0, rel=1e-13)
    assert st_.cov[0, 0] == pytest.approx(0.49 * 1.5 + 0.2, rel=1e-12)


def test_identity_prediction_keeps_mean():
    s = FilterState(np.array([-60.0, -70.0]), np.diag([2.0, 3.0]), 0)
    st_, _ = mukf_predict(s, [AffineModel(), AffineModel()], DEFAULT_UT)
    np.testing.assert_allclose(st_.mean, s.mean, rtol=1e-14)


@given(st.integers(0, 5000))
def test_prediction_noise_and_covariance_are_healthy(seed):
    rng = np.random.default_rng(seed)
    s = 3
    models = [AffineModel(rng.uniform(-1.5, 1.5), rng.normal(), rng.uniform(0, 2)) for _ in range(s)]
    st_ = FilterState(rng.normal(size=s), random_spd(rng, s), 0)
    for _ in range(5):
        st_, _ = mukf_predict(st_, models, DEFAULT_UT)
        assert np.all(np.isfinite(st_.cov))
        assert np.max(np.abs(st_.cov - st_.cov.T)) <= 1e-9
        assert np.linalg.eigvalsh(st_.cov).min() >= -1e-9


# -- update -----------------------------------------------------------------------

def test_uninformative_measurement_leaves_prior():
    prior = FilterState(np.array([-60.0]), np.array([[4.0]]), 3)
    post = mukf_update(prior, CqiReport(0, (20,), 3), [AffineModel(1.0, 80.0, 1e9)], DEFAULT_UT)
    assert abs(post.mean[0] - prior.mean[0]) < 1e-3
    assert post.cov[0, 0] == pytest.approx(4.0, rel=1e-3)


def test_update_rejects_report_from_another_cycle():
    prior = FilterState(np.array([0.0]), np.eye(1), 5)
    with pytest.raises(ContractViolation):
        mukf_update(prior, CqiReport(0, (1,), 4), [AffineModel()], DEFAULT_UT)


def test_singular_innovation_is_regularised_once_then_fails():
    gain = _solve_gain(np.zeros((1, 1)), np.zeros((1, 1)))
    assert np.array_equal(gain, np.zeros((1, 1)))
    with pytest.raises(NumericalError):
        _solve_gain(np.ones((1, 1)), -np.eye(1))


def _linear_system(rng, s):
    a = np.diag(rng.uniform(0.6, 1.0, s))
    h = np.diag(rng.uniform(0.5, 2.0, s))
    q = np.diag(rng.uniform(0.05, 0.5, s))
    r = np.diag(rng.uniform(0.1, 1.0, s))
    f = [AffineModel(a[i, i], 0.0, q[i, i]) for i in range(s)]
    g = [AffineModel(h[i, i], 0.0, r[i, i]) for i in range(s)]
    return a, h, q, r, f, g


@pytest.mark.parametrize("s", [1, 4])
def test_fifty_step_kalman_equivalence(s):
    rng = np.random.default_rng(s)
    a, h, q, r, f, g = _linear_system(rng, s)
    x0, p0 = rng.normal(size=s), random_spd(rng, s)
    ys = [rng.normal(size=s) for _ in range(50)]
    ref = kalman_filter(x0, p0, a, q, h, r, ys)
    ut = UtParams(nu=1e6, alpha=1.0, beta_ut=2.0)
    st_ = FilterState(x0, p0, 0)
    for k, y in enumerate(ys):
        pred, _ = mukf_predict(st_, f, ut)
        st_ = mukf_update(pred, CqiReport(0, tuple(y), k + 1), g, ut)
        np.testing.assert_allclose(st_.mean, ref[k][0], atol=1e-6, rtol=0)
        np.testing.assert_allclose(st_.cov, ref[k][1], atol=1e-6, rtol=0)


def test_informative_updates_shrink_covariance_trace():
    rng = np.random.default_rng(9)
    a, h, q, r, f, g = _linear_system(rng, 3)
    st_ = FilterState(np.zeros(3), np.eye(3), 0)
    x = rng.normal(size=3)
    for k in range(50):
        x = a @ x + rng.multivariate_normal(np.zeros(3), q)
        y = h @ x + rng.multivariate_normal(np.zeros(3), r)
        pred, _ = mukf_predict(st_, f, DEFAULT_UT)
        st_ = mukf_update(pred, CqiReport(0, tuple(y), k + 1), g, DEFAULT_UT)
        assert np.trace(st_.cov) < np.trace(pred.cov)


# -- delay compensation ---------------------------------------------------------------

def _stream(rng, n, s):
    return [CqiReport(0, tuple(rng.normal(size=s)), k) for k in range(n)]


def test_zero_delay_is_predict_then_update_bitwise():
    rng = np.random.default_rng(0)
    _, _, _, _, f, g = _linear_system(rng, 2)
    s0 = FilterState(np.zeros(2), np.eye(2), 0)
    buf = DelayBuffer(0, s0)
    rep = CqiReport(0, (0.3, -0.2), 1)
    out = sptpr_mukf_step(buf, rep, f, g, DEFAULT_UT, 0)
    pred, _ = mukf_predict(s0, f, DEFAULT_UT)
    ref = mukf_update(pred, rep, g, DEFAULT_UT)
    assert np.array_equal(out.mean, ref.mean) and np.array_equal(out.cov, ref.cov)
    assert out.cycle == 1 and buf.cycles() == [1]


def test_identity_roll_forward_keeps_updated_mean():
    f = [AffineModel(1.0, 0.0, 0.0)]
    g = [AffineModel(1.0, 0.0, 0.5)]
    s0 = FilterState(np.array([1.0]), np.array([[2.0]]), 9)
    buf = DelayBuffer(2, s0)
    rep = CqiReport(0, (3.0,), 10, 12)
    out = sptpr_mukf_step(buf, rep, f, g, DEFAULT_UT, 2)
    pred, _ = mukf_predict(s0, f, DEFAULT_UT)
    updated = mukf_update(pred, rep, g, DEFAULT_UT)
    assert out.mean[0] == pytest.approx(updated.mean[0], abs=1e-12)
    assert out.cycle == 12
    assert len(buf) == 3 and buf.cycles() == [10, 11, 12]


def test_buffer_gap_is_a_contract_violation():
    buf = DelayBuffer(2, FilterState(np.zeros(1), np.eye(1), 5))
    with pytest.raises(ContractViolation):
        sptpr_mukf_step(buf, CqiReport(0, (1.0,), 8), [AffineModel()], [AffineModel()], DEFAULT_UT, 2)
    with pytest.raises(ContractViolation):
        sptpr_mukf_step(buf, CqiReport(0, (1.0,), 6), [AffineModel()], [AffineModel()], DEFAULT_UT, 3)


def test_buffer_requires_contiguous_cycles():
    buf = DelayBuffer(2)
    with pytest.raises(ContractViolation):
        buf.replace_all([FilterState(np.zeros(1), np.eye(1), c) for c in (1, 2, 4)])


@given(st.integers(0, 6), st.integers(0, 1000))
def test_delay_consistency_with_shifted_stream(k, seed):
    rng = np.random.default_rng(seed)
    _, _, _, _, f, g = _linear_system(rng, 2)
    f = [AffineModel(m.slope, 0.3, m.noise) for m in f]
    reports = _stream(rng, 25, 2)
    s0 = FilterState(rng.normal(size=2), random_spd(rng, 2), 0)
    buf_k, buf_0 = DelayBuffer(k, s0), DelayBuffer(0, s0)
    for rep in reports[1:]:
        est_k = sptpr_mukf_step(buf_k, rep, f, g, DEFAULT_UT, k)
        est_0 = sptpr_mukf_step(buf_0, rep, f, g, DEFAULT_UT, 0)
        for _ in range(k):
            est_0, _ = mukf_predict(est_0, f, DEFAULT_UT)
        assert est_k.cycle == est_0.cycle == rep.generated_at + k
        np.testing.assert_allclose(est_k.mean, est_0.mean, atol=1e-9, rtol=0)
        np.testing.assert_allclose(est_k.cov, est_0.cov, atol=1e-9, rtol=0)


def test_tracker_runs_open_loop_before_first_report():
    f, g = [AffineModel(0.9, -6.0, 0.1)], [AffineModel(1.0, 0.0, 0.5)]
    prior = FilterState(np.array([-60.0]), np.array([[1.0]]), -1)
    trk = DelayCompensatedTracker(prior, f, g, DEFAULT_UT, 2)
    a = trk.step(0)
    b = trk.step(1)
    ref0, _ = mukf_predict(prior, f, DEFAULT_UT)
    ref1, _ = mukf_predict(ref0, f, DEFAULT_UT)
    assert (a.cycle, b.cycle) == (0, 1)
    np.testing.assert_array_equal(b.mean, ref1.mean)
    c = trk.step(2, CqiReport(0, (-55.0,), 0, 2))
    assert c.cycle == 2
