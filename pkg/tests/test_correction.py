import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etrack import correction as cr
from etrack.extent import ExtentState
from etrack.kinematics import GaussianState

from helpers import random_spd, spd_matrices


def prior(rng, n_x=5):
    kin = GaussianState(rng.normal(size=n_x) * 10, random_spd(rng, n_x, cond=100, scale=2.0))
    return kin, ExtentState(12.0, 6.0 * np.diag([100.0, 16.0]))


def test_single_measurement_at_prediction(rng):
    kin, ext = prior(rng)
    sensor = cr.SensorModel(2.25 * np.eye(2))
    k2, e2 = cr.correct(kin, ext, np.array([kin.mean[:2]]), sensor)
    np.testing.assert_allclose(k2.mean, kin.mean, atol=1e-12)
    assert e2.nu == ext.nu + 1
    # zero innovation and a single point: no spread terms
    np.testing.assert_allclose(e2.v_mat, ext.v_mat, atol=1e-12)


def test_empty_scan_is_identity(rng):
    kin, ext = prior(rng)
    k2, e2 = cr.correct(kin, ext, cr.MeasurementSet(np.empty((0, 2))), cr.SensorModel(np.eye(2)))
    assert k2 is kin and e2 is ext
    assert cr.log_likelihood(kin, ext, np.empty((0, 2)), cr.SensorModel(np.eye(2))) == 0.0


def test_extent_consistency_with_many_points():
    rng = np.random.default_rng(0)
    x_true = np.array([[300.0, 80.0], [80.0, 60.0]])
    kin = GaussianState(np.array([0.0, 0.0, 0.0, 0.0]), np.eye(4))
    ext = ExtentState(10.0, 4.0 * np.eye(2) * 50)
    pts = rng.multivariate_normal(np.zeros(2), x_true, size=100_000)
    _, e2 = cr.correct(kin, ext, pts, cr.SensorModel(np.zeros((2, 2)), lam=1.0))
    np.testing.assert_allclose(e2.mean(), x_true, rtol=0.03, atol=0.03 * x_true.max())


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_covariance_never_grows(seed, count):
    rng = np.random.default_rng(seed)
    kin, ext = prior(rng)
    pts = kin.mean[:2] + rng.normal(size=(count, 2)) * 8
    k2, e2 = cr.correct(kin, ext, pts, cr.SensorModel(1.5**2 * np.eye(2)))
    assert np.linalg.eigvalsh(kin.cov - k2.cov).min() > -1e-9
    assert e2.nu == ext.nu + count
    assert np.linalg.eigvalsh(e2.v_mat - ext.v_mat).min() > -1e-9


def test_log_likelihood_prefers_nearby_scan(rng):
    kin, ext = prior(rng)
    sensor = cr.SensorModel(np.eye(2))
    pts = kin.mean[:2] + rng.normal(size=(10, 2)) * 5
    near = cr.log_likelihood(kin, ext, pts, sensor)
    far = cr.log_likelihood(kin, ext, pts + 500.0, sensor)
    assert np.isfinite(near) and near > far


def test_measurement_statistics():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]])
    zbar, scatter = cr.measurement_statistics(pts)
    np.testing.assert_allclose(zbar, [1.0, 1.0])
    np.testing.assert_allclose(scatter, (pts - zbar).T @ (pts - zbar))


def test_validation(rng):
    with pytest.raises(ValueError):
        cr.SensorModel(np.eye(2), lam=0.0)
    with pytest.raises(ValueError):
        cr.SensorModel(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        cr.MeasurementSet(np.array([[np.nan, 0.0]]))
    kin, _ = prior(rng)
    with pytest.raises(ValueError):
        cr.correct(kin, ExtentState(5.5, np.eye(2)), np.zeros((3, 2)), cr.SensorModel(np.eye(2)))
    assert cr.MeasurementSet(np.zeros((3, 2))).count == 3
