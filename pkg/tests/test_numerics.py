import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etrack import numerics as nm

from helpers import random_spd, spd_matrices


def test_cholesky_trivial_cases():
    np.testing.assert_array_equal(nm.cholesky(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(nm.cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


@given(spd_matrices(d=3))
def test_cholesky_reconstructs(a):
    low = nm.cholesky(a)
    assert np.allclose(low, np.tril(low))
    assert np.linalg.norm(low @ low.T - a) / np.linalg.norm(a) < 1e-10


def test_cholesky_reports_failing_minor():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(nm.NotPositiveDefiniteError) as err:
        nm.cholesky(a)
    assert err.value.minor == 2


def test_cholesky_rejects_nonfinite_and_bad_shape():
    with pytest.raises(ValueError):
        nm.cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        nm.cholesky(np.ones((2, 3)))


def test_symmetrized_on_construction():
    a = np.array([[2.0, 1.0], [1.0 + 1e-13, 2.0]])
    out = nm.check_spd(a)
    assert out[0, 1] == out[1, 0]


def test_sym_sqrt_trivial_cases():
    np.testing.assert_allclose(nm.sym_sqrt(np.eye(2)), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(nm.sym_sqrt(np.diag([16.0, 25.0])), np.diag([4.0, 5.0]), atol=1e-14)


@given(spd_matrices(d=3))
def test_sym_sqrt_squares_back(a):
    s = nm.sym_sqrt(a)
    assert np.allclose(s, s.T)
    assert np.linalg.norm(s @ s - a) / np.linalg.norm(a) < 1e-10
    si = nm.inv_sym_sqrt(a)
    assert np.linalg.norm(si @ a @ si - np.eye(3)) < 1e-9


def test_logdet_trivial_cases():
    assert nm.logdet(np.eye(4)) == 0.0
    assert nm.logdet(np.diag([math.e, math.e])) == pytest.approx(2.0, abs=1e-14)


@given(spd_matrices(d=3))
def test_logdet_matches_eigenvalues(a):
    assert nm.logdet(a) == pytest.approx(np.log(np.linalg.eigvalsh(a)).sum(), abs=1e-10)


@given(spd_matrices(d=2))
def test_spd_inv_logdet_agree(a):
    inv, ld = nm.spd_inv_logdet(a)
    np.testing.assert_allclose(inv @ a, np.eye(2), atol=1e-9)
    assert ld == pytest.approx(nm.logdet(a), abs=1e-12)
    np.testing.assert_allclose(nm.spd_inv(a), inv, rtol=1e-12, atol=0)


def test_special_function_values():
    assert nm.digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-14)
    assert nm.trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-14)
    for a in (0.5, 1.0, 2.5):
        assert nm.ln_multigamma(1, a) == pytest.approx(math.lgamma(a), abs=1e-14)


def test_special_functions_reject_nonpositive():
    for f in (nm.digamma, nm.trigamma):
        with pytest.raises(ValueError):
            f(0.0)
        with pytest.raises(ValueError):
            f(-1.5)
    with pytest.raises(ValueError):
        nm.ln_multigamma(3, 0.9)


@given(st.integers(1, 5), st.floats(3.0, 80.0))
def test_multigamma_derivatives_match_finite_differences(d, a):
    h = 1e-5
    fd = (nm.ln_multigamma(d, a + h) - nm.ln_multigamma(d, a - h)) / (2 * h)
    assert nm.multi_digamma(d, a) == pytest.approx(fd, rel=1e-6, abs=1e-7)
    fd2 = (nm.multi_digamma(d, a + h) - nm.multi_digamma(d, a - h)) / (2 * h)
    assert nm.multi_trigamma(d, a) == pytest.approx(fd2, rel=1e-5, abs=1e-7)


def test_check_psd_allows_singular():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    nm.check_psd(a)
    with pytest.raises(ValueError):
        nm.check_psd(np.diag([1.0, -1.0]))
    with pytest.raises(nm.NotPositiveDefiniteError):
        nm.check_spd(a)


def test_random_spd_helper_is_spd(rng):
    nm.check_spd(random_spd(rng, 4, cond=1e6))
