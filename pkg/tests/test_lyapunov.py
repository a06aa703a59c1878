from math import log, sqrt

import numpy as np
import pytest

from uexpand.errors import ParameterError
from uexpand.exterior import compound, random_grassmann
from uexpand.flow import AffineTorusMap
from uexpand.lyapunov import expected_log_expansion, lyapunov_spectrum, top_exponent_k
from uexpand.walk import build_measure, dirac

LAMBDA_CAT = log((3 + sqrt(5)) / 2)
CAT = AffineTorusMap(np.array([[2, 1], [1, 1]]))
M3 = np.array([[1, 1, 0], [1, 2, 1], [0, 1, 2]])  # det 1, real eigenvalues off the unit circle


def test_cat_map_spectrum():
    est = lyapunov_spectrum(dirac(CAT), [0.1, 0.2], 10_000, seed=0)
    assert np.allclose(est.spectrum, [LAMBDA_CAT, -LAMBDA_CAT], atol=1e-3)
    assert est.running.shape[1] == 3 and est.running[-1, 0] == 10_000


def test_identity_spectrum_is_exactly_zero():
    est = lyapunov_spectrum(dirac(AffineTorusMap.identity(3)), [0.1, 0.2, 0.3], 1000, seed=0)
    assert np.array_equal(est.spectrum, np.zeros(3))


def test_top_exponent_matches_compound_spectral_radius_in_d3():
    assert round(np.linalg.det(M3)) == 1
    est = lyapunov_spectrum(dirac(AffineTorusMap(M3)), [0.1, 0.2, 0.3], 5000, seed=0)
    for k in (1, 2):
        rho = max(abs(np.linalg.eigvals(compound(M3.astype(float), k))))
        assert abs(top_exponent_k(est, k) - log(rho)) < 1e-3
    assert abs(est.total) < 1e-9
    with pytest.raises(ParameterError):
        top_exponent_k(est, 3)


def test_top_exponent_is_concave_in_k():
    est = lyapunov_spectrum(dirac(AffineTorusMap(M3)), [0.1, 0.2, 0.3], 2000, seed=0)
    partial = [0.0] + [top_exponent_k(est, k) for k in (1, 2)] + [est.total]
    incr = np.diff(partial)
    assert np.all(np.diff(incr) <= 1e-12)


def test_constructed_measure_spectrum_sums_to_zero():
    est = lyapunov_spectrum(build_measure(2), [0.1, 0.2], 10_000, seed=1)
    assert abs(est.total) <= 2e-3
    assert est.spectrum[0] > 0.05  # the walk expands on average


def test_estimates_are_deterministic():
    mu = build_measure(2)
    a = lyapunov_spectrum(mu, [0.3, 0.7], 2000, seed=5)
    b = lyapunov_spectrum(mu, [0.3, 0.7], 2000, seed=5)
    assert np.array_equal(a.spectrum, b.spectrum) and np.array_equal(a.running, b.running)


def test_expected_log_expansion_grows_with_cat_slope():
    rng = np.random.default_rng(0)
    P = random_grassmann(rng, 2, 1)
    m20 = expected_log_expansion(dirac(CAT), [0.2, 0.3], P, 20, 4, rng).mean
    m40 = expected_log_expansion(dirac(CAT), [0.2, 0.3], P, 40, 4, rng).mean
    assert abs((m40 - m20) / 20 - LAMBDA_CAT) <= 0.05 * LAMBDA_CAT


def test_expected_log_expansion_identity_and_validation():
    rng = np.random.default_rng(1)
    est = expected_log_expansion(dirac(AffineTorusMap.identity(2)), [0.5, 0.5],
                                 random_grassmann(rng, 2, 1), 3, 8, rng)
    assert est.mean == 0.0 and est.std_error == 0.0 and est.n_failed == 0
    with pytest.raises(ParameterError):
        expected_log_expansion(build_measure(2), [0.5, 0.5], random_grassmann(rng, 3, 1), 1, 8, rng)
    with pytest.raises(ParameterError):
        lyapunov_spectrum(build_measure(2), [0.1, 0.2], 100, discard=100)
