import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sorcall.model import EstimandSpec, OddsRatioFeatures, OutcomeModel, intercept_only
from sorcall.tilting import (
    conditional_expectation_g,
    impute_estimand_h_m,
    tilted_expectation_h,
)

X1 = np.zeros((1, 1))
Y = lambda x, y: np.asarray(y)  # noqa: E731
ONE_Y = lambda x, y: np.column_stack([np.ones_like(y), y])  # noqa: E731


def binary(p):
    return OutcomeModel("binary", intercept_only(), [np.log(p / (1 - p))])


def gaussian(mu, s2):
    return OutcomeModel("gaussian", intercept_only(), [mu], s2)


def test_g_binary():
    assert conditional_expectation_g(binary(0.5), Y, X1)[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(conditional_expectation_g(binary(0.8), ONE_Y, X1), [[1.0, 0.8]])


def test_g_gaussian():
    assert conditional_expectation_g(gaussian(1.7, 2.0), Y, X1)[0, 0] == pytest.approx(1.7)


def test_h_binary_two_point():
    got = tilted_expectation_h(binary(0.8), OddsRatioFeatures(), [1.0], Y, X1)[0, 0]
    want = 0.8 * np.exp(-1) / (0.8 * np.exp(-1) + 0.2)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.59539, abs=1e-5)


def test_h_gaussian_closed_form():
    got = tilted_expectation_h(gaussian(2.0, 3.0), OddsRatioFeatures(), [0.5], Y, X1)
    assert got[0, 0] == pytest.approx(0.5, abs=1e-12)


def _quadrature_tilted_mean(mu, s2, g):
    sd = np.sqrt(s2)
    f = lambda y: np.exp(-g * y - (y - mu) ** 2 / (2 * s2))  # noqa: E731
    lo, hi = mu - g * s2 - 14 * sd, mu - g * s2 + 14 * sd
    num = integrate.quad(lambda y: y * f(y), lo, hi, epsabs=0, epsrel=1e-13, limit=400)[0]
    den = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=400)[0]
    return num / den


@pytest.mark.parametrize("g", [-2.0, -0.7, 0.0, 1.1, 2.0])
@pytest.mark.parametrize("mu", [-5.0, 0.3, 5.0])
@pytest.mark.parametrize("s2", [0.1, 1.0, 5.0])
def test_h_gaussian_matches_quadrature(g, mu, s2):
    got = tilted_expectation_h(gaussian(mu, s2), OddsRatioFeatures(), [g], Y, X1)[0, 0]
    assert got == pytest.approx(_quadrature_tilted_mean(mu, s2, g), abs=1e-8)


def test_gaussian_nonlinear_tilt_falls_back_to_quadrature():
    orf = OddsRatioFeatures(fn=lambda x, y: (y ** 2)[:, None] * 0.1, fn_names=("y2",))
    assert not orf.linear_in_y
    got = tilted_expectation_h(gaussian(1.0, 1.0), orf, [1.0], Y, X1)[0, 0]
    # tilt exp(-0.1 y^2) keeps the law Gaussian: precision 1 + 0.2, mean 1 / 1.2
    assert got == pytest.approx(1.0 / 1.2, abs=1e-8)


@given(st.floats(0.02, 0.98), st.floats(0.01, 3.0))
def test_h_below_g_for_positive_gamma(p, g):
    h = tilted_expectation_h(binary(p), OddsRatioFeatures(), [g], Y, X1)[0, 0]
    gg = conditional_expectation_g(binary(p), Y, X1)[0, 0]
    assert h < gg


@given(st.floats(0.02, 0.98))
def test_h_equals_g_without_tilt(p):
    h = tilted_expectation_h(binary(p), OddsRatioFeatures(), [0.0], ONE_Y, X1)
    np.testing.assert_allclose(h, conditional_expectation_g(binary(p), ONE_Y, X1))


def test_h_m():
    spec = EstimandSpec()
    hy = tilted_expectation_h(binary(0.8), OddsRatioFeatures(), [1.0], Y, X1)[0, 0]
    assert impute_estimand_h_m(binary(0.8), OddsRatioFeatures(), [1.0], spec, [hy], X1)[0, 0] \
        == pytest.approx(0.0, abs=1e-15)
    assert impute_estimand_h_m(binary(0.8), OddsRatioFeatures(), [1.0], spec, [0.0], X1)[0, 0] \
        == pytest.approx(0.595390, abs=1e-6)
    assert impute_estimand_h_m(binary(0.8), OddsRatioFeatures(), [0.0], spec, [0.3], X1)[0, 0] \
        == pytest.approx(0.5)
