import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from ugcp.errors import DomainError
from ugcp.special import digamma, trigamma


def _lgamma_diff(x, h=1e-4):
    # independent oracle: derivatives of math.lgamma by a five-point stencil
    f = math.lgamma
    d1 = (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)
    return d1


def test_anchor_values():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=2e-13)
    assert digamma(2.0) - digamma(1.0) == pytest.approx(1.0, abs=1e-13)
    assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)


@pytest.mark.parametrize("x", [0.05, 0.5, 1.0, 2.5, 5.999, 6.0, 7.3, 40.0, 1e4])
def test_against_mpmath(x):
    assert abs(digamma(x) - float(mpmath.digamma(x))) <= 2e-13 * max(1, abs(float(mpmath.digamma(x))))
    ref = float(mpmath.polygamma(1, x))
    assert abs(trigamma(x) - ref) <= 2e-12 * ref


@given(st.floats(0.5, 200))
def test_against_lgamma_derivative(x):
    assert digamma(x) == pytest.approx(_lgamma_diff(x), abs=1e-8)


@given(st.floats(0.01, 500))
def test_recurrences(x):
    assert digamma(x + 1) - digamma(x) == pytest.approx(1 / x, rel=1e-11, abs=1e-12)
    assert trigamma(x) - trigamma(x + 1) == pytest.approx(1 / x**2, rel=1e-10)


def test_vectorized_shape():
    x = np.array([[0.5, 1.0], [3.0, 50.0]])
    out = digamma(x)
    assert out.shape == (2, 2)
    assert out[1, 1] == pytest.approx(float(mpmath.digamma(50)), abs=1e-13)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_domain(bad):
    with pytest.raises(DomainError):
        digamma(bad)
    with pytest.raises(DomainError):
        trigamma(np.array([1.0, bad]))


def test_psi_10_5_against_lgamma_oracle():
    assert abs(digamma(10.5) - _lgamma_diff(10.5)) <= 1e-8


def test_psi_1_against_lgamma_oracle():
    assert digamma(1.0) == pytest.approx(_lgamma_diff(1.0), abs=1e-8)
    assert digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)


@pytest.mark.parametrize("x", [0.1, 1.0, 5.0, 50.0])
def test_unit_step_identity(x):
    assert digamma(x + 1) - digamma(x) == pytest.approx(1 / x, rel=1e-10)


def test_relative_accuracy_over_range():
    for x in np.geomspace(1e-3, 1e6, 61):
        ref = float(mpmath.digamma(x))
        assert abs(digamma(float(x)) - ref) <= 1e-10 * abs(ref) + 1e-14, x
