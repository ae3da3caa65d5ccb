import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exlgm.errors import InvalidInputError
from exlgm.evt import PPParameters
from exlgm.link import (
    A_PHI,
    B_PHI,
    C_PHI,
    TransformedParameters,
    h,
    h_inverse,
    h_inverse_derivative,
    link_forward,
    link_inverse,
)

# mpmath, 50 digits, with the rounded published constants
H_025 = 0.2438248944434029
H_010 = 0.0972870234916050


def test_h_values():
    assert h(0.25) == pytest.approx(H_025, abs=1e-14)
    assert h(0.1) == pytest.approx(H_010, abs=1e-14)
    assert h(0.0) == pytest.approx(-9.7396e-7, abs=1e-9)


def test_h_zero_self_consistency():
    # the rounded constants leave h(0) slightly off zero
    assert abs(h(0.0)) < 1e-5


def test_h_inverse_example():
    assert h_inverse(0.24381) == pytest.approx(0.25, abs=1e-4)


def test_h_rejects_out_of_range():
    for bad in (-0.5, 0.5, 0.7, math.nan):
        with pytest.raises(InvalidInputError):
            h(bad)
    with pytest.raises(InvalidInputError):
        h_inverse(math.inf)


def test_h_inverse_far_tails():
    assert -0.5 <= h_inverse(-50.0) < -0.499
    assert 0.499 < h_inverse(50.0) <= 0.5


def test_roundtrip_grid():
    xi = np.linspace(-0.49, 0.49, 10_000)
    assert np.max(np.abs(h_inverse(h(xi)) - xi)) < 1e-10


def test_strictly_increasing():
    xi = np.linspace(-0.499, 0.499, 5001)
    assert np.all(np.diff(h(xi)) > 0)


def test_near_identity():
    xi = np.linspace(-0.1, 0.1, 2001)
    assert np.max(np.abs(h(xi) - xi)) < 0.02


def test_inverse_derivative_matches_finite_difference():
    # beyond about phi = 1.3 the inverse saturates at 0.5 in float64
    phi = np.linspace(-2, 1.2, 33)
    eps = 1e-5
    fd = (h_inverse(phi + eps) - h_inverse(phi - eps)) / (2 * eps)
    np.testing.assert_allclose(h_inverse_derivative(phi), fd, rtol=1e-5)


def test_constants():
    assert (C_PHI, B_PHI, A_PHI) == (0.8, 0.39563, 0.062376)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-0.49, 0.49))
def test_link_roundtrip(mu, sigma, xi):
    back = link_inverse(link_forward(PPParameters(mu, sigma, xi)))
    assert back.mu == pytest.approx(mu, rel=1e-10)
    assert back.sigma == pytest.approx(sigma, rel=1e-10)
    assert back.xi == pytest.approx(xi, abs=1e-10)


def test_link_forward_components():
    t = link_forward(PPParameters(10.0, 5.0, 0.1))
    assert t.psi == pytest.approx(math.log(10))
    assert t.tau == pytest.approx(math.log(0.5))
    assert t.phi == pytest.approx(H_010, abs=1e-14)


def test_link_forward_requires_positive_location():
    with pytest.raises(InvalidInputError):
        link_forward(PPParameters(-1.0, 1.0, 0.0))


def test_transformed_parameters_finite():
    with pytest.raises(InvalidInputError):
        TransformedParameters(0.0, math.inf, 0.0)
