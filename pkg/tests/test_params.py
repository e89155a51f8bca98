import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwl.errors import ParamsError
from fwl.params import (ModelParams, drift_for_length, length_for_drift,
                        params_for_drift, params_for_population,
                        population_threshold)

PI_HALF = math.pi / 2.0


def test_boundary_at_zero_drift():
    assert length_for_drift(0.0) == pytest.approx(PI_HALF, abs=1e-15)


def test_boundary_closed_form_half():
    # arctan(-sqrt(3)) = -pi/3, so L(1/2) = 4 pi / (3 sqrt(3))
    assert length_for_drift(0.5) == pytest.approx(4 * math.pi / (3 * math.sqrt(3)),
                                                  abs=1e-14)


def test_boundary_high_drift_pinned():
    # quad-precision evaluation of the closed form
    assert length_for_drift(0.995) == pytest.approx(30.453600221721251, abs=1e-10)


def test_boundary_strictly_increasing():
    vals = [length_for_drift(b / 50.0) for b in range(50)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_drift_domain_errors():
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ParamsError):
            length_for_drift(bad)


def test_inverse_at_limit():
    assert drift_for_length(PI_HALF) == 0.0
    with pytest.raises(ParamsError):
        drift_for_length(PI_HALF - 1e-6)


def test_inverse_closed_form_case():
    assert drift_for_length(4 * math.pi / (3 * math.sqrt(3))) == pytest.approx(
        0.5, abs=1e-12)


def test_inverse_pinned_case():
    # bisection oracle at L = 17.93
    beta = drift_for_length(17.93)
    assert beta == pytest.approx(0.9861396052837048, abs=1e-12)
    assert abs(length_for_drift(beta) - 17.93) < 1e-10


@given(st.floats(min_value=0.0, max_value=0.9999))
@settings(max_examples=200, deadline=None)
def test_roundtrip_drift_boundary(beta):
    L = length_for_drift(beta)
    # dL/dbeta ~ L^3/pi^2 caps the fp-achievable residual for L >> 1
    tol = max(1e-10, L ** 3 * 4e-16)
    assert abs(length_for_drift(drift_for_length(L)) - L) < tol


def test_roundtrip_strict_tolerance_moderate_boundary():
    for L in (1.6, 2.4184, 8.0, 17.93, 30.45):
        assert abs(length_for_drift(drift_for_length(L)) - L) < 1e-10


def test_population_params_examples():
    p = params_for_population(10 ** 4, 0.5)
    expected = 0.5 * math.log(1e4) + 6 * math.log(math.log(1e4))
    assert p.L == pytest.approx(expected, abs=1e-10)
    assert p.N == 10 ** 4 and p.c == 0.5

    p = params_for_population(10 ** 6, 0.3)
    expected = 0.3 * math.log(1e6) + 6 * math.log(math.log(1e6))
    assert p.L == pytest.approx(expected, abs=1e-10)
    assert expected == pytest.approx(19.899, abs=5e-3)


def test_population_threshold_named_in_error():
    n0 = population_threshold(0.5)
    assert n0 == 4
    with pytest.raises(ParamsError, match=rf"N0={n0}"):
        params_for_population(n0 - 1, 0.5)
    # the threshold itself is accepted
    params_for_population(n0, 0.5)


def test_modelparams_coupling_enforced():
    with pytest.raises(ParamsError):
        ModelParams(beta=0.5, L=2.0)
    with pytest.raises(ParamsError):
        ModelParams(beta=0.5, L=length_for_drift(0.5), N=100, c=None)


def test_gamma_property(pars_half):
    assert pars_half.gamma == pytest.approx(math.sqrt(0.75), abs=1e-15)


def test_params_for_drift_roundtrip():
    p = params_for_drift(0.7)
    assert abs(p.L - length_for_drift(0.7)) < 1e-15
