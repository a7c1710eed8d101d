from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desitterlab.errors import FitError
from desitterlab.resonance import (
    Box,
    DecayModel,
    analytic_lattice,
    fit_decay,
    indicial_roots,
    mode_lattice,
    numeric_poles,
    select_decay_model,
)


def test_massless_lattice():
    lat = analytic_lattice(4, 0.0, 4)
    sig = lat.sigmas()
    assert sig[:3] == [0j, -1j, -2j]
    assert lat.multiplicity_of(-3j) == 2
    assert all(s.imag <= -1 for s in sig if s != 0)


def test_double_pole_at_critical_mass():
    s, mult = analytic_lattice(4, 9 / 4, 3).leading()
    assert s == pytest.approx(-1.5j, abs=1e-12)
    assert mult == 2


def test_simple_leading_pole_for_lambda_two():
    sp_, sm_ = indicial_roots(4, 2.0)
    assert (sp_, sm_) == (pytest.approx(-1.0), pytest.approx(-2.0))
    s, mult = analytic_lattice(4, 2.0, 3).leading()
    assert s == pytest.approx(-1j) and mult == 1


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 8), lam=st.floats(-2.0, 20.0))
def test_indicial_roots_sum(n, lam):
    a, b = indicial_roots(n, lam)
    assert a + b == pytest.approx(-(n - 1), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 8), lam=st.floats(0.0, 20.0))
def test_lattice_shape(n, lam):
    lat = analytic_lattice(n, lam, 3)
    crit = (n - 1) ** 2 / 4
    sig = lat.sigmas()
    assert all(sig[i].imag >= sig[i + 1].imag for i in range(len(sig) - 1))
    if lam <= crit:
        assert all(abs(s.real) < 1e-12 for s in sig)
    else:
        for s in sig:
            assert any(abs(s + np.conj(q)) < 1e-9 for q in sig)  # mirror pair -conj(sigma)
    if abs(lam - crit) > 1e-6:
        assert lat.leading()[1] == 1


@pytest.mark.parametrize(
    "lam, l, center",
    [(0.0, 1, -1j), (2.0, 0, -1j), (0.0, 0, 0j), (0.0, 0, -2j), (2.0, 0, -2j), (13 / 4, 0, -1.5j + 1.0)],
)
def test_shooting_matches_lattice(lam, l, center):
    poles = numeric_poles(4, lam, l, Box.around(center, 0.3))
    assert len(poles) == 1
    assert abs(poles[0] - center) < 1e-3
    assert mode_lattice(4, lam, l, 6).distance(poles[0]) < 1e-3


def test_massless_l0_has_no_pole_near_minus_i():
    assert numeric_poles(4, 0.0, 0, Box.around(-1j, 0.3)) == []


def test_empty_box():
    assert numeric_poles(4, 2.0, 0, Box(0.5, 1.0, -0.4, -0.1)) == []


def test_mode_lattices_cover_full_lattice():
    full = analytic_lattice(4, 2.0, 4)
    for l in range(4):
        for s in mode_lattice(4, 2.0, l, 3).sigmas():
            if -s.imag <= 4:
                assert full.distance(s) < 1e-12


# ---- decay fits

T = np.linspace(0.0, 12.0, 600)


def test_constant_plus_power():
    fit = fit_decay(T, 2 + 0.5 * np.exp(-T), DecayModel.POWER_PLUS_CONSTANT)
    assert fit.coefficients["c"] == pytest.approx(2.0, abs=1e-9)
    assert fit.exponent == pytest.approx(1.0, abs=1e-9)
    assert fit.residual < 1e-10


def test_oscillatory():
    fit = fit_decay(T, np.exp(-1.5 * T) * np.cos(T), "OscillatoryPower")
    assert fit.exponent == pytest.approx(1.5, abs=1e-6)
    assert fit.frequency == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize(
    "u, model",
    [
        (3 * np.exp(-0.7 * T), DecayModel.PURE_POWER),
        (1 + np.exp(-0.7 * T), DecayModel.POWER_PLUS_CONSTANT),
        ((1 + 2 * T) * np.exp(-1.5 * T), DecayModel.POWER_LOG),
        (np.exp(-1.5 * T) * np.sin(2 * T + 0.3), DecayModel.OSCILLATORY_POWER),
    ],
)
def test_model_selection(u, model):
    assert select_decay_model(T, u).model is model


def test_fit_error_on_bad_model():
    with pytest.raises(FitError):
        fit_decay(T, np.exp(-T) * np.cos(3 * T), DecayModel.PURE_POWER, max_residual=1e-6)
    with pytest.raises(FitError):
        fit_decay(T[:4], T[:4], DecayModel.PURE_POWER)


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.2, 3.0), a=st.floats(0.1, 10.0))
def test_pure_power_recovers_rate(k, a):
    fit = fit_decay(T, a * np.exp(-k * T), DecayModel.PURE_POWER, window=(2.0, 10.0))
    assert fit.exponent == pytest.approx(k, rel=1e-6)
    assert fit.window == pytest.approx((2.0, 10.0), abs=0.05)
