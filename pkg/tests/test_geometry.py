from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desitterlab.errors import ChartDomainError, ConfigError, SignatureError
from desitterlab.geometry import (
    ChartPoint,
    Covector,
    Domain,
    check_signature,
    component_sign,
    conformal_family,
    covector_to_center,
    covector_to_horizon,
    desitter_family,
    desitter_metric,
    dual_bilinear,
    dual_quadform,
    family_from_config,
    metric_at,
    pairing,
    quadratic_polynomial_family,
    timelike_character,
)

OMEGA = [0.0, 0.0, 1.0]
ZERO3 = [0.0, 0.0, 0.0]

unit = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1)
small = st.floats(-5, 5, allow_nan=False)


# ---- dual quadratic form


@pytest.mark.parametrize(
    "mu, xi, sigma, expected",
    [
        (0.0, 1.0, 0.0, 0.0),  # every term carries mu or sigma
        (0.0, 1.0, -4.0, 0.0),  # sigma^2 + 4 sigma at sigma = -4
        (0.5, 0.0, 0.0, 0.0),
        (0.5, 1.0, 0.0, -4 * 0.5 * 0.5),
        (0.0, 0.0, 3.0, 9.0),
    ],
)
def test_quadform_hand_values(mu, xi, sigma, expected):
    pt = ChartPoint.horizon(mu, OMEGA)
    assert dual_quadform(pt, Covector.horizon(xi, ZERO3, sigma)) == pytest.approx(expected, abs=1e-14)


def test_null_point_with_negative_sigma_is_in_past_half():
    pt = ChartPoint.horizon(0.0, OMEGA)
    cv = Covector.horizon(1.0, ZERO3, -4.0)
    assert dual_quadform(pt, cv) == pytest.approx(0.0, abs=1e-14)
    assert component_sign(pt, cv) == -1


def test_angular_term_singular_at_center():
    with pytest.raises(ChartDomainError):
        dual_quadform(ChartPoint.horizon(1.0, OMEGA), Covector.horizon(0.0, [1.0, 0.0, 0.0], 0.0))


@settings(max_examples=200, deadline=None)
@given(w=unit, r=st.floats(0.05, 0.95), xi=small, eta=st.lists(small, min_size=3, max_size=3), sigma=small)
def test_chart_formulas_agree(w, r, xi, eta, sigma):
    w = np.asarray(w) / np.linalg.norm(w)
    eta = np.asarray(eta) - (np.asarray(eta) @ w) * w  # tangent to the sphere at w
    pt = ChartPoint.horizon(1.0 - r * r, w)
    h = Covector.horizon(xi, eta, sigma)
    c = covector_to_center(pt, h)
    p_h, p_c = dual_quadform(pt, h), dual_quadform(pt.to_center(), c)
    assert abs(p_h - p_c) < 1e-10 * (1 + abs(p_h))
    back = covector_to_horizon(pt, c)
    assert back.xi == pytest.approx(xi, abs=1e-10 * (1 + abs(xi)))
    np.testing.assert_allclose(back.eta, eta, atol=1e-10 * (1 + np.abs(eta).max()))


@settings(max_examples=100, deadline=None)
@given(w=unit, r=st.floats(0.05, 0.95), zeta=st.lists(small, min_size=3, max_size=3), sigma=small,
       dY=st.lists(small, min_size=3, max_size=3), dlt=small)
def test_pairing_preserved_by_chart_change(w, r, zeta, sigma, dY, dlt):
    w = np.asarray(w) / np.linalg.norm(w)
    pt = ChartPoint.center(r * w)
    c = Covector.center(zeta, sigma)
    h = covector_to_horizon(pt, c)
    a, b = pairing(pt, c, np.asarray(dY), dlt), pairing(pt, h, np.asarray(dY), dlt)
    assert abs(a - b) < 1e-10 * (1 + abs(a))


@settings(max_examples=100, deadline=None)
@given(w=unit, r=st.floats(0.01, 1.04))
def test_point_round_trip(w, r):
    w = np.asarray(w) / np.linalg.norm(w)
    pt = ChartPoint.center(r * w, 0.3)
    back = pt.to_horizon().to_center()
    np.testing.assert_allclose(back.Y, pt.Y, rtol=1e-12, atol=1e-14)


# ---- timelike characters


def test_timelike_characters():
    dom = Domain(0.1, 1.0)
    assert timelike_character("dtau/tau", dom) == pytest.approx(1.0, abs=1e-14)
    assert timelike_character("dt2", dom) == pytest.approx(4 * 0.1 * 1.1, abs=1e-14)
    assert timelike_character("dt1.dt2", dom) == pytest.approx(-4.4, abs=1e-14)
    assert timelike_character("dt1", dom) == pytest.approx(1.0, abs=1e-14)


def test_cross_term_is_twice_the_polarization():
    dom = Domain(0.1, 1.0)
    corner = ChartPoint.horizon(-0.1, OMEGA, 1.0)
    g = dual_bilinear(corner, Covector.horizon(0.0, ZERO3, -1.0), Covector.horizon(1.0, ZERO3, 0.0))
    assert timelike_character("dt1.dt2", dom) == pytest.approx(2.0 * g, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(delta=st.floats(0.01, 0.5), tau0=st.floats(0.1, 5.0))
def test_characters_have_opposite_time_orientation(delta, tau0):
    dom = Domain(delta, tau0)
    assert timelike_character("dt1.dt2", dom) == pytest.approx(-4 * (1 + delta) * tau0, rel=1e-12)
    assert timelike_character("dt2", dom) == pytest.approx(4 * delta * (1 + delta), rel=1e-12)


def test_domain_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        Domain(0.0, 1.0)
    with pytest.raises(ConfigError):
        Domain(0.1, -1.0)


# ---- metric families


def test_base_family_is_static_metric():
    fam = desitter_family(4)
    mu = np.linspace(-0.1, 0.9, 11)
    np.testing.assert_allclose(fam.evaluate(0.0, mu), desitter_metric(mu, 4), atol=1e-15)


def test_conformal_family_scales_entrywise():
    fam = conformal_family(4, power=1, scale=1.0)
    pt = ChartPoint.horizon(0.3, OMEGA)
    np.testing.assert_allclose(metric_at(fam, 0.1, pt), 1.1 * metric_at(fam, 0.0, pt), rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-0.5, 0.5), mu=st.floats(-0.1, 0.95))
def test_polynomial_family_stays_lorentzian_for_small_u(u, mu):
    fam = quadratic_polynomial_family(4, eps=1.0)
    g = fam.evaluate(u, mu)
    np.testing.assert_allclose(g, np.swapaxes(g, -1, -2))
    check_signature(g)


def test_signature_violation_raises():
    fam = conformal_family(4, power=1, scale=1.0)
    with pytest.raises(SignatureError):
        metric_at(fam, -1.0, ChartPoint.horizon(0.3, OMEGA))  # conformal factor vanishes
    with pytest.raises(SignatureError):
        check_signature(np.full((4, 4), np.nan))


def test_bilinear_is_polarization():
    pt = ChartPoint.horizon(0.2, OMEGA)
    a = Covector.horizon(1.0, [0.3, 0.0, 0.0], 0.5)
    assert dual_bilinear(pt, a, a) == pytest.approx(dual_quadform(pt, a), rel=1e-14)


@pytest.mark.parametrize(
    "cfg, err",
    [
        ({"dimension": 4, "family": {"kind": "banana"}}, ConfigError),
        ({"dimension": 4, "colour": 1}, ConfigError),
        ({"dimension": 1}, ConfigError),
    ],
)
def test_family_config_rejects(cfg, err):
    with pytest.raises(err):
        family_from_config(cfg)


@pytest.mark.parametrize("kind, coef", [("desitter", {}), ("conformal", {"power": 2, "scale": 1.0}),
                                        ("perturbed", {"eps": 0.02}), ("polynomial", {"eps": 1.0})])
def test_family_config_kinds(kind, coef):
    fam = family_from_config({"dimension": 4, "delta": 0.1, "tau0": 1.0,
                              "family": {"kind": kind, "coefficients": coef}})
    check_signature(fam.evaluate(0.0, np.linspace(-0.1, 0.9, 7)))
