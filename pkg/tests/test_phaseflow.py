from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from desitterlab.errors import ChartDomainError
from desitterlab.geometry import ChartPoint, Covector
from desitterlab.phaseflow import (
    CotangentPoint,
    Direction,
    ScanConfig,
    Termination,
    hamilton_field,
    integrate,
    linearization_eigenvalues,
    nontrapping_scan,
    radial_point,
    radial_set_residual,
    rescaled_divergence,
    rescaled_field,
    rescaled_state,
    sample_seeds,
)

OMEGA = [0.0, 0.0, 1.0]


def _expected_spectrum(n: int) -> list[float]:
    # -4 on (rho, eta, sigma) directions, -8 on mu - sigma, +4 on tau, 0 along the sphere
    return sorted([-4.0] * n + [-8.0, 4.0] + [0.0] * (n - 2))


@pytest.mark.parametrize("mu, sigma, xi, expected", [(0.0, 0.0, 2.0, 0.0), (0.1, 0.0, 1.0, 0.1)])
def test_radial_residual_hand_values(mu, sigma, xi, expected):
    pt = CotangentPoint(ChartPoint.horizon(mu, OMEGA), Covector.horizon(xi, [0, 0, 0], sigma))
    assert radial_set_residual(pt) == pytest.approx(expected, abs=1e-15)


def test_radial_residual_needs_nonzero_xi():
    pt = CotangentPoint(ChartPoint.horizon(0.0, OMEGA), Covector.horizon(0.0, [0, 0, 0], 1.0))
    with pytest.raises(ChartDomainError):
        radial_set_residual(pt)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("which", [1, -1])
def test_linearization_spectrum(n, which):
    ev = linearization_eigenvalues(radial_point(n, which))
    np.testing.assert_allclose(ev, _expected_spectrum(n), atol=1e-6)


@pytest.mark.parametrize("n", [2, 4])
def test_trace_equals_divergence(n):
    pt = radial_point(n)
    assert rescaled_divergence(pt) == pytest.approx(sum(_expected_spectrum(n)), abs=1e-6)


def test_linearization_rejects_non_radial_points():
    pt = CotangentPoint(ChartPoint.horizon(0.2, OMEGA), Covector.horizon(1.0, [0, 0, 0], 0.0))
    with pytest.raises(ChartDomainError):
        linearization_eigenvalues(pt)


def test_sigma_component_vanishes_symbolically():
    # the symbol does not depend on log tau, so the sigma-component of H_p is identically zero
    mu, xi, sig, eta2, tau = sp.symbols("mu xi sigma eta2 tau")
    r2 = 1 - mu
    p = -4 * r2 * mu * xi**2 + 4 * r2 * sig * xi + sig**2 - eta2 / r2
    assert sp.simplify(tau * sp.diff(p, tau)) == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sigma_component_vanishes_numerically(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    w /= np.linalg.norm(w)
    eta = rng.normal(size=3)
    eta -= (eta @ w) * w
    pt = CotangentPoint(ChartPoint.horizon(rng.uniform(-0.1, 0.9), w, rng.uniform(0, 1)),
                        Covector.horizon(rng.normal(), eta, rng.normal()))
    assert hamilton_field(pt).dsigma == 0.0


@pytest.mark.parametrize("which", [1, -1])
def test_radial_points_are_stationary(which):
    pt = radial_point(4, which, omega=[0.6, 0.0, 0.8])
    state, _ = rescaled_state(pt)
    v = rescaled_field(state, 4)
    k = 4  # index of rho_hat in (mu, a1, a2, tau, rho_hat, eta_hat, sigma_hat)
    # fixed on the fibre-infinity slice rho_hat = 0; rho_hat itself contracts at rate 4
    assert np.abs(np.delete(v, k)).max() < 1e-10
    assert v[k] == pytest.approx(-4.0 * state[k], abs=1e-12)


@pytest.mark.parametrize("comp, allowed", [(1, {Termination.HIT_H1, Termination.CONVERGED_LPLUS}),
                                           (-1, {Termination.HIT_H2, Termination.CONVERGED_LMINUS})])
def test_trajectories_conserve_symbol(comp, allowed):
    cfg = ScanConfig(samples_per_component=12, seed=3)
    for seed in sample_seeds(cfg, comp, np.random.default_rng(11)):
        tr = integrate(seed, Direction.FORWARD)
        assert tr.termination in allowed
        assert tr.p_drift < 1e-8
        assert tr.component == comp


def test_seed_components_are_labelled():
    cfg = ScanConfig(samples_per_component=50, seed=5)
    for comp in (1, -1):
        for pt in sample_seeds(cfg, comp, np.random.default_rng(comp + 2)):
            c = pt.center()
            val = c.fiber.sigma - float(c.base.Y @ c.fiber.zeta)
            assert np.sign(val) == comp and val != 0.0


def test_trajectory_csv_has_header():
    cfg = ScanConfig(samples_per_component=1, seed=0)
    tr = integrate(sample_seeds(cfg, 1, np.random.default_rng(0))[0])
    head = tr.to_csv().splitlines()[0]
    assert head.startswith("s,") and "component" in head


def test_small_scan_is_reproducible_and_clean():
    cfg = ScanConfig(samples_per_component=25, seed=7)
    a, b = nontrapping_scan(cfg), nontrapping_scan(cfg)
    assert a == b
    assert a["failures"] == 0 and a["total"] == 50


def test_parallel_scan_matches_serial():
    cfg = ScanConfig(samples_per_component=10, seed=2)
    par = nontrapping_scan(ScanConfig(samples_per_component=10, seed=2, workers=2))
    ser = nontrapping_scan(cfg)
    for name in ("future", "past"):
        assert par[name]["total"] == ser[name]["total"]
        assert par[name]["failures"] == ser[name]["failures"]


def test_perturbed_scan_reaches_neighbourhoods():
    cfg = ScanConfig(samples_per_component=20, seed=1, perturbation_eps=0.02, neighborhood_radius=1e-3)
    assert nontrapping_scan(cfg)["failures"] == 0
