from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from desitterlab.errors import ConfigError, DivergenceError, ResidualError, SmallnessError
from desitterlab.geometry import conformal_family, desitter_family
from desitterlab.quasilinear import (
    Nonlinearity,
    PicardConfig,
    Term,
    amplitude_sweep,
    extract_expansion,
    picard_solve,
    stability_probe,
)
from desitterlab.resonance import analytic_lattice
from desitterlab.wavesolver import Grid, GridField, LinearProblem, bump_forcing, solve_forward

SHAPE = ((0.5, 2.5), (0.8, 1.04))


def _base(n_r=40, t_end=6.0):
    return LinearProblem(grid=Grid(n_r=n_r, t_end=t_end), forcing_onset=0.5)


def _forcing(amp=0.3):
    return bump_forcing(amp, *SHAPE)


@pytest.mark.parametrize("args", [(1.0, -1, ("tau_dtau",)), (1.0, 2, ()), (1.0, 0, ("r_dr",)),
                                  (1.0, 1, ("d_phi",))])
def test_term_validation(args):
    with pytest.raises(ConfigError):
        Term(*args)


def test_from_config():
    q = Nonlinearity.from_config({"terms": [{"coefficient": 2, "exponent": 0, "factors": ["tau_dtau", "r_dr"]}]})
    assert q.terms == (Term(2.0, 0, ("tau_dtau", "r_dr")),)
    with pytest.raises(ConfigError):
        Nonlinearity.from_config({"terms": [], "cubic": 1})


def test_evaluate_signs():
    # tau d_tau = -d_t in t = -log tau
    q = Nonlinearity.u_tau_dtau_u(2.0)
    assert q.evaluate(np.array(3.0), np.array(5.0), np.array(0.0), np.array(0.5)) == pytest.approx(-30.0)
    with pytest.raises(ValueError):
        Nonlinearity(box_coefficient=1.0).evaluate(1.0, 0.0, 0.0, 0.5)


def test_box_term_needs_conformal_family():
    with pytest.raises(ConfigError):
        picard_solve(desitter_family(4), Nonlinearity(box_coefficient=0.5), _forcing(), _base())


def test_zero_nonlinearity_is_one_linear_solve():
    f = _forcing()
    u, rep = picard_solve(None, Nonlinearity(), f, _base())
    ref = solve_forward(replace(_base(), forcing=f))
    assert rep.iterates == 1
    assert np.array_equal(u.u, ref.u)


def test_conformal_picard_converges():
    fam = conformal_family(4, power=2, scale=1.0)
    u, rep = picard_solve(fam, Nonlinearity.u_tau_dtau_u(), _forcing(), _base())
    assert rep.converged
    assert max(rep.contraction_ratios) < 0.5
    assert rep.final_residual <= rep.residual_bound
    # deltas fall geometrically down to the tolerance floor
    d = np.asarray(rep.deltas)
    assert np.all(d[1:] < d[:-1])
    assert u.forward_support


def test_smaller_forcing_contracts_faster():
    fam = conformal_family(4, power=2, scale=1.0)
    q = Nonlinearity.u_tau_dtau_u()
    cfg = PicardConfig(tol=1e-9)
    ratios = []
    for amp in (0.4, 0.2):
        _, rep = picard_solve(fam, q, _forcing(amp), _base(t_end=4.0), cfg)
        ratios.append(rep.contraction_ratios[0])
    assert ratios[1] <= ratios[0]


def test_smallness_gate():
    with pytest.raises(SmallnessError):
        picard_solve(None, Nonlinearity.u_tau_dtau_u(), _forcing(), _base(), PicardConfig(smallness_gate=1e-6))


def test_divergence_reported():
    with pytest.raises(DivergenceError, match="no convergence"):
        picard_solve(None, Nonlinearity.u_tau_dtau_u(), _forcing(), _base(), PicardConfig(tol=0.0, max_iter=2))


def test_residual_gate():
    with pytest.raises(ResidualError):
        picard_solve(None, Nonlinearity.u_tau_dtau_u(), _forcing(), _base(n_r=20),
                     PicardConfig(residual_constant=1e-6))


def test_stability_probe_quotients_agree():
    q = Nonlinearity.u_tau_dtau_u()
    rep = stability_probe(None, q, _forcing(), bump_forcing(1.0, (1.0, 2.0), (0.2, 0.6)), _base(n_r=30, t_end=4.0))
    assert rep.spread < 0.2
    assert all(r > 0 for r in rep.ratios)


def test_amplitude_sweep_records_failure():
    out = amplitude_sweep(None, Nonlinearity.u_tau_dtau_u(), _forcing(1.0), _base(n_r=20, t_end=4.0),
                          start=1.0, factor=8.0, max_steps=4, cfg=PicardConfig(max_iter=15))
    statuses = [r["status"] for r in out["records"]]
    assert statuses[0] == "converged"
    assert statuses[-1] != "converged"
    assert out["largest_converged_amplitude"] >= 1.0


def _synthetic(profile):
    t = np.linspace(0.0, 20.0, 801)
    r = np.linspace(0.0, 1.05, 22)
    u = profile(t)[:, None] * np.ones_like(r)
    z = np.zeros_like(u)
    return GridField(t, r, u, z, z, 4)


@pytest.mark.parametrize("alpha, profile, rate, fixed", [
    (0.9, lambda t: 2.0 + 0.5 * np.exp(-t), 1.0, {"rate[0]": 2.0}),
    (1.5, lambda t: 2.0 - 0.7 * np.exp(-t) + 0.25 * np.exp(-2.0 * t), 2.0, {"rate[0]": 2.0, "rate[1]": -0.7}),
])
def test_extract_expansion_synthetic(alpha, profile, rate, fixed):
    exp = extract_expansion(_synthetic(profile), analytic_lattice(4, 0.0, 6), alpha, window=(5.0, 15.0))
    assert exp.remainder_exponent == pytest.approx(rate, abs=1e-3)
    assert exp.meets_weight
    for name, c in fixed.items():
        assert exp.coefficients[name] == pytest.approx(c, rel=1e-4)
    if alpha < 1:
        assert exp.model == "PowerPlusConstant"
