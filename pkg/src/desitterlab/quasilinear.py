"""Picard iteration for quasilinear wave equations on the static patch.

Each step solves the linear problem with the metric and the nonlinearity frozen at
the previous iterate:

    (Box_{g(u_k)} - lambda + L) u_{k+1} = f + q(u_k, du_k).

Iterates are stored on the solver's output slices; the next step reads them
back with cubic interpolation in time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, FitError, ResidualError, SmallnessError
from .geometry import ConformalFamily, MetricFamily
from .resonance import ResonanceLattice
from .wavesolver import (
    Forcing,
    GridField,
    LinearProblem,
    SliceInterpolator,
    fd_derivatives,
    forcing_on_slices,
    forcing_norm_sq,
    operator_on_slices,
    rms_interior,
    solve_backward,
    solve_forward,
)

VECTOR_FIELDS = ("tau_dtau", "r_dr")


# ---------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class Term:
    """``coefficient * u**exponent * prod(X u for X in factors)``."""

    coefficient: float
    exponent: int
    factors: tuple[str, ...]

    def __post_init__(self):
        if self.exponent < 0:
            raise ConfigError("exponent must be non-negative")
        if len(self.factors) < 1:
            raise ConfigError("each term needs at least one vector-field factor")
        if self.exponent + len(self.factors) < 2:
            raise ConfigError("each term must be at least quadratic")
        bad = [f for f in self.factors if f not in VECTOR_FIELDS]
        if bad:
            raise ConfigError(f"unknown vector fields {bad}; use {VECTOR_FIELDS}")


@dataclass(frozen=True)
class Nonlinearity:
    terms: tuple[Term, ...] = ()
    box_coefficient: float = 0.0
    """Coefficient of ``u * Box_{g(u)} u``; nonzero requires a conformal family."""

    @property
    def box_term(self) -> bool:
        return self.box_coefficient != 0.0

    @property
    def is_zero(self) -> bool:
        return not self.terms and not self.box_term

    @classmethod
    def u_tau_dtau_u(cls, coefficient: float = 1.0) -> "Nonlinearity":
        """``q = u * tau d_tau u``."""
        return cls((Term(coefficient, 1, ("tau_dtau",)),))

    @classmethod
    def from_config(cls, cfg: dict) -> "Nonlinearity":
        cfg = dict(cfg)
        terms = tuple(Term(float(t.get("coefficient", 1.0)), int(t["exponent"]), tuple(t["factors"]))
                      for t in cfg.pop("terms", []))
        box = float(cfg.pop("box_coefficient", 0.0))
        if cfg:
            raise ConfigError(f"unknown nonlinearity keys: {sorted(cfg)}")
        return cls(terms, box)

    def evaluate(self, U, Ut, Ur, r, box=None) -> np.ndarray:
        out = np.zeros_like(np.asarray(U, float))
        for term in self.terms:
            val = term.coefficient * U ** term.exponent
            for X in term.factors:
                val = val * (-Ut if X == "tau_dtau" else r * Ur)
            out = out + val
        if self.box_term:
            if box is None:
                raise ValueError("box term needs Box_{g(u)} u")
            out = out + self.box_coefficient * U * box
        return out


# ---------------------------------------------------------------------------
# norms


def working_norm(U, Ut, Ur, t, r, n: int, weight: float = 0.0) -> float:
    """Weighted ``H^1``-type norm over the stored slices."""
    rho = r ** (n - 2)
    dens = (U * U + Ut * Ut + Ur * Ur) * rho
    per_t = np.trapezoid(dens, r, axis=1)
    return float(math.sqrt(max(np.trapezoid(np.exp(2.0 * weight * t) * per_t, t), 0.0)))


def slice_norm(V, t, r, n: int, weight: float = 0.0) -> float:
    rho = r ** (n - 2)
    per_t = np.trapezoid(V * V * rho, r, axis=1)
    return float(math.sqrt(max(np.trapezoid(np.exp(2.0 * weight * t) * per_t, t), 0.0)))


def field_norm(u: GridField, weight: float = 0.0) -> float:
    return working_norm(u.u, u.ut, u.ur, u.t, u.r, u.n, weight)


def field_distance(a: GridField, b: GridField | None, weight: float = 0.0) -> float:
    if b is None:
        return field_norm(a, weight)
    return working_norm(a.u - b.u, a.ut - b.ut, a.ur - b.ur, a.t, a.r, a.n, weight)


# ---------------------------------------------------------------------------
# conformal box identity


def _g0_pairing(r, At, Ar, Bt, Br):
    """Static-metric dual pairing ``G0(dA, dB)`` in ``(t, r)``."""
    return At * Bt + r * (At * Br + Ar * Bt) + (r * r - 1.0) * Ar * Br


def conformal_box(fam: MetricFamily, u: GridField, rhs: np.ndarray, lam: float,
                  prev: GridField | None) -> tuple[np.ndarray, np.ndarray]:
    """``(Box_{g0} u, Box_{g(u)} u)`` for ``g = Omega(u) g0`` from first derivatives only.

    ``u`` solved ``(Box_{g(prev)} - lambda) u = rhs``; with
    ``Box_{Omega g0} v = Omega^{-1} (Box_{g0} v - (n-2)/(2 Omega) G0(d Omega, dv))``
    both boxes follow without second derivatives of ``u``.
    """
    kind = fam.kind
    assert isinstance(kind, ConformalFamily)
    n = fam.n
    r = u.r
    k = (n - 2) / 2.0
    if prev is None:
        Up, Upt, Upr = np.zeros_like(u.u), np.zeros_like(u.u), np.zeros_like(u.u)
    else:
        Up, Upt, Upr = prev.u, prev.ut, prev.ur
    Om_p = kind.mu_fn(Up)
    dOm_p = kind.dmu_fn(Up)
    box0 = Om_p * (rhs + lam * u.u) + k / Om_p * _g0_pairing(r, dOm_p * Upt, dOm_p * Upr, u.ut, u.ur)
    Om = kind.mu_fn(u.u)
    dOm = kind.dmu_fn(u.u)
    box = (box0 - k / Om * _g0_pairing(r, dOm * u.ut, dOm * u.ur, u.ut, u.ur)) / Om
    return box0, box


# ---------------------------------------------------------------------------
# Picard loop


@dataclass
class Expansion:
    coefficients: dict
    remainder_exponent: float
    remainder_norm: float
    model: str
    alpha: float
    window: tuple[float, float]

    @property
    def meets_weight(self) -> bool:
        return self.remainder_exponent >= self.alpha


@dataclass
class IterationReport:
    iterates: int = 0
    deltas: list = field(default_factory=list)
    strengthened_deltas: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    final_residual: float = float("nan")
    residual_bound: float = float("nan")
    forcing_norm: float = 0.0
    converged: bool = False
    expansion: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PicardConfig:
    tol: float = 1e-10
    max_iter: int = 40
    smallness_gate: float = 1.0
    """Largest admissible weighted ``L^2`` norm of the forcing."""
    divergence_window: int = 5
    residual_constant: float = 5.0
    """Gate ``residual <= residual_constant * h**2 + tol``; ``inf`` disables it."""
    weight: float = 0.0


def _q_forcing(f: Forcing | None, q: Nonlinearity, prev: GridField | None, box_prev: np.ndarray | None):
    if prev is None or q.is_zero:
        return f
    arrays = [prev.u, prev.ut, prev.ur] + ([box_prev] if q.box_term else [])
    interp = SliceInterpolator(prev.t, *arrays)

    def forcing(t, r):
        vals = interp(t)
        box = vals[3] if q.box_term else None
        qv = q.evaluate(vals[0], vals[1], vals[2], r, box)
        return qv if f is None else np.asarray(f(t, r), float) + qv

    return forcing


def nonlinear_residual(u: GridField, fam: MetricFamily | None, q: Nonlinearity, forcing: Forcing | None,
                       base: LinearProblem) -> float:
    """RMS of ``(Box_{g(u)} - lambda + L) u - f - q(u, du, Box_{g(u)} u)`` from ``u`` slices alone."""
    prob = replace(base, family=fam, background=None, forcing=None)
    P = operator_on_slices(u, prob, frozen=u)
    wt, _, wr, *_ = fd_derivatives(u)
    box = P + base.lam * u.u
    if base.lower_order is not None:
        L = base.lower_order
        box = box - (-L.b_tau * wt + L.b_r * u.r * wr + L.b_0 * u.u)
    qv = q.evaluate(u.u, wt, wr, u.r, box)
    return rms_interior(P - forcing_on_slices(forcing, u) - qv)


def _check_family(fam: MetricFamily | None, q: Nonlinearity) -> None:
    if q.box_term and (fam is None or not isinstance(fam.kind, ConformalFamily)):
        raise ConfigError("a box term in q needs a conformal metric family")


def picard_solve(fam: MetricFamily | None, q: Nonlinearity, forcing: Forcing | None,
                 base: LinearProblem, cfg: PicardConfig = PicardConfig(),
                 backward: dict | None = None) -> tuple[GridField, IterationReport]:
    """Iterate ``u_{k+1} = S_{g(u_k)}(f + q(u_k))`` from ``u_0 = 0``.

    ``base`` carries dimension, mass, lower-order term, domain and grid.
    ``backward`` switches to backward solves: ``{"rate": r, "threshold": r_star}``.
    """
    _check_family(fam, q)
    report = IterationReport()
    base = replace(base, family=fam)

    def solve(prob: LinearProblem) -> GridField:
        if backward is None:
            return solve_forward(prob)
        return solve_backward(prob, backward["rate"], backward["threshold"], backward.get("t_end"))

    prev: GridField | None = None
    box_prev = None
    box0_prev = None
    ratio_run = 0
    fixed_map = q.is_zero and (fam is None or fam.constant)
    u = None
    for k in range(1, cfg.max_iter + 1):
        f_k = _q_forcing(forcing, q, prev, box_prev)
        prob = replace(base, forcing=f_k, background=None if fam is None or fam.constant else prev)
        u = solve(prob)
        if k == 1:
            fnorm = math.sqrt(forcing_norm_sq(forcing, u, cfg.weight))
            report.forcing_norm = fnorm
            if fnorm > cfg.smallness_gate:
                raise SmallnessError(f"forcing norm {fnorm:.3e} exceeds the gate {cfg.smallness_gate:.3e}")
        report.iterates = k
        delta = field_distance(u, prev, cfg.weight)
        report.deltas.append(delta)
        if q.box_term:
            rhs = forcing_on_slices(f_k, u)
            box0, box = conformal_box(fam, u, rhs, base.lam, prev)
            d0 = box0 if box0_prev is None else box0 - box0_prev
            report.strengthened_deltas.append(delta + slice_norm(d0, u.t, u.r, u.n, cfg.weight))
            box_prev, box0_prev = box, box0
        if len(report.deltas) >= 2 and report.deltas[-2] > 0:
            ratio = report.deltas[-1] / report.deltas[-2]
            report.contraction_ratios.append(ratio)
            ratio_run = ratio_run + 1 if ratio >= 1.0 else 0
            if ratio_run >= cfg.divergence_window:
                raise DivergenceError(f"{ratio_run} consecutive contraction ratios >= 1")
        scale = max(field_norm(u, cfg.weight), 1e-300)
        prev = u
        if fixed_map or delta <= cfg.tol * scale or delta == 0.0:
            report.converged = True
            break
    if not report.converged:
        raise DivergenceError(f"no convergence in {cfg.max_iter} iterations")
    res = nonlinear_residual(u, fam, q, forcing, base)
    bound = cfg.residual_constant * u.h ** 2 + cfg.tol
    report.final_residual = res
    report.residual_bound = bound
    if res > bound:
        raise ResidualError(f"nonlinear residual {res:.3e} exceeds {bound:.3e}")
    u.meta["iteration"] = {"iterates": report.iterates, "converged": report.converged}
    return u, report


def backward_quasilinear(fam: MetricFamily | None, q: Nonlinearity, forcing: Forcing,
                         base: LinearProblem, rate: float, threshold: float,
                         cfg: PicardConfig = PicardConfig(), t_end: float | None = None):
    """Picard loop on backward solves for forcing decaying faster than ``threshold``."""
    return picard_solve(fam, q, forcing, base, cfg,
                        backward={"rate": rate, "threshold": threshold, "t_end": t_end})


# ---------------------------------------------------------------------------
# expansion extraction and stability


def _fixed_columns(lattice: ResonanceLattice, alpha: float, t: np.ndarray, t0: float):
    cols, names = [], []
    for s, mult in lattice.entries:
        rate = -s.imag + 0.0
        if rate >= alpha:
            continue
        if s.real < -1e-12:
            continue  # the conjugate partner supplies cos and sin together
        e = np.exp(-rate * (t - t0))
        if abs(s.real) > 1e-12:
            om = abs(s.real)
            cols += [e * np.cos(om * t), e * np.sin(om * t)]
            names += [f"cos[{rate:g},{om:g}]", f"sin[{rate:g},{om:g}]"]
        else:
            cols.append(e)
            names.append(f"rate[{rate:g}]")
        if mult > 1:
            cols.append((t - t0) * e)
            names.append(f"log[{rate:g}]")
    return cols, names


def extract_expansion(u: GridField, lattice: ResonanceLattice, alpha: float, r_probe: float = 0.5,
                      window: tuple[float, float] | None = None, extra_probe: np.ndarray | None = None
                      ) -> Expansion:
    """Subtract the resonant terms with rate below ``alpha`` and fit the remainder's decay."""
    from scipy.optimize import minimize_scalar

    if not 0.0 < alpha:
        raise FitError("alpha must be positive")
    t, v = u.probe(r_probe)
    if extra_probe is not None:
        v = v + extra_probe
    if window is None:
        window = (t[0] + 0.5 * (t[-1] - t[0]), t[-1])
    m = (t >= window[0]) & (t <= window[1])
    t, v = t[m], v[m]
    t0 = t[0]
    cols, names = _fixed_columns(lattice, alpha, t, t0)

    def solve_for(k):
        e = np.exp(-k * (t - t0))
        A = np.stack(cols + [e], axis=1) if cols else e[:, None]
        w = np.exp(k * (t - t0))
        coef, *_ = np.linalg.lstsq(A * w[:, None], v * w, rcond=None)
        resid = (A @ coef - v) * w
        return float(np.sqrt(np.mean(resid ** 2))), coef

    fixed_rates = [-s.imag for s, _ in lattice.entries if -s.imag < alpha]
    k_lo = max(fixed_rates, default=0.0) + 0.05
    ks = np.linspace(k_lo, max(6.0, 2.0 * alpha), 120)

    def score(k):
        res, coef = solve_for(k)
        return res / (abs(coef[-1]) + 1e-300)

    i = int(np.argmin([score(k) for k in ks]))
    lo, hi = ks[max(i - 1, 0)], ks[min(i + 1, ks.size - 1)]
    opt = minimize_scalar(score, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    k = float(opt.x)
    score, coef = solve_for(k)
    amp = float(coef[-1] * math.exp(k * t0))
    shift = lambda name: math.exp(float(name.split("[")[1].split(",")[0].rstrip("]")) * t0)  # noqa: E731
    coefficients = {name: float(c) * shift(name) for name, c in zip(names, coef[:-1])}
    fixed = sum(c * col for c, col in zip(coef[:-1], cols)) if cols else 0.0
    rem = v - fixed
    model = "PurePower"
    if any(n.startswith("log") for n in names):
        model = "PowerLog"
    elif any(n.startswith("cos") for n in names):
        model = "OscillatoryPower"
    elif names == ["rate[0]"]:
        model = "PowerPlusConstant"
    if not np.isfinite(k) or not np.isfinite(score):
        raise FitError("remainder fit failed")
    coefficients["remainder_amplitude"] = amp
    return Expansion(coefficients, k, float(np.sqrt(np.mean(rem ** 2))), model, alpha,
                     (float(t[0]), float(t[-1])))


@dataclass
class StabilityReport:
    epsilons: list
    ratios: list
    base_iterates: int

    @property
    def spread(self) -> float:
        r = np.asarray(self.ratios)
        return float((r.max() - r.min()) / r.mean()) if r.size else 0.0


def stability_probe(fam: MetricFamily | None, q: Nonlinearity, forcing: Forcing, direction: Forcing,
                    base: LinearProblem, epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4),
                    cfg: PicardConfig = PicardConfig()) -> StabilityReport:
    """Lipschitz quotients ``||u(f + eps df) - u(f)|| / (eps ||df||)`` over a sweep of ``eps``."""
    u0, rep0 = picard_solve(fam, q, forcing, base, cfg)
    dnorm = math.sqrt(forcing_norm_sq(direction, u0, cfg.weight))
    ratios = []
    for eps in epsilons:
        if dnorm == 0.0:
            ratios.append(0.0)
            continue

        def f_eps(t, r, eps=eps):
            return np.asarray(forcing(t, r), float) + eps * np.asarray(direction(t, r), float)

        u1, _ = picard_solve(fam, q, f_eps, base, cfg)
        ratios.append(field_distance(u1, u0, cfg.weight) / (eps * dnorm))
    return StabilityReport(list(epsilons), ratios, rep0.iterates)


def amplitude_sweep(fam: MetricFamily | None, q: Nonlinearity, shape: Forcing, base: LinearProblem,
                    start: float = 0.05, factor: float = 2.0, max_steps: int = 12,
                    cfg: PicardConfig = PicardConfig()) -> dict:
    """Double the forcing amplitude until the loop fails; report the empirical radius."""
    cfg = replace(cfg, smallness_gate=math.inf)
    records = []
    amp = start
    last_ok = None
    for _ in range(max_steps):
        def f(t, r, a=amp):
            return a * np.asarray(shape(t, r), float)
        try:
            _, rep = picard_solve(fam, q, f, base, cfg)
            ratio = max(rep.contraction_ratios) if rep.contraction_ratios else 0.0
            records.append({"amplitude": amp, "status": "converged", "iterates": rep.iterates,
                            "max_ratio": ratio, "forcing_norm": rep.forcing_norm})
            last_ok = amp
        except Exception as exc:  # boundary of the contraction region
            records.append({"amplitude": amp, "status": type(exc).__name__, "detail": str(exc)})
            break
        amp *= factor
    return {"records": records, "largest_converged_amplitude": last_ok}
