"""Resonances of the static de Sitter wave operator and decay fits.

Separating ``u = tau**a * r**l * w(mu) * Y_l`` in the wave/Klein-Gordon equation
for the static metric gives the radial equation

    4 mu (1 - mu) w'' + [(4 - 4a) + (4a - 4l - 2n - 2) mu] w' + P0(a) w = 0,
    P0(a) = -a**2 + (n - 1 + 2l) a - l (l + n - 1) - lambda,

in ``mu = 1 - r**2``. It has regular singular points at the horizon ``mu = 0``
(exponents ``0`` and ``a``) and at the center ``mu = 1`` (exponents ``0`` and
``(3 - n)/2 - l``). A resonance is a value of ``a`` for which the solution that
is smooth at the center continues the exponent-0 solution at the horizon.
In terms of the Mellin dual variable ``sigma = -i a`` these sit at
``-i (l + 2N + Delta_pm)`` with ``Delta_pm = (n-1)/2 -+ sqrt((n-1)**2/4 - lambda)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares
from scipy.special import rgamma

from .errors import ConvergenceError, FitError

MERGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# analytic lattice


def indicial_roots(n: int, lam: float) -> tuple[complex, complex]:
    """``s_hat_pm = -(n-1)/2 +- sqrt((n-1)**2/4 - lambda)``."""
    half = (n - 1) / 2.0
    disc = complex(half * half - lam)
    root = np.sqrt(disc)
    return complex(-half + root), complex(-half - root)


@dataclass
class ResonanceLattice:
    n: int
    lam: float
    entries: list[tuple[complex, int]]

    def sigmas(self) -> list[complex]:
        return [s for s, _ in self.entries]

    def rates(self) -> list[float]:
        """Decay rates ``-Im sigma`` in ``t = -log tau``, in lattice order."""
        return [-s.imag for s, _ in self.entries]

    def leading(self) -> tuple[complex, int]:
        return self.entries[0]

    def leading_decay_rate(self) -> float:
        """Smallest positive decay rate; a zero resonance (a constant mode) is skipped."""
        for s, _ in self.entries:
            if -s.imag > MERGE_TOL:
                return -s.imag
        raise ValueError("lattice has no decaying entries")

    def multiplicity_of(self, sigma: complex, tol: float = 1e-9) -> int:
        for s, m in self.entries:
            if abs(s - sigma) < tol:
                return m
        return 0

    def distance(self, sigma: complex) -> float:
        return min(abs(sigma - s) for s, _ in self.entries)

    def to_dict(self) -> dict:
        return {"n": self.n, "lambda": self.lam,
                "entries": [{"re": s.real, "im": s.imag, "multiplicity": m} for s, m in self.entries]}


def _merge(raw: Sequence[complex]) -> list[tuple[complex, int]]:
    merged: list[list] = []
    for s in raw:
        for item in merged:
            if abs(item[0] - s) < MERGE_TOL * max(1.0, abs(s)):
                item[1] += 1
                break
        else:
            merged.append([s, 1])
    merged.sort(key=lambda it: (-it[0].imag, it[0].real))
    return [(complex(s), m) for s, m in merged]


def analytic_lattice(n: int, lam: float, N_max: int) -> ResonanceLattice:
    """All ``i s_hat_pm - i N`` for ``0 <= N <= N_max``, merged and sorted by decreasing ``Im``."""
    if n < 2 or N_max < 0:
        raise ValueError("need n >= 2 and N_max >= 0")
    sp, sm = indicial_roots(n, lam)
    raw = [1j * s - 1j * N for s in (sp, sm) for N in range(N_max + 1)]
    # keep only depths reached by both branches so merged multiplicities are complete
    cutoff = -max(sp.real, sm.real) + N_max + MERGE_TOL
    raw = [s for s in raw if -s.imag <= cutoff]
    return ResonanceLattice(n, lam, _merge(raw))


def mode_lattice(n: int, lam: float, l: int, N_max: int) -> ResonanceLattice:
    """Resonances of the degree-``l`` radial equation: ``-i (l + 2N + Delta_pm)``."""
    sp, sm = indicial_roots(n, lam)
    raw = [-1j * (l + 2 * N - s) for s in (sp, sm) for N in range(N_max + 1)]
    return ResonanceLattice(n, lam, _merge(raw))


# ---------------------------------------------------------------------------
# shooting


def _radial_coefficients(a: complex, n: int, lam: float, l: int):
    p1_0 = 4.0 - 4.0 * a
    p1_1 = 4.0 * a - 4.0 * l - 2.0 * n - 2.0
    p0 = -a * a + (n - 1 + 2 * l) * a - l * (l + n - 1) - lam
    return p1_0, p1_1, p0


def _q(k: int, a: complex, n: int, l: int, p0: complex) -> complex:
    # shared numerator of both Frobenius recurrences
    return 4.0 * k * (k - 1) - (4.0 * a - 4.0 * l - 2.0 * n - 2.0) * k - p0


def horizon_series(a: complex, n: int, lam: float, l: int, mu: float, terms: int = 400):
    """Exponent-0 solution at ``mu = 0``, divided by ``Gamma(1 - a)`` so it is entire in ``a``.

    Returns ``(w, dw/dmu)``; needs ``|mu| < 1``.
    """
    _, _, p0 = _radial_coefficients(a, n, lam, l)
    # c_k = T_k / Gamma(k + 1 - a); use the Gamma form until k + 1 - a is safely
    # off the non-positive integers, then the plain ratio (T_k alone grows like k!)
    k_switch = max(0, int(math.ceil(a.real))) + 1
    T = 1.0 + 0j
    c = 0j
    w = 0j
    dw = 0j
    for k in range(terms):
        if k <= k_switch:
            c = T * rgamma(1.0 - a + k)
            T = T * _q(k, a, n, l, p0) / (4.0 * (k + 1))
        term = c * mu ** k
        w += term
        if k:
            dw += k * c * mu ** (k - 1)
        if k > k_switch + 10 and abs(term) < 1e-18 * max(1.0, abs(w)):
            break
        if k >= k_switch:
            c = c * _q(k, a, n, l, p0) / (4.0 * (k + 1) * (k + 1 - a))
    return w, dw


def center_series(a: complex, n: int, lam: float, l: int, s: float, terms: int = 400):
    """Solution regular at the center, in ``s = 1 - mu``; returns ``(w, dw/dmu)``."""
    _, _, p0 = _radial_coefficients(a, n, lam, l)
    c = 1.0 + 0j
    w = 0j
    dws = 0j
    for k in range(terms):
        w += c * s ** k
        if k:
            dws += k * c * s ** (k - 1)
        nxt = c * _q(k, a, n, l, p0) / ((k + 1) * (4.0 * k + 4.0 * l + 2.0 * n - 2.0))
        if k > 10 and abs(nxt) * s ** (k + 1) < 1e-18 * max(1.0, abs(w)):
            break
        c = nxt
    return w, -dws


def mismatch(sigma: complex, n: int, lam: float, l: int, mu_c: float = 0.9, mu_m: float = 0.5,
             rtol: float = 1e-12) -> complex:
    """Wronskian of the center and horizon solutions at ``mu_m``; zero exactly at resonances."""
    a = 1j * sigma
    p1_0, p1_1, p0 = _radial_coefficients(a, n, lam, l)
    w0, dw0 = center_series(a, n, lam, l, 1.0 - mu_c)

    def rhs(mu, y):
        p2 = 4.0 * mu * (1.0 - mu)
        return [y[1], -((p1_0 + p1_1 * mu) * y[1] + p0 * y[0]) / p2]

    sol = solve_ivp(rhs, (mu_c, mu_m), [w0, dw0], method="DOP853", rtol=rtol, atol=1e-14)
    wc, dwc = sol.y[0, -1], sol.y[1, -1]
    wh, dwh = horizon_series(a, n, lam, l, mu_m)
    return complex(wc * dwh - dwc * wh)


@dataclass(frozen=True)
class Box:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def contains(self, z: complex) -> bool:
        return self.re_min < z.real < self.re_max and self.im_min < z.imag < self.im_max

    @classmethod
    def around(cls, center: complex, half: float) -> "Box":
        return cls(center.real - half, center.real + half, center.imag - half, center.imag + half)


def _contour(box: Box, per_side: int):
    x, w = np.polynomial.legendre.leggauss(per_side)
    corners = [complex(box.re_min, box.im_min), complex(box.re_max, box.im_min),
               complex(box.re_max, box.im_max), complex(box.re_min, box.im_max)]
    nodes, weights = [], []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        nodes.extend(0.5 * (a + b) + 0.5 * (b - a) * x)
        weights.extend(0.5 * (b - a) * w)
    return np.array(nodes), np.array(weights)


def _secant(fun, z0: complex, z1: complex, tol: float = 1e-12, max_iter: int = 60) -> complex:
    f0, f1 = fun(z0), fun(z1)
    for _ in range(max_iter):
        if f1 == f0:
            break
        z2 = z1 - f1 * (z1 - z0) / (f1 - f0)
        z0, f0 = z1, f1
        z1, f1 = z2, fun(z2)
        if abs(z1 - z0) < tol * max(1.0, abs(z1)):
            return z1
    raise ConvergenceError(f"secant iteration stagnated near {z1:.6g}")


def numeric_poles(n: int, lam: float, l: int, box: Box, per_side: int = 48,
                  fd_step: float = 1e-6) -> list[complex]:
    """Resonances of the degree-``l`` radial problem inside ``box``.

    The argument principle counts zeros of :func:`mismatch` on the box boundary;
    the power sums of the zeros give starting points for a complex secant polish.
    """
    fun = lambda s: mismatch(s, n, lam, l)  # noqa: E731
    nodes, weights = _contour(box, per_side)
    W = np.array([fun(z) for z in nodes])
    dW = np.array([(fun(z + fd_step) - fun(z - fd_step)) / (2 * fd_step) for z in nodes])
    logd = dW / W
    count = int(round((np.sum(weights * logd) / (2j * math.pi)).real))
    if count <= 0:
        return []
    sums = [np.sum(weights * nodes ** p * logd) / (2j * math.pi) for p in range(1, count + 1)]
    # Newton identities: elementary symmetric polynomials from power sums
    e = [1.0 + 0j]
    for k in range(1, count + 1):
        e.append(sum((-1) ** (i - 1) * e[k - i] * sums[i - 1] for i in range(1, k + 1)) / k)
    poly = [(-1) ** k * e[k] for k in range(count + 1)]
    guesses = np.roots(poly)
    roots: list[complex] = []
    for g in guesses:
        z = _secant(fun, complex(g), complex(g) + 1e-4)
        if box.contains(z) and all(abs(z - q) > 1e-6 for q in roots):
            roots.append(z)
    roots.sort(key=lambda z: (-z.imag, z.real))
    return roots


# ---------------------------------------------------------------------------
# decay fits


class DecayModel(enum.Enum):
    PURE_POWER = "PurePower"
    POWER_PLUS_CONSTANT = "PowerPlusConstant"
    POWER_LOG = "PowerLog"
    OSCILLATORY_POWER = "OscillatoryPower"


_COMPLEXITY = {DecayModel.PURE_POWER: 2, DecayModel.POWER_PLUS_CONSTANT: 3,
               DecayModel.POWER_LOG: 3, DecayModel.OSCILLATORY_POWER: 4}


@dataclass
class DecayFit:
    model: DecayModel
    exponent: float
    frequency: float
    log_correction: bool
    residual: float
    window: tuple[float, float]
    coefficients: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.value
        return d


def _columns(model: DecayModel, t: np.ndarray, k: float, omega: float = 0.0) -> np.ndarray:
    e = np.exp(-k * (t - t[0]))
    if model is DecayModel.PURE_POWER:
        return e[:, None]
    if model is DecayModel.POWER_PLUS_CONSTANT:
        return np.stack([np.ones_like(t), e], axis=1)
    if model is DecayModel.POWER_LOG:
        return np.stack([e, (t - t[0]) * e], axis=1)
    return np.stack([e * np.cos(omega * t), e * np.sin(omega * t)], axis=1)


def _projected(model, t, u, weights, params):
    k = params[0]
    om = params[1] if len(params) > 1 else 0.0
    A = _columns(model, t, k, om) * weights[:, None]
    coef, *_ = np.linalg.lstsq(A, u * weights, rcond=None)
    return A @ coef - u * weights, coef


def _slope_guess(t, u) -> float:
    v = np.abs(u) + 1e-300
    return float(max(-np.polyfit(t, np.log(v), 1)[0], 1e-3))


def fit_decay(t, u, model: DecayModel | str, window: tuple[float, float] | None = None,
              max_residual: float | None = None) -> DecayFit:
    """Variable-projection least squares on ``window``; exponent is the decay rate of ``u - c``."""
    model = DecayModel(model)
    t = np.asarray(t, float)
    u = np.asarray(u, float)
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, u = t[m], u[m]
    if t.size < 6:
        raise FitError("too few samples in the fit window")
    win = (float(t[0]), float(t[-1]))
    if model is DecayModel.POWER_PLUS_CONSTANT:
        k0 = _slope_guess(t[:-1], np.diff(u))
    else:
        k0 = _slope_guess(t, u)
    starts: list[list[float]] = []
    if model is DecayModel.OSCILLATORY_POWER:
        # coarse scan over frequency; the envelope guess comes from local maxima
        peaks = np.abs(u)
        env = _slope_guess(t, np.maximum.accumulate(peaks[::-1])[::-1])
        for om in np.linspace(0.1, 4.0, 40):
            starts.append([env, om])
    else:
        for k in (k0, 0.5 * k0, 2.0 * k0, 1.0):
            starts.append([k])
    best = None
    for p0 in starts:
        w = np.exp(p0[0] * (t - t[0]))
        w /= np.max(np.abs(u * w)) + 1e-300
        res = least_squares(lambda p: _projected(model, t, u, w, p)[0], p0, method="lm",
                            xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
        # refit with weights matched to the fitted rate
        w = np.exp(res.x[0] * (t - t[0]))
        w /= np.max(np.abs(u * w)) + 1e-300
        res = least_squares(lambda p: _projected(model, t, u, w, p)[0], res.x, method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        r, coef = _projected(model, t, u, w, res.x)
        score = float(np.sqrt(np.mean(r ** 2)))
        if best is None or score < best[0]:
            best = (score, res.x, coef)
    score, params, coef = best
    k = float(params[0])
    om = float(abs(params[1])) if model is DecayModel.OSCILLATORY_POWER else 0.0
    shift = math.exp(k * t[0])
    if model is DecayModel.POWER_PLUS_CONSTANT:
        coefficients = {"c": float(coef[0]), "amplitude": float(coef[1] * shift)}
    elif model is DecayModel.POWER_LOG:
        coefficients = {"amplitude": float((coef[0] - coef[1] * t[0]) * shift),
                        "log_amplitude": float(coef[1] * shift)}
    elif model is DecayModel.OSCILLATORY_POWER:
        coefficients = {"cos": float(coef[0] * shift), "sin": float(coef[1] * shift)}
    else:
        coefficients = {"amplitude": float(coef[0] * shift)}
    fit = DecayFit(model, k, om, model is DecayModel.POWER_LOG, score, win, coefficients)
    if max_residual is not None and score > max_residual:
        raise FitError(f"{model.value} residual {score:.3e} exceeds {max_residual:.3e}")
    return fit


def select_decay_model(t, u, window: tuple[float, float] | None = None,
                       candidates: Sequence[DecayModel] = tuple(DecayModel),
                       preference: float = 10.0) -> DecayFit:
    """Fit every candidate and keep the simplest one within ``preference`` of the best residual."""
    fits = []
    for m in candidates:
        try:
            fits.append(fit_decay(t, u, m, window))
        except FitError:
            continue
    if not fits:
        raise FitError("no model could be fitted")
    best = min(f.residual for f in fits)
    t = np.asarray(t, float)
    u = np.asarray(u, float)
    if window is not None:
        u = u[(t >= window[0]) & (t <= window[1])]
    # residuals at roundoff level do not discriminate between models
    floor = 1e-10 * float(np.max(np.abs(u)))
    ok = [f for f in fits if f.residual <= max(preference * best, floor)]
    ok.sort(key=lambda f: (_COMPLEXITY[f.model], f.residual))
    return ok[0]
