"""Spherically symmetric wave and Klein-Gordon solver on the static patch.

Fields are functions of ``t = -log tau`` and ``r = sqrt(1 - mu)`` on the
domain ``t >= -log tau0``, ``0 <= r <= sqrt(1 + delta)``. For a spherical
harmonic of degree ``l`` we write ``u = r**l * w(t, r) * Y_l`` and evolve
``w``; ``l = 0`` is the spherically symmetric sector.

The operator is put in the normalized form

    a_tt w_tt + a_tr w_tr + a_rr (w_rr + (n_eff - 2) w_r / r) + b_t w_t + b_r w_r + c w = f_scale * f

with ``n_eff = n + 2 l`` and solved as a first-order system in
``(w, Pi = w_t, Phi = w_r)`` with centered differences, RK4 and fourth-order
Kreiss-Oliger dissipation. The sign convention is
``Box_g = -rho^{-1} d_i (rho G^{ij} d_j)`` and the equation is
``Box_g u - lambda u + L u = f``.

Both characteristic speeds ``dr/dt = r +- 1`` point outward at ``r = sqrt(1 + delta)``,
so the outer edge needs no boundary condition in forward time; it gets
one-sided stencils. Backward solves see it as an inflow edge and use zero data.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BlowupError, CFLError, DecayGateError, SignatureError
from .geometry import ConformalFamily, Domain, MetricFamily

Forcing = Callable[[float, np.ndarray], np.ndarray]
"""``f(t, r) -> array`` on the radial grid."""

CFL_LIMIT = 1.0


# ---------------------------------------------------------------------------
# grids and fields


@dataclass(frozen=True)
class Grid:
    n_r: int = 200
    """Number of radial intervals; ``h = sqrt(1 + delta) / n_r``."""
    t_end: float = 16.0
    cfl: float = 0.5
    out_dt: float | None = None
    """Spacing of stored slices; defaults to roughly ``h``."""
    dissipation: float = 0.2
    """Kreiss-Oliger strength in units of the maximal characteristic speed."""
    constraint_damping: float = 4.0
    """Rate at which ``Phi - d_r w`` is driven to zero."""


@dataclass
class GridField:
    t: np.ndarray
    r: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    ur: np.ndarray
    n: int
    l: int = 0
    lam: float = 0.0
    weight: float = 0.0
    forcing_onset: float = -np.inf
    meta: dict = field(default_factory=dict)

    @property
    def mu(self) -> np.ndarray:
        return 1.0 - self.r ** 2

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def forward_support(self) -> bool:
        scale = float(np.max(np.abs(self.u)))
        if scale == 0.0:
            return True
        early = self.t < self.forcing_onset
        if not np.any(early):
            return True
        return float(np.max(np.abs(self.u[early]))) <= 1e-10 * scale

    def probe(self, r0: float) -> tuple[np.ndarray, np.ndarray]:
        """Time series of ``w`` at radius ``r0`` (cubic interpolation in ``r``)."""
        from scipy.interpolate import CubicSpline

        if not 0.0 <= r0 <= self.r[-1]:
            raise ValueError("probe radius outside the grid")
        return self.t.copy(), CubicSpline(self.r, self.u, axis=1)(r0)

    def probe_csv(self, r0: float) -> str:
        t, v = self.probe(r0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["t", f"u(r={r0:g})"])
        for a, b in zip(t, v):
            w.writerow([f"{a:.10e}", f"{b:.16e}"])
        return buf.getvalue()

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        np.savez(stem.with_suffix(".npz"), t=self.t, r=self.r, u=self.u, ut=self.ut, ur=self.ur)
        side = {"n": self.n, "l": self.l, "lambda": self.lam, "weight": self.weight,
                "forcing_onset": self.forcing_onset if np.isfinite(self.forcing_onset) else None,
                "grid": {"n_t": int(self.t.size), "n_r": int(self.r.size - 1)},
                "meta": self.meta}
        stem.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=2))

    @classmethod
    def load(cls, stem: str | Path) -> "GridField":
        stem = Path(stem)
        arr = np.load(stem.with_suffix(".npz"))
        side = json.loads(stem.with_suffix(".json").read_text())
        onset = side["forcing_onset"]
        return cls(arr["t"], arr["r"], arr["u"], arr["ut"], arr["ur"], side["n"], side["l"],
                   side["lambda"], side["weight"], -np.inf if onset is None else onset, side["meta"])


def radial_grid(n_r: int, domain: Domain) -> np.ndarray:
    return np.linspace(0.0, domain.r_max, n_r + 1)


# ---------------------------------------------------------------------------
# operator coefficients


@dataclass
class OperatorCoefficients:
    a_tt: np.ndarray
    a_tr: np.ndarray
    a_rr: np.ndarray
    b_t: np.ndarray
    b_r: np.ndarray
    c: np.ndarray
    n_eff: int
    f_scale: np.ndarray | float = 1.0

    def max_speed(self) -> float:
        """Largest ``|dr/dt|`` over the grid; raises if the principal part is not hyperbolic."""
        p = self.a_tr / self.a_tt
        q = self.a_rr / self.a_tt
        disc = p * p - 4.0 * q
        if np.any(disc <= 0.0):
            raise SignatureError("principal part is not hyperbolic in t")
        s = np.sqrt(disc)
        return float(np.max(np.maximum(np.abs(-p + s), np.abs(-p - s))) / 2.0)

    def outflow_at_edge(self) -> bool:
        p = self.a_tr[-1] / self.a_tt[-1]
        q = self.a_rr[-1] / self.a_tt[-1]
        s = math.sqrt(p * p - 4.0 * q)
        # eigenvalues of the flux matrix are -dr/dt
        return (-p + s) / 2.0 < 0.0 and (-p - s) / 2.0 < 0.0


@dataclass(frozen=True)
class LowerOrder:
    """``L = b_tau * tau d_tau + b_r * r d_r + b_0``; constant coefficients."""

    b_tau: float = 0.0
    b_r: float = 0.0
    b_0: float = 0.0


def desitter_coefficients(r: np.ndarray, n: int, l: int = 0, lam: float = 0.0) -> OperatorCoefficients:
    r = np.asarray(r, dtype=float)
    one = np.ones_like(r)
    return OperatorCoefficients(
        a_tt=-one, a_tr=-2.0 * r, a_rr=1.0 - r * r,
        b_t=-(n - 1 + 2 * l) * one, b_r=-2.0 * r,
        c=(-l * (l + n - 1) - lam) * one, n_eff=n + 2 * l)


def _safe_r(r):
    return np.where(np.abs(r) < 1e-7, 1e-7, r)


def _radial_parts(fam: MetricFamily, r: np.ndarray, U: np.ndarray):
    """``(G^tt, G^tr, G^rr, rho_tilde, phi)`` of ``g(U)`` in the ``(t, r)`` frame."""
    n = fam.n
    r = _safe_r(r)
    mu = 1.0 - r * r
    g = fam.evaluate(U, mu)
    g00, g01, g11 = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    det2 = g00 * g11 - g01 * g01
    GTT, GTm, Gmm = g11 / det2, -g01 / det2, g00 / det2
    Gtt = GTT
    Gtr = GTm / (2.0 * r)
    Grr = Gmm / (4.0 * r * r)
    det_tr = det2 * 4.0 * r * r
    if np.any(det_tr >= 0.0):
        raise SignatureError("the (t, r) block is not Lorentzian")
    if np.any(Gtt <= 0.0):
        raise SignatureError("t is not a time function for this metric")
    phi = -g[..., 2, 2] / (r * r) if n > 2 else np.ones_like(r)
    rho = np.sqrt(-det_tr) * phi ** ((n - 2) / 2.0)
    return Gtt, Gtr, Grr, rho, phi


_CENTER_EPS = 1e-2


def family_coefficients(fam: MetricFamily, r: np.ndarray, U=None, Ut=None, Ur=None,
                        l: int = 0, lam: float = 0.0) -> OperatorCoefficients:
    """Coefficients of ``Box_{g(U)} - lambda`` for a general family.

    Derivatives of the metric along the grid come from the chain rule with
    central differences in ``r`` and ``U``. The node ``r = 0`` is filled by even
    extrapolation from two small radii, where the frame change is ill-conditioned.
    """
    r = np.asarray(r, dtype=float)
    zero = np.zeros_like(r)
    U = zero if U is None else np.asarray(U, float)
    Ut = zero if Ut is None else np.asarray(Ut, float)
    Ur = zero if Ur is None else np.asarray(Ur, float)
    center = np.abs(r) < 1e-12
    if not np.any(center):
        return _family_coefficients(fam, r, U, Ut, Ur, l, lam)
    out = _family_coefficients(fam, np.where(center, 1.0, r), U, Ut, Ur, l, lam)
    idx = np.flatnonzero(center)
    e = np.array([_CENTER_EPS, 2.0 * _CENTER_EPS])
    for i in idx:
        pair = _family_coefficients(fam, e, np.full(2, U[i]), np.full(2, Ut[i]), np.full(2, Ur[i]), l, lam)
        for name in ("a_tt", "a_rr", "b_t", "c"):
            vals = getattr(pair, name)
            getattr(out, name)[i] = (4.0 * vals[0] - vals[1]) / 3.0
        for name in ("a_tr", "b_r"):
            getattr(out, name)[i] = 0.0
    return out


def _family_coefficients(fam, r, U, Ut, Ur, l, lam) -> OperatorCoefficients:
    zero = np.zeros_like(r)
    n = fam.n
    rs = _safe_r(r)
    Gtt, Gtr, Grr, rho, phi = _radial_parts(fam, rs, U)
    hr = 1e-5
    hu = 1e-6 * (1.0 + np.abs(U))
    plus_r = _radial_parts(fam, rs + hr, U)
    minus_r = _radial_parts(fam, rs - hr, U)
    if fam.constant:
        plus_u = minus_u = None
    else:
        plus_u = _radial_parts(fam, rs, U + hu)
        minus_u = _radial_parts(fam, rs, U - hu)

    def dt_dr(k_pair):
        """``d_t`` and ``d_r`` of ``rho * G`` for the component pair index."""
        def val(parts):
            return parts[3] * parts[k_pair]
        d_r = (val(plus_r) - val(minus_r)) / (2.0 * hr)
        if plus_u is None:
            return zero, d_r
        d_u = (val(plus_u) - val(minus_u)) / (2.0 * hu)
        return d_u * Ut, d_r + d_u * Ur

    tt_t, _ = dt_dr(0)
    tr_t, tr_r = dt_dr(1)
    _, rr_r = dt_dr(2)
    a_tt = -Gtt
    a_tr = -2.0 * Gtr
    a_rr = -Grr
    b_t = -(tt_t + tr_r) / rho - (n - 2) * Gtr / rs
    b_r = -(tr_t + rr_r) / rho
    c = -lam * np.ones_like(r)
    if l:
        b_t = b_t + l * a_tr / rs
        c = c + l * (l + n - 3) * (a_rr - 1.0 / phi) / (rs * rs) + l * b_r / rs
    return OperatorCoefficients(a_tt, a_tr, a_rr, b_t, b_r, c, n + 2 * l)


def conformal_coefficients(fam: MetricFamily, r: np.ndarray, U, Ut, Ur,
                           lam: float = 0.0) -> OperatorCoefficients:
    """``Omega (Box_{Omega g_dS} - lambda)`` for ``g(u) = Omega(u) g_dS`` (spherical sector).

    Uses ``Box_{Omega g} = Omega^{-1} (Box_g - (n - 2)/(2 Omega) G(d Omega, .))``;
    the forcing is scaled by ``Omega`` accordingly.
    """
    kind = fam.kind
    assert isinstance(kind, ConformalFamily)
    n = fam.n
    base = desitter_coefficients(r, n, 0, 0.0)
    Om = np.asarray(kind.mu_fn(U), float)
    dOm = np.asarray(kind.dmu_fn(U), float)
    Om_t, Om_r = dOm * Ut, dOm * Ur
    k = (n - 2) / (2.0 * Om)
    b_t = base.b_t - k * (Om_t + r * Om_r)
    b_r = base.b_r - k * (r * Om_t + (r * r - 1.0) * Om_r)
    return OperatorCoefficients(base.a_tt, base.a_tr, base.a_rr, b_t, b_r, -lam * Om, n, Om)


def _is_conformal_desitter(fam: MetricFamily) -> bool:
    return isinstance(fam.kind, ConformalFamily) and fam.description.get("kind") == "conformal" \
        and fam.kind.dmu_fn is not None


def coefficients_for(fam: MetricFamily | None, r, n, l, lam, U=None, Ut=None, Ur=None):
    if fam is None or fam.description.get("kind") == "desitter":
        return desitter_coefficients(r, n, l, lam)
    if _is_conformal_desitter(fam) and l == 0:
        zero = np.zeros_like(r)
        return conformal_coefficients(fam, r, zero if U is None else U, zero if Ut is None else Ut,
                                      zero if Ur is None else Ur, lam)
    return family_coefficients(fam, r, U, Ut, Ur, l, lam)


def apply_lower_order(co: OperatorCoefficients, r, L: LowerOrder | None) -> OperatorCoefficients:
    if L is None:
        return co
    # tau d_tau = -d_t; scale by f_scale so L is added to Box - lambda, not to the normalized form
    s = co.f_scale
    return replace(co, b_t=co.b_t - s * L.b_tau, b_r=co.b_r + s * L.b_r * r, c=co.c + s * L.b_0)


# ---------------------------------------------------------------------------
# background fields for frozen coefficients


class SliceInterpolator:
    """Four-point Lagrange interpolation in ``t`` of stored slices."""

    def __init__(self, t: np.ndarray, *arrays: np.ndarray):
        self.t = np.asarray(t, float)
        self.arrays = [np.asarray(a, float) for a in arrays]
        self.dt = float(self.t[1] - self.t[0]) if self.t.size > 1 else 1.0

    def __call__(self, tq: float) -> list[np.ndarray]:
        t = self.t
        m = t.size
        if m < 4:
            i = int(np.clip(np.searchsorted(t, tq) - 1, 0, m - 1))
            return [a[i] for a in self.arrays]
        s = (tq - t[0]) / self.dt
        i0 = int(np.clip(np.floor(s) - 1, 0, m - 4))
        x = s - i0
        nodes = np.arange(4.0)
        w = np.ones(4)
        for j in range(4):
            for k in range(4):
                if k != j:
                    w[j] *= (x - nodes[k]) / (nodes[j] - nodes[k])
        return [np.tensordot(w, a[i0:i0 + 4], axes=1) for a in self.arrays]


# ---------------------------------------------------------------------------
# problem and solver


@dataclass
class LinearProblem:
    n: int = 4
    lam: float = 0.0
    l: int = 0
    forcing: Forcing | None = None
    forcing_onset: float = -np.inf
    family: MetricFamily | None = None
    background: GridField | None = None
    """Iterate ``u_k`` whose values freeze the coefficients ``g(u_k)``."""
    lower_order: LowerOrder | None = None
    domain: Domain = field(default_factory=Domain)
    grid: Grid = field(default_factory=Grid)
    blowup_guard: float = 1e8

    def describe(self) -> dict:
        return {"n": self.n, "lambda": self.lam, "l": self.l,
                "family": dict(self.family.description) if self.family else {"kind": "desitter"},
                "lower_order": asdict(self.lower_order) if self.lower_order else None,
                "domain": {"delta": self.domain.delta, "tau0": self.domain.tau0},
                "grid": asdict(self.grid)}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:16]


def _coefficient_source(prob: LinearProblem, r: np.ndarray):
    """Return ``coeffs(t)``; constant families are assembled once."""
    fam = prob.family
    if fam is None or fam.constant or prob.background is None:
        co = apply_lower_order(coefficients_for(fam, r, prob.n, prob.l, prob.lam), r, prob.lower_order)
        return lambda _t: co, True
    bg = prob.background
    interp = SliceInterpolator(bg.t, bg.u, bg.ut, bg.ur)

    def coeffs(t):
        U, Ut, Ur = interp(t)
        co = coefficients_for(fam, r, prob.n, prob.l, prob.lam, U, Ut, Ur)
        return apply_lower_order(co, r, prob.lower_order)

    return coeffs, False


class _Scheme:
    def __init__(self, r: np.ndarray, direction: int, ko: float, kappa: float = 0.0):
        self.r = r
        self.h = float(r[1] - r[0])
        self.J = r.size - 1
        self.direction = direction
        self.ko = ko
        self.kappa = kappa
        self._lap_weights: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def d0(self, x: np.ndarray, odd: bool) -> np.ndarray:
        h = self.h
        out = np.empty_like(x)
        out[1:-1] = (x[2:] - x[:-2]) / (2.0 * h)
        out[0] = x[1] / h if odd else 0.0
        if self.direction > 0:
            out[-1] = (3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * h)
        else:
            out[-1] = 0.0
        return out

    def dissipation(self, x: np.ndarray, odd: bool) -> np.ndarray:
        s = -1.0 if odd else 1.0
        ext = np.concatenate([[s * x[2], s * x[1]], x])
        # ext[k] = x[k - 2]; fourth difference centered at j = 0..J-2
        d4 = ext[0:-4] - 4.0 * ext[1:-3] + 6.0 * ext[2:-2] - 4.0 * ext[3:-1] + ext[4:]
        out = np.zeros_like(x)
        out[:-2] = -(self.ko / (16.0 * self.h)) * d4 * self.direction
        return out

    def radial_laplacian(self, F: np.ndarray, k: int) -> np.ndarray:
        """``r^-k d_r (r^k Phi)`` in the volume-weighted form that stays stable at ``r = 0``."""
        if k not in self._lap_weights:
            r = self.r
            den = np.ones_like(r)
            den[1:-1] = r[2:] ** (k + 1) - r[:-2] ** (k + 1)
            self._lap_weights[k] = (r ** k, (k + 1) / den)
        rk, scale = self._lap_weights[k]
        out = np.empty_like(F)
        out[1:-1] = (rk[2:] * F[2:] - rk[:-2] * F[:-2]) * scale[1:-1]
        out[0] = (k + 1) * F[1] / self.h
        if self.direction > 0:
            out[-1] = self.d0(F, odd=True)[-1] + k * F[-1] / self.r[-1]
        else:
            out[-1] = 0.0
        return out

    def rhs(self, co: OperatorCoefficients, fval: np.ndarray, u, P, F):
        DP = self.d0(P, odd=False)
        Pt = (co.f_scale * fval - (co.a_tr * DP + co.a_rr * self.radial_laplacian(F, co.n_eff - 2)
                                   + co.b_t * P + co.b_r * F + co.c * u)) / co.a_tt
        ut = P + self.dissipation(u, False)
        Pt = Pt + self.dissipation(P, False)
        Ft = DP + self.dissipation(F, True)
        if self.kappa:
            Ft = Ft + self.kappa * (self.d0(u, odd=False) - F)
        if self.direction < 0:
            ut[-1] = Pt[-1] = Ft[-1] = 0.0
        return ut, Pt, Ft


def _integrate(prob: LinearProblem, t_from: float, t_to: float, direction: int) -> GridField:
    dom = prob.domain
    grid = prob.grid
    r = radial_grid(grid.n_r, dom)
    h = float(r[1] - r[0])
    coeffs, constant = _coefficient_source(prob, r)
    co0 = coeffs(t_from)
    speed = co0.max_speed()
    if direction > 0 and not co0.outflow_at_edge():
        raise CFLError("outer edge is not an outflow boundary for this metric")
    if not 0.0 < grid.cfl <= CFL_LIMIT:
        raise CFLError(f"cfl={grid.cfl} outside (0, {CFL_LIMIT}]")
    span = abs(t_to - t_from)
    dt_max = grid.cfl * h / speed
    out_dt = grid.out_dt if grid.out_dt is not None else h
    out_every = max(1, int(round(out_dt / dt_max)) if out_dt >= dt_max else 1)
    n_steps = out_every * max(1, math.ceil(math.ceil(span / dt_max) / out_every))
    dt = direction * span / n_steps
    scheme = _Scheme(r, direction, grid.dissipation * speed, grid.constraint_damping)
    forcing = prob.forcing
    zero = np.zeros_like(r)

    def fval(t):
        return zero if forcing is None else np.asarray(forcing(t, r), float)

    u, P, F = zero.copy(), zero.copy(), zero.copy()
    ts, us, Ps, Fs = [t_from], [u.copy()], [P.copy()], [F.copy()]
    t = t_from
    guard = prob.blowup_guard
    for step in range(1, n_steps + 1):
        c1 = co0 if constant else coeffs(t)
        k1 = scheme.rhs(c1, fval(t), u, P, F)
        th = t + 0.5 * dt
        ch = co0 if constant else coeffs(th)
        fh = fval(th)
        k2 = scheme.rhs(ch, fh, u + 0.5 * dt * k1[0], P + 0.5 * dt * k1[1], F + 0.5 * dt * k1[2])
        k3 = scheme.rhs(ch, fh, u + 0.5 * dt * k2[0], P + 0.5 * dt * k2[1], F + 0.5 * dt * k2[2])
        t1 = t_from + step * dt
        c4 = co0 if constant else coeffs(t1)
        k4 = scheme.rhs(c4, fval(t1), u + dt * k3[0], P + dt * k3[1], F + dt * k3[2])
        u = u + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        P = P + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        F = F + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        t = t1
        if step % out_every == 0:
            m = float(np.max(np.abs(u)))
            if not np.isfinite(m) or m > guard:
                raise BlowupError(f"|u| = {m:.3e} exceeds guard at t = {t:.4f}")
            ts.append(t)
            us.append(u.copy())
            Ps.append(P.copy())
            Fs.append(F.copy())
    order = slice(None) if direction > 0 else slice(None, None, -1)
    meta = {"problem": prob.describe(), "problem_hash": prob.hash(), "dt": abs(dt),
            "steps": n_steps, "direction": "forward" if direction > 0 else "backward"}
    return GridField(np.array(ts)[order], r, np.array(us)[order], np.array(Ps)[order],
                     np.array(Fs)[order], prob.n, prob.l, prob.lam, 0.0, prob.forcing_onset, meta)


def solve_forward(prob: LinearProblem) -> GridField:
    """Forward solution from zero Cauchy data on ``t = -log tau0``."""
    t0 = prob.domain.t_start
    if prob.grid.t_end <= t0:
        raise ValueError("t_end must exceed the initial slice")
    return _integrate(prob, t0, prob.grid.t_end, +1)


# ---------------------------------------------------------------------------
# backward problem


def forcing_decay_rate(forcing: Forcing, r: np.ndarray, t_lo: float, t_hi: float, samples: int = 24) -> float:
    """Least-squares slope of ``-log max_r |f(t, r)|`` on ``[t_lo, t_hi]``."""
    ts = np.linspace(t_lo, t_hi, samples)
    norms = np.array([np.max(np.abs(forcing(t, r))) for t in ts])
    if np.all(norms == 0.0):
        return np.inf
    keep = norms > 0
    if keep.sum() < 2:
        return np.inf
    slope = np.polyfit(ts[keep], np.log(norms[keep]), 1)[0]
    return float(-slope)


def homogeneous_backward_growth(prob: LinearProblem, span: float = 4.0, seed: int = 0) -> float:
    """Growth rate of backward solutions with zero forcing from smooth random final data."""
    dom = prob.domain
    grid = prob.grid
    r = radial_grid(grid.n_r, dom)
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=4)
    bump = np.exp(-((r / (0.6 * dom.r_max)) ** 2) * 4.0) * (r < 0.9 * dom.r_max)
    u = bump * (coef[0] + coef[1] * r ** 2)
    P = bump * (coef[2] + coef[3] * r ** 2)
    F = np.gradient(u, r)
    F[0] = 0.0
    h = float(r[1] - r[0])
    coeffs, _ = _coefficient_source(replace(prob, background=None, forcing=None), r)
    co = coeffs(0.0)
    speed = co.max_speed()
    scheme = _Scheme(r, -1, grid.dissipation * speed, grid.constraint_damping)
    n_steps = math.ceil(span / (grid.cfl * h / speed))
    dt = -span / n_steps
    zero = np.zeros_like(r)

    def energy(u, P, F):
        return math.sqrt(float(np.sum((u * u + P * P + F * F) * r ** (prob.n - 2))))

    e0 = energy(u, P, F)
    for _ in range(n_steps):
        k1 = scheme.rhs(co, zero, u, P, F)
        k2 = scheme.rhs(co, zero, u + 0.5 * dt * k1[0], P + 0.5 * dt * k1[1], F + 0.5 * dt * k1[2])
        k3 = scheme.rhs(co, zero, u + 0.5 * dt * k2[0], P + 0.5 * dt * k2[1], F + 0.5 * dt * k2[2])
        k4 = scheme.rhs(co, zero, u + dt * k3[0], P + dt * k3[1], F + dt * k3[2])
        u = u + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        P = P + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        F = F + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return math.log(energy(u, P, F) / e0) / span


def backward_end_time(rate: float, t_start: float = 0.0, tol: float = 1e-10) -> float:
    """Truncation time with ``exp(-rate * (t_end - t_start)) < tol``."""
    return t_start + math.log(1.0 / tol) / rate + 1e-9


def solve_backward(prob: LinearProblem, rate: float, threshold: float,
                   t_end: float | None = None, gate_window: tuple[float, float] | None = None) -> GridField:
    """Time-reversed solve from zero data at ``t_end`` for forcing decaying like ``exp(-rate t)``.

    ``threshold`` is the decay rate ``r_*`` below which the problem is rejected.
    The forcing's measured decay is checked against ``rate`` on ``gate_window``.
    """
    if rate <= threshold:
        raise DecayGateError(f"requested rate {rate} does not exceed threshold {threshold}")
    t0 = prob.domain.t_start
    if t_end is None:
        t_end = backward_end_time(rate, t0)
    if prob.forcing is not None:
        r = radial_grid(prob.grid.n_r, prob.domain)
        lo, hi = gate_window if gate_window is not None else (t0 + 0.5 * (t_end - t0), t_end)
        measured = forcing_decay_rate(prob.forcing, r, lo, hi)
        if measured < rate - 0.05:
            raise DecayGateError(f"forcing decays at rate {measured:.3f} < requested {rate}")
    out = _integrate(replace(prob, grid=replace(prob.grid, t_end=t_end)), t_end, t0, -1)
    out.weight = rate
    return out


# ---------------------------------------------------------------------------
# diagnostics


def _trapz(y, x, axis=-1):
    return np.trapezoid(y, x, axis=axis)


def energy_density(field: GridField) -> np.ndarray:
    """``T(dt, dt)`` of the static metric: ``(w_t + r w_r)^2/2 + w_r^2/2 + lambda w^2/2``."""
    r = field.r
    return 0.5 * (field.ut + r * field.ur) ** 2 + 0.5 * field.ur ** 2 + 0.5 * field.lam * field.u ** 2


def energy_report(field: GridField, weight: float = 0.0) -> np.ndarray:
    """Weighted slice energies ``E(t) = exp(2 w t) int T rho dr`` with ``rho = r^(n-2)``."""
    rho = field.r ** (field.n - 2)
    return np.exp(2.0 * weight * field.t) * _trapz(energy_density(field) * rho, field.r, axis=1)


def forcing_norm_sq(forcing: Forcing | None, field: GridField, weight: float = 0.0) -> float:
    if forcing is None:
        return 0.0
    rho = field.r ** (field.n - 2)
    vals = np.array([np.asarray(forcing(t, field.r), float) ** 2 for t in field.t])
    per_t = _trapz(vals * rho, field.r, axis=1)
    return float(_trapz(np.exp(2.0 * weight * field.t) * per_t, field.t))


def energy_constant(field: GridField, forcing: Forcing, weight: float = 0.0) -> float:
    """``sup_t E(t) / ||f||^2``: the discrete constant in the energy bound."""
    return float(np.max(energy_report(field, weight)) / forcing_norm_sq(forcing, field, weight))


def fd_derivatives(field: GridField):
    """``(w_t, w_tt, w_r, w_rr, w_tr, w_r / r)`` from stored ``w`` slices by second-order differences."""
    t, r, w = field.t, field.r, field.u
    wt = np.gradient(w, t, axis=0, edge_order=2)
    wtt = np.gradient(wt, t, axis=0, edge_order=2)
    wr = np.gradient(w, r, axis=1, edge_order=2)
    wr[:, 0] = 0.0
    wrr = np.gradient(wr, r, axis=1, edge_order=2)
    wtr = np.gradient(wt, r, axis=1, edge_order=2)
    wtr[:, 0] = 0.0
    wr_over_r = np.empty_like(wr)
    wr_over_r[:, 1:] = wr[:, 1:] / r[1:]
    wr_over_r[:, 0] = wrr[:, 0]
    return wt, wtt, wr, wrr, wtr, wr_over_r


def operator_on_slices(field: GridField, prob: LinearProblem, frozen: GridField | None = None) -> np.ndarray:
    """``(Box_g - lambda + L) w`` on every stored slice, from differences of ``w`` alone.

    The metric is ``g(frozen)`` when the family depends on ``u``; by default
    ``frozen`` is ``field`` itself, which gives the quasilinear operator.
    """
    r, w = field.r, field.u
    wt, wtt, wr, wrr, wtr, wr_over_r = fd_derivatives(field)
    fam = prob.family
    varying = not (fam is None or fam.constant)
    if varying:
        src = field if frozen is None else frozen
        if src is field:
            U, Ut, Ur = w, wt, wr
        else:
            U, Ut, Ur = src.u, src.ut, src.ur
    out = np.empty_like(w)
    co = None
    for i in range(field.t.size):
        if varying:
            co = coefficients_for(fam, r, prob.n, prob.l, prob.lam, U[i], Ut[i], Ur[i])
            co = apply_lower_order(co, r, prob.lower_order)
        elif co is None:
            co = apply_lower_order(coefficients_for(fam, r, prob.n, prob.l, prob.lam), r, prob.lower_order)
        lhs = (co.a_tt * wtt[i] + co.a_tr * wtr[i] + co.a_rr * (wrr[i] + (co.n_eff - 2) * wr_over_r[i])
               + co.b_t * wt[i] + co.b_r * wr[i] + co.c * w[i])
        out[i] = lhs / co.f_scale
    return out


def forcing_on_slices(forcing: Forcing | None, field: GridField) -> np.ndarray:
    if forcing is None:
        return np.zeros_like(field.u)
    return np.array([np.asarray(forcing(t, field.r), float) for t in field.t])


def rms_interior(res: np.ndarray, trim: int = 2) -> float:
    inner = res[trim:-trim, : res.shape[1] - trim] if trim else res
    return float(np.sqrt(np.mean(inner ** 2)))


def independent_residual(field: GridField, prob: LinearProblem, extra: np.ndarray | None = None,
                         trim: int = 2) -> float:
    """RMS of ``P w - f`` computed from stored ``w`` slices only.

    Uses second-order differences of ``w`` in ``t`` and ``r``; ``Pi`` and ``Phi``
    from the solver are not used. For families depending on ``u`` the
    coefficients are frozen at ``prob.background``. ``extra`` is added to the
    forcing (e.g. a nonlinearity evaluated on the same slices).
    """
    frozen = prob.background
    P = operator_on_slices(field, prob, frozen if frozen is not None else field)
    f = forcing_on_slices(prob.forcing, field)
    if extra is not None:
        f = f + extra
    return rms_interior(P - f, trim)


def solution_error(field: GridField, exact: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Max-norm difference from an exact solution on the stored slices."""
    T, R = np.meshgrid(field.t, field.r, indexing="ij")
    return float(np.max(np.abs(field.u - exact(T, R))))


def convergence_order(errors) -> list[float]:
    e = np.asarray(errors, float)
    return list(np.log2(e[:-1] / e[1:]))


# ---------------------------------------------------------------------------
# manufactured solutions


def _sym_bump(x):
    import sympy as sp

    return sp.exp(1 - 1 / (1 - x ** 2))


def manufactured(n: int = 4, lam: float = 0.0, kind: str = "forward",
                 radius: float = 0.8, lower_order: LowerOrder | None = None,
                 t_window: tuple[float, float] = (0.5, 3.5), rate: float = 3.0):
    """Exact solution and forcing for the static-metric operator (spherical sector).

    ``kind="forward"``: ``u = B(t) psi(r)`` with ``B`` a bump on ``t_window``.
    ``kind="backward"``: ``u = exp(-rate t) psi(r)``. ``psi`` is an even bump of
    radius ``radius``. Returns ``(u_exact(t, r), f(t, r))`` as numpy callables.
    """
    import sympy as sp

    t, r = sp.symbols("t r", real=True)
    lam_s = sp.nsimplify(lam)
    psi = _sym_bump(r / radius)
    if kind == "forward":
        a, b = t_window
        s = (2 * t - (a + b)) / (b - a)
        time = _sym_bump(s)
    elif kind == "backward":
        time = sp.exp(-sp.nsimplify(rate) * t)
    else:
        raise ValueError(kind)
    u = time * psi
    ut, ur = sp.diff(u, t), sp.diff(u, r)
    box = (-sp.diff(u, t, 2) - 2 * r * sp.diff(u, t, r) + (1 - r ** 2) * sp.diff(u, r, 2)
           + (n - 2) * sp.cancel(ur / r) * (1 - r ** 2) - (n - 1) * ut - 2 * r * ur - lam_s * u)
    if lower_order is not None:
        L = lower_order
        box += -sp.nsimplify(L.b_tau) * ut + sp.nsimplify(L.b_r) * r * ur + sp.nsimplify(L.b_0) * u
    f_expr = sp.simplify(box)
    u_fn = sp.lambdify((t, r), u, "numpy")
    f_fn = sp.lambdify((t, r), f_expr, "numpy")

    def _mask(T, R):
        m = np.abs(np.asarray(R, float)) < radius
        if kind == "forward":
            a, b = t_window
            m = m & (np.asarray(T, float) > a) & (np.asarray(T, float) < b)
        return m

    def u_exact(T, R):
        T, R = np.broadcast_arrays(np.asarray(T, float), np.asarray(R, float))
        m = _mask(T, R)
        out = np.zeros(T.shape)
        with np.errstate(all="ignore"):
            out[m] = u_fn(T[m], R[m])
        # products like exp(-1/x) / x**k underflow to 0 * inf near the support edge
        return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)

    def forcing(T, R):
        T, R = np.broadcast_arrays(np.asarray(T, float), np.asarray(R, float))
        m = _mask(T, R)
        out = np.zeros(T.shape)
        with np.errstate(all="ignore"):
            out[m] = f_fn(T[m], R[m])
        return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)

    return u_exact, forcing


def bump_forcing(amplitude: float = 1.0, t_window: tuple[float, float] = (0.5, 2.5),
                 r_window: tuple[float, float] = (0.0, 0.7)) -> Forcing:
    """Smooth forcing ``A * B(t) * B(r)`` with bumps on the given windows (``r`` bump even at 0)."""
    from .geometry import smooth_bump

    a, b = t_window
    r0, r1 = r_window

    def f(t, r):
        bt = float(smooth_bump(np.array([t]), a, b)[0])
        if bt == 0.0:
            return np.zeros_like(r)
        if r0 <= 0.0:
            br = smooth_bump(r, -r1, r1)
        else:
            br = smooth_bump(r, r0, r1)
        return amplitude * bt * br

    return f


def superposed_probe(fields: Sequence[GridField], weights: Sequence[float], r0: float
                     ) -> tuple[np.ndarray, np.ndarray]:
    """``sum_l c_l r0^l w_l(t, r0)``: the full field along one ray from reduced mode solutions."""
    if len(fields) != len(weights) or not fields:
        raise ValueError("need one weight per mode field")
    t = fields[0].t
    total = np.zeros_like(t)
    for fld, c in zip(fields, weights):
        if fld.t.shape != t.shape or not np.allclose(fld.t, t):
            raise ValueError("mode fields must share their time slices")
        total = total + c * r0 ** fld.l * fld.probe(r0)[1]
    return t.copy(), total
