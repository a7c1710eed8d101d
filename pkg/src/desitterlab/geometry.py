"""Static de Sitter b-geometry.

Two charts cover the static patch. The horizon chart uses ``(mu, omega, tau)``
with ``r**2 = 1 - mu``, the cosmological horizon at ``mu = 0`` and ``omega`` a
unit vector in R^(n-1) standing for a point of the sphere S^(n-2). The center
chart uses ``(Y, tau)`` with ``Y = r * omega``. Fibre coordinates are
``(xi, eta, sigma)`` for ``xi dmu + eta domega + sigma dtau/tau`` and
``(zeta, sigma)`` for ``zeta dY + sigma dtau/tau``. The sphere covector
``eta`` is stored as a tangent vector of the embedding space (orthogonal to
``omega``), so ``|eta|_K`` is its Euclidean length.

Metric matrices returned by :func:`metric_at` are in the b-frame
``(dtau/tau, dmu, e_1, ..., e_{n-2})`` with ``e_i`` an orthonormal coframe of the
round sphere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ChartDomainError, ConfigError, SignatureError

DEFAULT_DELTA = 0.1
DEFAULT_TAU0 = 1.0
MAX_DELTA = 0.5


class Chart(enum.Enum):
    HORIZON = "horizon"
    CENTER = "center"


def _as_vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ChartPoint:
    """A base point in one of the two charts."""

    chart: Chart
    tau: float
    mu: float | None = None
    omega: np.ndarray | None = None
    Y: np.ndarray | None = None

    @classmethod
    def horizon(cls, mu: float, omega: Sequence[float], tau: float = 0.0) -> "ChartPoint":
        omega = _as_vec(omega)
        nrm = np.linalg.norm(omega)
        if not np.isclose(nrm, 1.0, rtol=0, atol=1e-12):
            raise ChartDomainError(f"omega must be a unit vector, |omega|={nrm}")
        if mu >= 1.0:
            raise ChartDomainError(f"horizon chart needs mu < 1, got {mu}")
        if tau < 0:
            raise ChartDomainError("tau must be >= 0")
        return cls(Chart.HORIZON, float(tau), mu=float(mu), omega=omega)

    @classmethod
    def center(cls, Y: Sequence[float], tau: float = 0.0) -> "ChartPoint":
        if tau < 0:
            raise ChartDomainError("tau must be >= 0")
        return cls(Chart.CENTER, float(tau), Y=_as_vec(Y))

    @property
    def dim(self) -> int:
        """Spacetime dimension n."""
        vec = self.omega if self.chart is Chart.HORIZON else self.Y
        return vec.size + 1

    @property
    def r2(self) -> float:
        if self.chart is Chart.HORIZON:
            return 1.0 - self.mu
        return float(self.Y @ self.Y)

    def to_center(self) -> "ChartPoint":
        if self.chart is Chart.CENTER:
            return self
        return ChartPoint.center(np.sqrt(self.r2) * self.omega, self.tau)

    def to_horizon(self) -> "ChartPoint":
        if self.chart is Chart.HORIZON:
            return self
        r = np.linalg.norm(self.Y)
        if r == 0.0:
            raise ChartDomainError("the horizon chart does not cover Y = 0")
        return ChartPoint.horizon(1.0 - r * r, self.Y / r, self.tau)


@dataclass(frozen=True)
class Covector:
    """A b-covector; which fields are set depends on the chart."""

    chart: Chart
    sigma: float
    xi: float | None = None
    eta: np.ndarray | None = None
    zeta: np.ndarray | None = None

    @classmethod
    def horizon(cls, xi: float, eta: Sequence[float], sigma: float) -> "Covector":
        return cls(Chart.HORIZON, float(sigma), xi=float(xi), eta=_as_vec(eta))

    @classmethod
    def center(cls, zeta: Sequence[float], sigma: float) -> "Covector":
        return cls(Chart.CENTER, float(sigma), zeta=_as_vec(zeta))


def covector_to_center(pt: ChartPoint, cv: Covector) -> Covector:
    """Re-express a horizon-chart covector as ``zeta dY + sigma dtau/tau``."""
    if cv.chart is Chart.CENTER:
        return cv
    pt = pt.to_horizon()
    r = np.sqrt(pt.r2)
    zeta = -2.0 * r * cv.xi * pt.omega + cv.eta / r
    return Covector.center(zeta, cv.sigma)


def covector_to_horizon(pt: ChartPoint, cv: Covector) -> Covector:
    if cv.chart is Chart.HORIZON:
        return cv
    hp = pt.to_horizon()
    r = np.sqrt(hp.r2)
    w = hp.omega
    zw = float(cv.zeta @ w)
    xi = -zw / (2.0 * r)
    eta = r * (cv.zeta - zw * w)
    return Covector.horizon(xi, eta, cv.sigma)


def tangent_to_horizon(pt: ChartPoint, dY: np.ndarray) -> tuple[float, np.ndarray]:
    """Push a center-chart tangent vector ``dY`` to ``(dmu, domega)``."""
    hp = pt.to_horizon()
    r = np.sqrt(hp.r2)
    w = hp.omega
    dY = _as_vec(dY)
    dmu = -2.0 * r * float(w @ dY)
    domega = (dY - float(w @ dY) * w) / r
    return dmu, domega


def pairing(pt: ChartPoint, cv: Covector, dbase: np.ndarray, dlogtau: float) -> float:
    """Evaluate ``cv`` on the b-vector ``dbase . d/dY + dlogtau * tau d/dtau``."""
    if cv.chart is Chart.CENTER:
        return float(cv.zeta @ _as_vec(dbase)) + cv.sigma * dlogtau
    dmu, domega = tangent_to_horizon(pt, dbase)
    return cv.xi * dmu + float(cv.eta @ domega) + cv.sigma * dlogtau


def _check_eta(pt: ChartPoint, cv: Covector) -> None:
    if cv.eta.size != pt.omega.size:
        raise ChartDomainError("eta and omega must live in the same embedding space")


def dual_quadform(pt: ChartPoint, cv: Covector) -> float:
    """Dual metric quadratic form ``p = G(cv, cv)``."""
    if cv.chart is Chart.CENTER:
        Y = pt.to_center().Y
        s = float(Y @ cv.zeta) - cv.sigma
        return s * s - float(cv.zeta @ cv.zeta)
    if pt.chart is not Chart.HORIZON:
        pt = pt.to_horizon()
    _check_eta(pt, cv)
    eta2 = float(cv.eta @ cv.eta)
    mu = pt.mu
    r2 = 1.0 - mu
    if r2 <= 0.0 and eta2 != 0.0:
        raise ChartDomainError("r**-2 |eta|^2 is singular at mu >= 1")
    ang = eta2 / r2 if eta2 else 0.0
    xi, sg = cv.xi, cv.sigma
    return -4.0 * r2 * mu * xi * xi + 4.0 * r2 * sg * xi + sg * sg - ang


def dual_bilinear(pt: ChartPoint, a: Covector, b: Covector) -> float:
    """Polarization ``G(a, b) = (p(a+b) - p(a-b)) / 4``."""
    if a.chart is not b.chart:
        b = covector_to_center(pt, b) if a.chart is Chart.CENTER else covector_to_horizon(pt, b)
    if a.chart is Chart.CENTER:
        plus = Covector.center(a.zeta + b.zeta, a.sigma + b.sigma)
        minus = Covector.center(a.zeta - b.zeta, a.sigma - b.sigma)
    else:
        plus = Covector.horizon(a.xi + b.xi, a.eta + b.eta, a.sigma + b.sigma)
        minus = Covector.horizon(a.xi - b.xi, a.eta - b.eta, a.sigma - b.sigma)
    return 0.25 * (dual_quadform(pt, plus) - dual_quadform(pt, minus))


def component_sign(pt: ChartPoint, cv: Covector) -> int:
    """Sign of ``sigma + 2 r^2 xi``, which labels the half of the characteristic set."""
    if cv.chart is Chart.CENTER:
        val = cv.sigma - float(pt.to_center().Y @ cv.zeta)
    else:
        val = cv.sigma + 2.0 * pt.r2 * cv.xi
    return int(np.sign(val))


# ---------------------------------------------------------------------------
# boundary defining functions and timelike characters


@dataclass(frozen=True)
class Domain:
    """The region ``{t1 >= 0} & {t2 >= 0}`` cut out by two spacelike hypersurfaces."""

    delta: float = DEFAULT_DELTA
    tau0: float = DEFAULT_TAU0

    def __post_init__(self):
        if not self.delta > 0 or not self.tau0 > 0:
            raise ConfigError("delta and tau0 must be positive")
        if self.delta > MAX_DELTA:
            raise ConfigError(f"delta={self.delta} exceeds the supported bound {MAX_DELTA}")

    def t1(self, tau):
        return self.tau0 - np.asarray(tau)

    def t2(self, mu):
        return np.asarray(mu) + self.delta

    def contains(self, pt: ChartPoint, tol: float = 0.0) -> bool:
        mu = 1.0 - pt.r2
        return bool(self.t1(pt.tau) >= -tol and self.t2(mu) >= -tol)

    @property
    def r_max(self) -> float:
        return float(np.sqrt(1.0 + self.delta))

    @property
    def t_start(self) -> float:
        """``-log tau0``: the slice H1 in the time variable ``t = -log tau``."""
        return float(-np.log(self.tau0))


def timelike_character(which: str, domain: Domain = Domain(), n: int = 4) -> float:
    """G-norm of the b-differentials of ``log tau``, ``t1`` and ``t2`` on their zero sets.

    ``which`` is one of ``"dtau/tau"``, ``"dt1"``, ``"dt2"`` or ``"dt1.dt2"``.
    The last is the cross term ``p(a + b) - p(a) - p(b) = 2 G(a, b)`` at the
    corner ``H1 & H2``; its sign is what certifies the opposite time orientation.
    """
    omega = np.zeros(n - 1)
    omega[-1] = 1.0
    zero_eta = np.zeros(n - 1)
    d, t0 = domain.delta, domain.tau0
    dlogtau = Covector.horizon(0.0, zero_eta, 1.0)
    # d t1 = -dtau = -tau * (dtau/tau), evaluated on tau = tau0
    dt1 = Covector.horizon(0.0, zero_eta, -t0)
    dt2 = Covector.horizon(1.0, zero_eta, 0.0)
    if which == "dtau/tau":
        return dual_quadform(ChartPoint.horizon(0.5, omega, 0.5 * t0), dlogtau)
    if which == "dt1":
        return dual_quadform(ChartPoint.horizon(0.5, omega, t0), dt1)
    if which == "dt2":
        return dual_quadform(ChartPoint.horizon(-d, omega, 0.5 * t0), dt2)
    if which == "dt1.dt2":
        return 2.0 * dual_bilinear(ChartPoint.horizon(-d, omega, t0), dt1, dt2)
    raise ValueError(f"unknown covector {which!r}")


# ---------------------------------------------------------------------------
# metric families


def desitter_metric(mu, n: int) -> np.ndarray:
    """Static de Sitter b-metric in the frame (dtau/tau, dmu, sphere), vectorized over mu."""
    mu = np.asarray(mu, dtype=float)
    r2 = 1.0 - mu
    g = np.zeros(mu.shape + (n, n))
    g[..., 0, 0] = mu
    g[..., 0, 1] = g[..., 1, 0] = 0.5
    g[..., 1, 1] = -0.25 / r2
    for i in range(2, n):
        g[..., i, i] = -r2
    return g


def check_signature(g: np.ndarray, tol: float = 1e-12) -> None:
    """Raise :class:`SignatureError` unless every matrix in ``g`` has signature (1, n-1)."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise SignatureError("metric has non-finite entries")
    if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=0, atol=tol * (1 + np.abs(g).max())):
        raise SignatureError("metric is not symmetric")
    ev = np.linalg.eigvalsh(g)
    npos = np.sum(ev > tol, axis=-1)
    nneg = np.sum(ev < -tol, axis=-1)
    n = g.shape[-1]
    bad = (npos != 1) | (nneg != n - 1)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise SignatureError(f"metric is not Lorentzian at grid index {tuple(idx)}")


MetricField = Callable[[np.ndarray, np.ndarray], np.ndarray]
"""``(mu, tau) -> (..., n, n)`` b-frame metric components."""


@dataclass(frozen=True)
class PolynomialFamily:
    """``g(u) = sum_k c_k(u) g_k``."""

    coefficients: tuple[Callable[[np.ndarray], np.ndarray], ...]
    fields: tuple[MetricField, ...]

    def __post_init__(self):
        if len(self.coefficients) != len(self.fields):
            raise ConfigError("need one coefficient per metric field")


@dataclass(frozen=True)
class ConformalFamily:
    """``g(u) = mu_fn(u) g0``."""

    mu_fn: Callable[[np.ndarray], np.ndarray]
    g0: MetricField
    dmu_fn: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class MetricFamily:
    n: int
    kind: PolynomialFamily | ConformalFamily
    delta: float = DEFAULT_DELTA
    tau0: float = DEFAULT_TAU0
    constant: bool = False
    """True when ``g(u)`` does not depend on ``u``; solvers then skip re-assembly."""
    description: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("dimension must be >= 2")
        Domain(self.delta, self.tau0)

    @property
    def domain(self) -> Domain:
        return Domain(self.delta, self.tau0)

    def evaluate(self, u, mu, tau=0.0) -> np.ndarray:
        """Vectorized ``g(u)`` at base points ``(mu, tau)``; no signature check."""
        u = np.asarray(u, dtype=float)
        mu = np.asarray(mu, dtype=float)
        kind = self.kind
        if isinstance(kind, ConformalFamily):
            return np.asarray(kind.mu_fn(u))[..., None, None] * kind.g0(mu, tau)
        total = 0.0
        for c, g in zip(kind.coefficients, kind.fields):
            total = total + np.asarray(c(u))[..., None, None] * g(mu, tau)
        return np.asarray(total)


def metric_at(fam: MetricFamily, u_value, pt: ChartPoint) -> np.ndarray:
    """``g(u_value)`` at ``pt``, checked to be Lorentzian."""
    mu = 1.0 - pt.r2
    g = fam.evaluate(u_value, mu, pt.tau)
    check_signature(g)
    return g


def desitter_field(n: int) -> MetricField:
    def g0(mu, tau=0.0):
        return desitter_metric(mu, n)

    return g0


def desitter_family(n: int = 4, delta: float = DEFAULT_DELTA, tau0: float = DEFAULT_TAU0) -> MetricFamily:
    """The unperturbed static metric as a (constant) family."""
    one = lambda u: np.ones_like(np.asarray(u, dtype=float))  # noqa: E731
    return MetricFamily(n, PolynomialFamily((one,), (desitter_field(n),)), delta, tau0,
                        constant=True, description={"kind": "desitter"})


def conformal_family(n: int = 4, power: int = 2, scale: float = 1.0,
                     delta: float = DEFAULT_DELTA, tau0: float = DEFAULT_TAU0) -> MetricFamily:
    """``g(u) = (1 + scale * u**power) g_dS``."""
    mu_fn = lambda u: 1.0 + scale * np.asarray(u, dtype=float) ** power  # noqa: E731
    dmu_fn = lambda u: scale * power * np.asarray(u, dtype=float) ** (power - 1)  # noqa: E731
    return MetricFamily(n, ConformalFamily(mu_fn, desitter_field(n), dmu_fn), delta, tau0,
                        description={"kind": "conformal", "power": power, "scale": scale})


def smooth_bump(x, lo: float, hi: float):
    """C-infinity bump equal to 1 at the midpoint and supported in ``(lo, hi)``."""
    x = np.asarray(x, dtype=float)
    y = (2.0 * x - (lo + hi)) / (hi - lo)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - y[inside] ** 2))
    return out


def bump_perturbation(n: int, amplitude: float = 1.0, mu_lo: float = 0.05,
                      mu_hi: float = 0.6) -> MetricField:
    """A symmetric perturbation of the (dtau/tau, dmu) block supported in ``mu_lo < mu < mu_hi``.

    Supported away from the center, so the radial operator built from it stays
    regular at ``r = 0``.
    """

    def g1(mu, tau=0.0):
        mu = np.asarray(mu, dtype=float)
        b = amplitude * smooth_bump(mu, mu_lo, mu_hi)
        g = np.zeros(mu.shape + (n, n))
        g[..., 0, 0] = b
        g[..., 0, 1] = g[..., 1, 0] = 0.25 * b
        g[..., 1, 1] = -0.25 * b
        return g

    return g1


def perturbed_family(n: int = 4, eps: float = 0.02, delta: float = DEFAULT_DELTA,
                     tau0: float = DEFAULT_TAU0) -> MetricFamily:
    """``g = g_dS + eps * g_1`` with ``g_1`` from :func:`bump_perturbation`; independent of u."""
    one = lambda u: np.ones_like(np.asarray(u, dtype=float))  # noqa: E731
    const = lambda u: eps * np.ones_like(np.asarray(u, dtype=float))  # noqa: E731
    return MetricFamily(n, PolynomialFamily((one, const), (desitter_field(n), bump_perturbation(n))),
                        delta, tau0, constant=True,
                        description={"kind": "perturbed", "eps": eps})


def quadratic_polynomial_family(n: int = 4, eps: float = 1.0, delta: float = DEFAULT_DELTA,
                                tau0: float = DEFAULT_TAU0) -> MetricFamily:
    """``g(u) = g_dS + eps * u**2 * g_1``."""
    one = lambda u: np.ones_like(np.asarray(u, dtype=float))  # noqa: E731
    sq = lambda u: eps * np.asarray(u, dtype=float) ** 2  # noqa: E731
    return MetricFamily(n, PolynomialFamily((one, sq), (desitter_field(n), bump_perturbation(n))),
                        delta, tau0, description={"kind": "polynomial", "eps": eps})


def family_from_config(cfg: Mapping[str, object]) -> MetricFamily:
    """Build a family from ``{dimension, delta, tau0, family: {kind, coefficients}}``.

    Supported kinds: ``desitter``; ``conformal`` with coefficients
    ``{power, scale}``; ``perturbed`` with ``{eps}``; ``polynomial`` with ``{eps}``.
    """
    allowed = {"dimension", "delta", "tau0", "family"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
    n = int(cfg.get("dimension", 4))
    delta = float(cfg.get("delta", DEFAULT_DELTA))
    tau0 = float(cfg.get("tau0", DEFAULT_TAU0))
    fam = dict(cfg.get("family", {}) or {})
    kind = fam.pop("kind", "desitter")
    coeffs = dict(fam.pop("coefficients", {}) or {})
    if fam:
        raise ConfigError(f"unknown family keys: {sorted(fam)}")
    builders = {
        "desitter": (desitter_family, set()),
        "conformal": (conformal_family, {"power", "scale"}),
        "perturbed": (perturbed_family, {"eps"}),
        "polynomial": (quadratic_polynomial_family, {"eps"}),
    }
    if kind not in builders:
        raise ConfigError(f"unknown family kind {kind!r}")
    build, keys = builders[kind]
    if set(coeffs) - keys:
        raise ConfigError(f"unknown coefficients for {kind}: {sorted(set(coeffs) - keys)}")
    return build(n=n, delta=delta, tau0=tau0, **coeffs)
