"""Null-bicharacteristics of the static de Sitter dual metric.

Trajectories are integrated in the center chart, which covers the whole
domain, with the fibre variables ``(zeta, sigma)`` kept on the unit sphere.
Because the Hamilton field is homogeneous of degree one in the fibre, this is
the flow on the cosphere bundle up to a reparametrization. Radial points live
at fibre infinity over ``tau = 0``; near them we switch to the rescaled
coordinates ``rho_hat = 1/xi, eta_hat = eta/xi, sigma_hat = sigma/xi`` of the
horizon chart.
"""

from __future__ import annotations

import csv
import enum
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ChartDomainError, IntegratorError
from .geometry import (
    Chart,
    ChartPoint,
    Covector,
    Domain,
    covector_to_center,
    covector_to_horizon,
    dual_quadform,
)

RTOL = 1e-10
ATOL = 1e-13
RADIAL_TOL = 1e-6
ON_SHELL_TOL = 1e-10
PROJECT_TOL = 1e-6
DRIFT_TOL = 1e-8


class Termination(enum.Enum):
    HIT_H1 = "HitH1"
    HIT_H2 = "HitH2"
    CONVERGED_LPLUS = "ConvergedToLplus"
    CONVERGED_LMINUS = "ConvergedToLminus"
    MAX_STEPS = "MaxSteps"
    LEFT_CHART = "LeftChart"


class Direction(enum.Enum):
    FORWARD = 1
    BACKWARD = -1


@dataclass(frozen=True)
class CotangentPoint:
    base: ChartPoint
    fiber: Covector

    def center(self) -> "CotangentPoint":
        return CotangentPoint(self.base.to_center(), covector_to_center(self.base, self.fiber))

    def horizon(self) -> "CotangentPoint":
        return CotangentPoint(self.base.to_horizon(), covector_to_horizon(self.base, self.fiber))

    def rescaled(self) -> tuple[float, np.ndarray, float]:
        """``(rho_hat, eta_hat, sigma_hat)``; needs ``xi != 0``."""
        h = self.horizon().fiber
        if h.xi == 0.0:
            raise ChartDomainError("rescaled coordinates need xi != 0")
        return 1.0 / h.xi, h.eta / h.xi, h.sigma / h.xi

    @classmethod
    def from_rescaled(cls, base: ChartPoint, rho_hat: float, eta_hat, sigma_hat: float) -> "CotangentPoint":
        base = base.to_horizon()
        xi = 1.0 / rho_hat
        return cls(base, Covector.horizon(xi, np.asarray(eta_hat, float) * xi, sigma_hat * xi))

    def p(self) -> float:
        return dual_quadform(self.base, self.fiber)


# ---------------------------------------------------------------------------
# Hamilton vector field


@dataclass(frozen=True)
class HamiltonVector:
    """Components of ``H_p`` in the chart of the point.

    Horizon chart: ``dmu, domega, dlogtau, dxi, deta, dsigma``; ``dlogtau`` is the
    coefficient of ``tau d/dtau`` and ``domega, deta`` are embedding-space
    vectors. Center chart: ``dY, dlogtau, dzeta, dsigma``.
    """

    chart: Chart
    dlogtau: float
    dsigma: float
    dmu: float | None = None
    domega: np.ndarray | None = None
    dxi: float | None = None
    deta: np.ndarray | None = None
    dY: np.ndarray | None = None
    dzeta: np.ndarray | None = None

    def norm(self) -> float:
        parts = [self.dlogtau, self.dsigma]
        for v in (self.dmu, self.dxi):
            if v is not None:
                parts.append(v)
        for v in (self.domega, self.deta, self.dY, self.dzeta):
            if v is not None:
                parts.extend(np.ravel(v))
        return float(np.linalg.norm(parts))


def hamilton_field(pt: CotangentPoint) -> HamiltonVector:
    base, cv = pt.base, pt.fiber
    if cv.chart is Chart.CENTER:
        Y = base.to_center().Y
        zeta, sigma = cv.zeta, cv.sigma
        s = float(Y @ zeta) - sigma
        return HamiltonVector(Chart.CENTER, dlogtau=-2.0 * s, dsigma=0.0,
                              dY=2.0 * s * Y - 2.0 * zeta, dzeta=-2.0 * s * zeta)
    base = base.to_horizon()
    mu, w = base.mu, base.omega
    xi, eta, sigma = cv.xi, cv.eta, cv.sigma
    eta2 = float(eta @ eta)
    r2 = 1.0 - mu
    if eta2 != 0.0 and r2 <= 0.0:
        raise ChartDomainError("field is singular at mu >= 1 when eta != 0")
    inv_r2 = 1.0 / r2 if eta2 else 0.0
    return HamiltonVector(
        Chart.HORIZON,
        dlogtau=4.0 * r2 * xi + 2.0 * sigma,
        dsigma=0.0,
        dmu=4.0 * r2 * (-2.0 * mu * xi + sigma),
        domega=-2.0 * inv_r2 * eta,
        dxi=4.0 * (1.0 - 2.0 * mu) * xi * xi + 4.0 * sigma * xi + inv_r2 * inv_r2 * eta2,
        deta=2.0 * inv_r2 * eta2 * w,
    )


# ---------------------------------------------------------------------------
# rescaled field near the radial set


def _sphere_K(a: np.ndarray) -> np.ndarray:
    """Dual round metric in gnomonic coordinates ``omega = (a, 1)/sqrt(1+|a|^2)``."""
    return (1.0 + a @ a) * (np.eye(a.size) + np.outer(a, a))


def _grad_a_quad(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Gradient in ``a`` of ``e . K(a) e``."""
    ae = float(a @ e)
    return 2.0 * a * (e @ e + ae * ae) + 2.0 * (1.0 + a @ a) * ae * e


def rescaled_field(state: np.ndarray, n: int) -> np.ndarray:
    """``rho_hat * H_p`` in coordinates ``(mu, a, tau, rho_hat, eta_hat, sigma_hat)``."""
    k = n - 2
    mu = state[0]
    a = state[1:1 + k]
    tau = state[1 + k]
    rho = state[2 + k]
    e = state[3 + k:3 + 2 * k]
    sh = state[3 + 2 * k]
    r2 = 1.0 - mu
    K = _sphere_K(a)
    quad = float(e @ K @ e)
    Xi = 4.0 * (1.0 - 2.0 * mu) + 4.0 * sh + quad / (r2 * r2)
    out = np.empty_like(state)
    out[0] = 4.0 * r2 * (-2.0 * mu + sh)
    out[1:1 + k] = -2.0 / r2 * (K @ e)
    out[1 + k] = (4.0 * r2 + 2.0 * sh) * tau
    out[2 + k] = -Xi * rho
    out[3 + k:3 + 2 * k] = _grad_a_quad(a, e) / r2 - Xi * e
    out[3 + 2 * k] = -Xi * sh
    return out


def _rotation_to_pole(w: np.ndarray) -> np.ndarray:
    """Orthogonal matrix ``R`` with ``R @ w = e_last`` (Householder reflection)."""
    m = w.size
    target = np.zeros(m)
    target[-1] = 1.0
    v = w - target
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return np.eye(m)
    v /= nv
    return np.eye(m) - 2.0 * np.outer(v, v)


def rescaled_state(pt: CotangentPoint) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled coordinates of ``pt`` in a gnomonic chart centered at its ``omega``.

    Returns the state and the rotation used, so callers can map back.
    """
    h = pt.horizon()
    n = h.base.dim
    R = _rotation_to_pole(h.base.omega)
    rho, eta_hat, sh = pt.rescaled()
    eta_rot = R @ eta_hat
    k = n - 2
    # at a = 0 the coordinate vectors d/da_i are the first k embedding axes
    state = np.concatenate([[h.base.mu], np.zeros(k), [h.base.tau], [rho], eta_rot[:k], [sh]])
    return state, R


def radial_set_residual(pt: CotangentPoint) -> float:
    """``|mu| + tau + |eta_hat| + |sigma_hat|``; zero exactly on the radial set."""
    h = pt.horizon()
    xi = h.fiber.xi
    if xi == 0.0:
        raise ChartDomainError("the radial set requires xi != 0")
    return (abs(h.base.mu) + abs(h.base.tau) + float(np.linalg.norm(h.fiber.eta)) / abs(xi)
            + abs(h.fiber.sigma) / abs(xi))


def numerical_jacobian(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    J = np.empty((x.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = step
        J[:, j] = (fun(x + dx) - fun(x - dx)) / (2.0 * step)
    return J


def linearization_eigenvalues(pt: CotangentPoint, step: float = 1e-6,
                              residual_tol: float = 1e-10) -> np.ndarray:
    """Eigenvalues of the Jacobian of ``rho_hat H_p`` at a radial point, sorted ascending."""
    res = radial_set_residual(pt)
    if res >= residual_tol:
        raise ChartDomainError(f"not a radial point: residual {res:.3e}")
    n = pt.base.dim
    state, _ = rescaled_state(pt)
    J = numerical_jacobian(lambda s: rescaled_field(s, n), state, step)
    ev = np.linalg.eigvals(J)
    if np.max(np.abs(ev.imag)) > 1e-6:
        raise ChartDomainError("linearization has complex eigenvalues")
    return np.sort(ev.real)


def rescaled_divergence(pt: CotangentPoint, step: float = 1e-6) -> float:
    n = pt.base.dim
    state, _ = rescaled_state(pt)
    return float(np.trace(numerical_jacobian(lambda s: rescaled_field(s, n), state, step)))


# ---------------------------------------------------------------------------
# projected flow in the center chart


@dataclass(frozen=True)
class Perturbation:
    """``p_eps = p + eps * exp(-|Y|^2) * zeta_1^2``, a generic tau-independent perturbation."""

    eps: float = 0.0

    def extra(self, Y, zeta):
        b = np.exp(-(Y @ Y))
        return self.eps * b * zeta[0] ** 2

    def grad_zeta(self, Y, zeta):
        g = np.zeros_like(zeta)
        g[0] = 2.0 * self.eps * np.exp(-(Y @ Y)) * zeta[0]
        return g

    def grad_Y(self, Y, zeta):
        return -2.0 * Y * self.extra(Y, zeta)


def _p_center(Y, zeta, sigma, pert: Perturbation) -> float:
    s = Y @ zeta - sigma
    val = s * s - zeta @ zeta
    if pert.eps:
        val += pert.extra(Y, zeta)
    return float(val)


def _projected_rhs(n: int, sign: float, pert: Perturbation):
    m = n - 1

    def rhs(_s, x):
        Y = x[:m]
        tau = x[m]
        zeta = x[m + 1:2 * m + 1]
        sigma = x[2 * m + 1]
        s = Y @ zeta - sigma
        dY = 2.0 * s * Y - 2.0 * zeta
        dzeta = -2.0 * s * zeta
        if pert.eps:
            dY = dY + pert.grad_zeta(Y, zeta)
            dzeta = dzeta - pert.grad_Y(Y, zeta)
        dtau = -2.0 * s * tau
        theta = x[m + 1:]
        F = np.concatenate([dzeta, [0.0]])
        dtheta = F - (theta @ F) * theta
        return sign * np.concatenate([dY, [dtau], dtheta])

    return rhs


def _radial_distance(x: np.ndarray, m: int, which: int) -> float:
    """Distance-like quantity to ``L_plus`` (which=+1) or ``L_minus`` (which=-1)."""
    Y = x[:m]
    tau = x[m]
    zeta = x[m + 1:2 * m + 1]
    sigma = x[2 * m + 1]
    nz = np.linalg.norm(zeta)
    if nz == 0.0:
        return np.inf
    mu = 1.0 - Y @ Y
    zhat = zeta / nz
    # Y = -/+ zeta/|zeta| on L_plus / L_minus
    offset = np.linalg.norm(Y + which * zhat)
    r = np.sqrt(max(Y @ Y, 1e-300))
    w = Y / r
    zw = zeta @ w
    xi = -zw / (2.0 * r)
    if xi == 0.0:
        return np.inf
    eta = r * (zeta - zw * w)
    res = abs(mu) + abs(tau) + np.linalg.norm(eta) / abs(xi) + abs(sigma) / abs(xi)
    return float(max(res, offset))


@dataclass
class Trajectory:
    samples_s: np.ndarray
    samples_x: np.ndarray
    n: int
    termination: Termination
    component: int
    p_drift: float
    final_residual: float

    def points(self) -> list[CotangentPoint]:
        m = self.n - 1
        pts = []
        for x in self.samples_x:
            pts.append(CotangentPoint(ChartPoint.center(x[:m], max(x[m], 0.0)),
                                      Covector.center(x[m + 1:2 * m + 1], x[2 * m + 1])))
        return pts

    def to_csv(self) -> str:
        m = self.n - 1
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        header = ["s", "chart"] + [f"Y{i}" for i in range(m)] + ["tau"] + \
            [f"zeta{i}" for i in range(m)] + ["sigma", "p", "component"]
        w.writerow(header)
        for s, x in zip(self.samples_s, self.samples_x):
            p = _p_center(x[:m], x[m + 1:2 * m + 1], x[2 * m + 1], Perturbation())
            w.writerow([f"{s:.12e}", "center"] + [f"{v:.12e}" for v in x] + [f"{p:.6e}", self.component])
        return buf.getvalue()


def _center_state(pt: CotangentPoint) -> np.ndarray:
    c = pt.center()
    fib = np.concatenate([c.fiber.zeta, [c.fiber.sigma]])
    nf = np.linalg.norm(fib)
    if nf == 0.0:
        raise ChartDomainError("zero covector is not in the characteristic set")
    return np.concatenate([c.base.Y, [c.base.tau], fib / nf])


def project_to_characteristic_set(x: np.ndarray, n: int, pert: Perturbation = Perturbation()) -> np.ndarray:
    """Adjust ``sigma`` so that ``p = 0``, keeping the component, then renormalize."""
    m = n - 1
    Y, zeta, sigma = x[:m], x[m + 1:2 * m + 1], x[2 * m + 1]
    yz = Y @ zeta
    disc = zeta @ zeta - (pert.extra(Y, zeta) if pert.eps else 0.0)
    if disc <= 0.0:
        raise ChartDomainError("no characteristic covector with this zeta")
    sgn = 1.0 if sigma - yz > 0 else -1.0
    out = x.copy()
    out[2 * m + 1] = yz + sgn * np.sqrt(disc)
    out[m + 1:] /= np.linalg.norm(out[m + 1:])
    return out


def integrate(start: CotangentPoint, direction: Direction = Direction.FORWARD,
              domain: Domain = Domain(), radial_tol: float = RADIAL_TOL,
              max_time: float = 200.0, perturbation: Perturbation = Perturbation(),
              rtol: float = RTOL, atol: float = ATOL) -> Trajectory:
    """Follow a null-bicharacteristic until it leaves the domain or reaches a radial set."""
    n = start.base.dim
    m = n - 1
    x0 = _center_state(start)
    p0 = _p_center(x0[:m], x0[m + 1:2 * m + 1], x0[2 * m + 1], perturbation)
    if abs(p0) > PROJECT_TOL:
        raise ChartDomainError(f"start is not characteristic: p = {p0:.3e}")
    if abs(p0) > ON_SHELL_TOL:
        x0 = project_to_characteristic_set(x0, n, perturbation)
    comp = 1 if x0[2 * m + 1] - x0[:m] @ x0[m + 1:2 * m + 1] > 0 else -1
    sign = float(direction.value)
    rhs = _projected_rhs(n, sign, perturbation)
    r2max = 1.0 + domain.delta

    def ev_h1(_s, x):
        return x[m] - domain.tau0
    ev_h1.terminal = True
    ev_h1.direction = 1

    def ev_h2(_s, x):
        return x[:m] @ x[:m] - r2max
    ev_h2.terminal = True
    ev_h2.direction = 1

    def ev_lp(_s, x):
        return np.log(_radial_distance(x, m, +1) / radial_tol)
    ev_lp.terminal = True
    ev_lp.direction = -1

    def ev_lm(_s, x):
        return np.log(_radial_distance(x, m, -1) / radial_tol)
    ev_lm.terminal = True
    ev_lm.direction = -1

    sol = solve_ivp(rhs, (0.0, max_time), x0, method="DOP853", rtol=rtol, atol=atol,
                    events=[ev_h1, ev_h2, ev_lp, ev_lm])
    if sol.status == -1:
        raise IntegratorError(sol.message)
    xs = sol.y.T
    ps = np.array([_p_center(x[:m], x[m + 1:2 * m + 1], x[2 * m + 1], perturbation) for x in xs])
    drift = float(np.max(np.abs(ps - ps[0])))
    term = Termination.MAX_STEPS
    if sol.status == 1:
        fired = [i for i, te in enumerate(sol.t_events) if te.size]
        first = min(fired, key=lambda i: sol.t_events[i][0])
        term = [Termination.HIT_H1, Termination.HIT_H2,
                Termination.CONVERGED_LPLUS, Termination.CONVERGED_LMINUS][first]
    else:
        last = xs[-1]
        if last[:m] @ last[:m] > r2max or last[m] > domain.tau0:
            term = Termination.LEFT_CHART
    final = xs[-1]
    res = min(_radial_distance(final, m, +1), _radial_distance(final, m, -1))
    return Trajectory(sol.t, xs, n, term, comp, drift, res)


# ---------------------------------------------------------------------------
# non-trapping scan


@dataclass
class ScanConfig:
    n: int = 4
    delta: float = 0.1
    tau0: float = 1.0
    samples_per_component: int = 500
    seed: int = 0
    tau_min: float = 1e-3
    boundary_fraction: float = 0.0
    perturbation_eps: float = 0.0
    neighborhood_radius: float = RADIAL_TOL
    max_time: float = 200.0
    workers: int = 1


@dataclass
class ComponentReport:
    total: int = 0
    reached_H1: int = 0
    reached_H2: int = 0
    converged_radial: int = 0
    failures: list = field(default_factory=list)
    max_p_drift: float = 0.0

    def merge(self, other: "ComponentReport") -> "ComponentReport":
        return ComponentReport(self.total + other.total, self.reached_H1 + other.reached_H1,
                               self.reached_H2 + other.reached_H2,
                               self.converged_radial + other.converged_radial,
                               self.failures + other.failures,
                               max(self.max_p_drift, other.max_p_drift))


def sample_seeds(cfg: ScanConfig, component: int, rng: np.random.Generator) -> list[CotangentPoint]:
    """Random points of the characteristic set over the interior of the domain."""
    m = cfg.n - 1
    pert = Perturbation(cfg.perturbation_eps)
    rmax = np.sqrt(1.0 + cfg.delta)
    seeds = []
    for i in range(cfg.samples_per_component):
        d = rng.normal(size=m)
        d /= np.linalg.norm(d)
        rad = 0.999 * rmax * rng.uniform() ** (1.0 / m)
        Y = rad * d
        if rng.uniform() < cfg.boundary_fraction:
            tau = 0.0
        else:
            tau = float(np.exp(rng.uniform(np.log(cfg.tau_min), np.log(0.999 * cfg.tau0))))
        zeta = rng.normal(size=m)
        zeta /= np.linalg.norm(zeta)
        disc = zeta @ zeta - (pert.extra(Y, zeta) if pert.eps else 0.0)
        sigma = Y @ zeta + component * np.sqrt(disc)
        seeds.append(CotangentPoint(ChartPoint.center(Y, tau), Covector.center(zeta, sigma)))
    return seeds


_EXPECTED = {
    1: {Termination.HIT_H1, Termination.CONVERGED_LPLUS},
    -1: {Termination.HIT_H2, Termination.CONVERGED_LMINUS},
}


def _run_chunk(args) -> ComponentReport:
    cfg, component, seeds = args
    dom = Domain(cfg.delta, cfg.tau0)
    pert = Perturbation(cfg.perturbation_eps)
    rep = ComponentReport()
    for idx, seed in seeds:
        rep.total += 1
        try:
            tr = integrate(seed, Direction.FORWARD, dom, radial_tol=cfg.neighborhood_radius,
                           max_time=cfg.max_time, perturbation=pert)
        except Exception as exc:  # aggregated, scan keeps going
            rep.failures.append({"index": idx, "reason": type(exc).__name__, "detail": str(exc)})
            continue
        rep.max_p_drift = max(rep.max_p_drift, tr.p_drift)
        ok = tr.termination in _EXPECTED[component] and tr.p_drift < DRIFT_TOL
        if not ok:
            rep.failures.append({"index": idx, "reason": tr.termination.value,
                                 "p_drift": tr.p_drift})
            continue
        if tr.termination is Termination.HIT_H1:
            rep.reached_H1 += 1
        elif tr.termination is Termination.HIT_H2:
            rep.reached_H2 += 1
        else:
            rep.converged_radial += 1
    return rep


def nontrapping_scan(cfg: ScanConfig) -> dict:
    """Integrate random seeds forward in both halves of the characteristic set.

    Seeds in the future half must reach ``H1`` or converge to ``L_plus``; seeds in
    the past half must reach ``H2`` or converge to ``L_minus``. Anything else is
    recorded as a failure; exceptions are caught per sample.
    """
    rng = np.random.default_rng(cfg.seed)
    out = {"config": asdict(cfg)}
    for comp, name in ((1, "future"), (-1, "past")):
        seeds = list(enumerate(sample_seeds(cfg, comp, rng)))
        if cfg.workers > 1:
            chunks = [seeds[i::cfg.workers] for i in range(cfg.workers)]
            with ProcessPoolExecutor(cfg.workers) as ex:
                parts = list(ex.map(_run_chunk, [(cfg, comp, c) for c in chunks]))
            rep = ComponentReport()
            for p in parts:
                rep = rep.merge(p)
            rep.failures.sort(key=lambda f: f["index"])
        else:
            rep = _run_chunk((cfg, comp, seeds))
        out[name] = asdict(rep)
    out["total"] = out["future"]["total"] + out["past"]["total"]
    out["failures"] = len(out["future"]["failures"]) + len(out["past"]["failures"])
    return out


def radial_point(n: int, which: int = 1, omega: Iterable[float] | None = None,
                 xi: float = 1.0) -> CotangentPoint:
    """The point of ``R_plus`` (which=+1) or ``R_minus`` over ``omega`` with fibre ``|xi|``."""
    if omega is None:
        omega = np.zeros(n - 1)
        omega[-1] = 1.0
    base = ChartPoint.horizon(0.0, list(omega), 0.0)
    return CotangentPoint(base, Covector.horizon(which * abs(xi), np.zeros(n - 1), 0.0))


def detect_radial_point(n: int = 4, seed: int = 0, tol: float = 1e-11) -> CotangentPoint:
    """Flow a boundary seed of the future half forward until it sits on ``L_plus``."""
    rng = np.random.default_rng(seed)
    m = n - 1
    Y = rng.normal(size=m)
    Y *= 0.5 / np.linalg.norm(Y)
    zeta = rng.normal(size=m)
    zeta /= np.linalg.norm(zeta)
    sigma = Y @ zeta + np.linalg.norm(zeta)
    start = CotangentPoint(ChartPoint.center(Y, 0.0), Covector.center(zeta, sigma))
    tr = integrate(start, Direction.FORWARD, radial_tol=tol, rtol=1e-12, atol=1e-15)
    if tr.termination is not Termination.CONVERGED_LPLUS:
        raise IntegratorError(f"boundary seed ended with {tr.termination.value}")
    return tr.points()[-1]
