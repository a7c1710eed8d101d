"""Weighted b-Sobolev norms on the half-space model ``x > 0`` times a ``y``-torus.

With ``t = -log x`` the measure ``dx/x dy`` becomes ``dt dy``, the Mellin
transform becomes the Fourier transform in ``t``, and the weight ``x^{-alpha}``
becomes ``e^{alpha t}``. Norms are then Fourier multipliers ``<zeta>^s`` applied
to an FFT of the weighted samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, LowerBoundError, WeightError

DECAY_GATE = 1e-12


@dataclass(frozen=True)
class NormSpec:
    s: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.alpha)):
            raise ConfigError("norm order and weight must be finite")


@dataclass
class HalfSpaceField:
    """Samples on ``t in [-T, T]`` (uniform, endpoints included) times ``(n-1)`` periodic ``y`` axes."""

    values: np.ndarray
    T: float
    L: float = 2.0 * math.pi

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim < 1 or self.values.shape[0] < 4:
            raise ConfigError("need at least four t samples")
        if self.T <= 0 or self.L <= 0:
            raise ConfigError("T and L must be positive")

    @property
    def n(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dt(self) -> float:
        return 2.0 * self.T / (self.shape[0] - 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.shape[0])

    @property
    def x(self) -> np.ndarray:
        return np.exp(-self.t)

    def y(self, axis: int = 0) -> np.ndarray:
        m = self.shape[1 + axis]
        return np.arange(m) * (self.L / m)

    @property
    def cell(self) -> float:
        """Volume of one grid cell in ``dt dy``."""
        vol = self.dt
        for m in self.shape[1:]:
            vol *= self.L / m
        return vol

    def mesh(self) -> list[np.ndarray]:
        axes = [self.t] + [self.y(i) for i in range(self.n - 1)]
        return np.meshgrid(*axes, indexing="ij")

    @classmethod
    def from_function(cls, fn: Callable, T: float, shape: Sequence[int], L: float = 2.0 * math.pi
                      ) -> "HalfSpaceField":
        """Sample ``fn(t, *y)`` on a grid with ``shape = (N_t, N_y1, ...)``."""
        probe = cls(np.zeros(tuple(shape)), T, L)
        return cls(np.broadcast_to(fn(*probe.mesh()), tuple(shape)).copy(), T, L)

    def with_values(self, values: np.ndarray) -> "HalfSpaceField":
        return HalfSpaceField(values, self.T, self.L)

    def weighted(self, alpha: float) -> np.ndarray:
        """Samples of ``x^{-alpha} u = e^{alpha t} u``."""
        w = np.exp(alpha * self.t).reshape((-1,) + (1,) * (self.n - 1))
        return w * self.values

    def save(self, path: str | Path) -> None:
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.values)
        meta = {"T": self.T, "L": self.L, "n": self.n, "shape": list(self.shape)}
        path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "HalfSpaceField":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        values = np.load(path.with_suffix(".npy"))
        if list(values.shape) != meta["shape"]:
            raise ConfigError("sidecar shape does not match the stored array")
        return cls(values, meta["T"], meta["L"])


def frequency_weight(field: HalfSpaceField, s: float) -> np.ndarray:
    """``<zeta>^{2s}`` on the FFT grid."""
    freqs = [2.0 * math.pi * np.fft.fftfreq(field.shape[0], field.dt)]
    freqs += [2.0 * math.pi * np.fft.fftfreq(m, field.L / m) for m in field.shape[1:]]
    grids = np.meshgrid(*freqs, indexing="ij")
    zeta2 = sum(g * g for g in grids)
    return (1.0 + zeta2) ** s


def decay_ratio(v: np.ndarray) -> float:
    """Largest modulus on the two ``t``-end slices relative to the global maximum."""
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    if peak == 0.0:
        return 0.0
    ends = max(float(np.max(np.abs(v[0]))), float(np.max(np.abs(v[-1]))))
    return ends / peak


def hb_norm(u: HalfSpaceField, spec: NormSpec = NormSpec(), check_decay: bool = True) -> float:
    """Discrete ``H_b^{s, alpha}`` norm."""
    v = u.weighted(spec.alpha)
    if check_decay:
        ratio = decay_ratio(v)
        if ratio > DECAY_GATE:
            raise WeightError(f"weighted field is {ratio:.2e} of its peak at the t-ends (gate {DECAY_GATE:g})")
    V = np.fft.fftn(v)
    total = np.sum(frequency_weight(u, spec.s) * np.abs(V) ** 2) / v.size
    return float(math.sqrt(u.cell * total))


def l2_quadrature(u: HalfSpaceField, alpha: float = 0.0) -> float:
    """Physical-space ``L^2(x^{-2 alpha} dx/x dy)`` norm: trapezoid in ``t``, periodic sum in ``y``."""
    dens = np.abs(u.weighted(alpha)) ** 2
    per_t = dens.reshape(dens.shape[0], -1).sum(axis=1) * (u.cell / u.dt)
    return float(math.sqrt(np.trapezoid(per_t, u.t)))


def weight_shift(u: HalfSpaceField, gamma: float) -> HalfSpaceField:
    """``x^gamma u``."""
    return u.with_values(u.weighted(-gamma))


# ---------------------------------------------------------------------------
# power weights


def power_profile(beta: float) -> Callable:
    """``x^beta e^{-x}`` in ``t``: a power at ``x -> 0`` cut off smoothly for ``x >~ 1``."""
    def fn(t, *y):
        return np.exp(-beta * t - np.exp(-t))
    return fn


def power_norm_exact(beta: float, alpha: float) -> float:
    """Closed form of the ``s = 0`` norm of ``x^beta e^{-x}`` for ``alpha < beta``.

    ``int_0^infty x^{2(beta - alpha)} e^{-2x} dx/x = Gamma(g) 2^{-g}`` with ``g = 2(beta - alpha)``.
    """
    g = 2.0 * (beta - alpha)
    if g <= 0:
        return math.inf
    return math.sqrt(math.gamma(g) * 2.0 ** (-g))


def power_threshold_study(beta: float, offset: float = 0.2, T_values: Sequence[float] = (150.0, 175.0, 200.0),
                          dt: float = 0.05, s: float = 0.0) -> dict:
    """Norms of ``x^beta e^{-x}`` at ``alpha = beta -+ offset`` over increasing ``T``.

    Below the threshold the gate is enforced and the norm converges; above it the
    gate is bypassed so the growth is visible.
    """
    below, above = [], []
    for T in T_values:
        N = int(round(2.0 * T / dt)) + 1
        u = HalfSpaceField.from_function(power_profile(beta), T, (N,))
        below.append(hb_norm(u, NormSpec(s, beta - offset)))
        above.append(hb_norm(u, NormSpec(s, beta + offset), check_decay=False))
    return {"T": list(T_values), "below": below, "above": above,
            "exact_below": power_norm_exact(beta, beta - offset) if s == 0 else None}


# ---------------------------------------------------------------------------
# products


def algebra_defect(u: HalfSpaceField, v: HalfSpaceField, s: float) -> float:
    """``||uv||_s / (||u||_s ||v||_s)`` in the unweighted norm."""
    spec = NormSpec(s, 0.0)
    nu, nv = hb_norm(u, spec), hb_norm(v, spec)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return hb_norm(u.with_values(u.values * v.values), spec) / (nu * nv)


def random_bandlimited(rng: np.random.Generator, T: float, shape: Sequence[int], L: float = 2.0 * math.pi,
                       modes: int = 3, width: float = 2.5, amplitude: float = 1.0) -> HalfSpaceField:
    """Real field: Gaussian envelope in ``t`` times a random trigonometric polynomial of low degree."""
    probe = HalfSpaceField(np.zeros(tuple(shape)), T, L)
    grids = probe.mesh()
    t = grids[0]
    vals = np.zeros(tuple(shape))
    center = rng.uniform(-T / 10, T / 10)
    for k_t in range(modes + 1):
        for ky in np.ndindex(*([2 * modes + 1] * (len(shape) - 1))):
            kvec = np.array(ky, float) - modes
            phase = sum(2.0 * math.pi * kv * g / L for kv, g in zip(kvec, grids[1:])) if len(shape) > 1 else 0.0
            c = rng.normal() / (1.0 + k_t + np.sum(np.abs(kvec)))
            vals = vals + c * np.cos(k_t * 0.7 * t + phase + rng.uniform(0, 2 * math.pi))
    vals *= np.exp(-((t - center) / width) ** 2)
    peak = np.max(np.abs(vals))
    return HalfSpaceField(amplitude * vals / (peak if peak > 0 else 1.0), T, L)


def concentrated_bump(eps: float, T: float, shape: Sequence[int], L: float = 2.0 * math.pi) -> HalfSpaceField:
    """Gaussian bump of width ``eps`` centred at ``t = 0``, ``y = L/2``."""
    probe = HalfSpaceField(np.zeros(tuple(shape)), T, L)
    grids = probe.mesh()
    r2 = grids[0] ** 2 + sum((g - L / 2) ** 2 for g in grids[1:])
    return HalfSpaceField(np.exp(-r2 / eps ** 2), T, L)


# ---------------------------------------------------------------------------
# reciprocals


def _as_array(a, field: HalfSpaceField) -> np.ndarray:
    if callable(a):
        return np.broadcast_to(np.asarray(a(*field.mesh())), field.shape)
    return np.full(field.shape, complex(a))


def _support(w: HalfSpaceField, rel: float = 1e-12) -> np.ndarray:
    mag = np.abs(w.values)
    peak = float(mag.max()) if mag.size else 0.0
    return mag > rel * peak


@dataclass
class ReciprocalResult:
    norm: float
    bound_factor: float
    """``||w||_s (1 + ||u||_s)^ceil(s) (1 + sup_K |1/(a+u)|)^(ceil(s)+1)``."""
    constant: float | None = None

    @property
    def ratio(self) -> float:
        return self.norm / self.bound_factor if self.bound_factor > 0 else 0.0

    @property
    def holds(self) -> bool:
        return self.constant is None or self.norm <= self.constant * self.bound_factor


def reciprocal_norm(w: HalfSpaceField, u: HalfSpaceField, a, s: float, c0: float = 1e-3,
                    constant: float | None = None) -> ReciprocalResult:
    """``||w / (a + u)||_{H_b^s}`` with the reciprocal-estimate right-hand side.

    Raises ``LowerBoundError`` if ``|a + u| < c0`` somewhere on the support of ``w``.
    """
    denom = _as_array(a, u) + u.values
    K = _support(w)
    if K.any():
        low = float(np.min(np.abs(denom[K])))
        if low < c0:
            raise LowerBoundError(f"|a + u| = {low:.3e} < {c0:g} on supp w")
    quotient = np.where(K, w.values / np.where(K, denom, 1.0), 0.0)
    spec = NormSpec(s, 0.0)
    norm = hb_norm(w.with_values(quotient), spec)
    sup_inv = float(np.max(1.0 / np.abs(denom[K]))) if K.any() else 0.0
    k = math.ceil(s)
    factor = hb_norm(w, spec) * (1.0 + hb_norm(u, spec)) ** k * (1.0 + sup_inv) ** (k + 1)
    return ReciprocalResult(norm, factor, constant)


def reciprocal_corpus(seed: int, size: int, T: float = 20.0, shape: Sequence[int] = (160, 32),
                      u_max: float = 0.1):
    """Pairs ``(w, u)`` of random band-limited fields with ``sup |u| <= u_max``."""
    rng = np.random.default_rng(seed)
    for _ in range(size):
        w = random_bandlimited(rng, T, shape, amplitude=rng.uniform(0.2, 2.0))
        u = random_bandlimited(rng, T, shape, amplitude=u_max * rng.uniform(0.1, 1.0))
        yield w, u


def calibrate_reciprocal_constant(s: float, seed: int = 0, size: int = 100, safety: float = 1.5,
                                  a=1.0, **corpus) -> float:
    """Largest observed ``norm / bound_factor`` times a safety factor."""
    worst = max(reciprocal_norm(w, u, a, s).ratio for w, u in reciprocal_corpus(seed, size, **corpus))
    return safety * worst
