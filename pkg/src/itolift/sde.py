"""Scalar SDE test processes, Euler-Maruyama simulation and noisy observation.

Every model carries its drift f, diffusion G, an unnormalized stationary
density with its normalizer, the domain over which that density lives, and
the boundary rule applied during simulation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import InvalidInputError, InvalidParameterError

BOUNDARIES = ("none", "reflect", "clip")

BESSEL_EPS = 1e-8
WF_DELTA = 1e-9
STATIONARY_GRID_STEPS = 100_000


@dataclass(frozen=True)
class SdeModel:
    name: str
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    unnormalized_density: Callable[[np.ndarray], np.ndarray]
    normalizer: float
    domain: tuple[float, float]
    boundary: str = "none"
    drift_derivative: Callable[[np.ndarray], np.ndarray] | None = None
    # interval enforced by the boundary rule; defaults to ``domain``
    state_bounds: tuple[float, float] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise InvalidParameterError(f"unknown boundary rule {self.boundary!r}")
        lo, hi = self.domain
        if not lo < hi:
            raise InvalidParameterError(f"empty domain {self.domain}")
        if not self.normalizer > 0:
            raise InvalidParameterError("normalizer must be positive")

    def stationary_density(self, x):
        return self.unnormalized_density(np.asarray(x, dtype=float)) / self.normalizer

    @property
    def bounds(self) -> tuple[float, float]:
        return self.state_bounds if self.state_bounds is not None else self.domain

    def contains(self, x) -> bool:
        lo, hi = self.bounds if self.boundary != "none" else self.domain
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= lo) & (x <= hi)))


def _check_positive(**values):
    for key, val in values.items():
        if not (isinstance(val, (int, float, np.floating, np.integer)) and val > 0 and math.isfinite(val)):
            raise InvalidParameterError(f"{key} must be a positive finite number, got {val!r}")


def make_cubic(sigma: float, domain: tuple[float, float] = (-10.0, 10.0)) -> SdeModel:
    """Bistable double-well process dx = -x(x-1)(x+1) dt + sigma dW.

    The stationary density is the Fokker-Planck solution exp(-2V/sigma^2)
    with V(x) = x^4/4 - x^2/2, normalized over ``domain``.
    """
    _check_positive(sigma=sigma)
    s2 = float(sigma) ** 2

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-2.0 * (0.25 * x**4 - 0.5 * x**2) / s2)

    lo, hi = domain
    z, _ = integrate.quad(density, lo, hi, points=[-1.0, 0.0, 1.0], limit=400, epsabs=0, epsrel=1e-12)
    return SdeModel(
        name="cubic",
        drift=lambda x: -x * (x - 1.0) * (x + 1.0),
        diffusion=lambda x: np.full_like(np.asarray(x, dtype=float), float(sigma)),
        unnormalized_density=density,
        normalizer=z,
        domain=(float(lo), float(hi)),
        boundary="none",
        drift_derivative=lambda x: 1.0 - 3.0 * np.asarray(x, dtype=float) ** 2,
        params={"sigma": float(sigma)},
    )


def make_bessel(n: int, sigma: float, r_max: float) -> SdeModel:
    """Radial part of n-dimensional Brownian motion, reflected in [0, r_max].

    Drift is (n-1) sigma^2 / (2r); the stationary density n r^(n-1) / r_max^n
    does not depend on sigma.
    """
    if isinstance(n, bool) or int(n) != n or n < 2:
        raise InvalidParameterError(f"dimension n must be an integer >= 2, got {n!r}")
    _check_positive(sigma=sigma, r_max=r_max)
    n = int(n)
    c = (n - 1) * float(sigma) ** 2 / 2.0
    r_max = float(r_max)

    return SdeModel(
        name="bessel",
        drift=lambda r: c / np.asarray(r, dtype=float),
        diffusion=lambda r: np.full_like(np.asarray(r, dtype=float), float(sigma)),
        unnormalized_density=lambda r: n * np.asarray(r, dtype=float) ** (n - 1) / r_max**n,
        normalizer=1.0,
        domain=(BESSEL_EPS, r_max),
        boundary="reflect",
        drift_derivative=lambda r: -c / np.asarray(r, dtype=float) ** 2,
        state_bounds=(0.0, r_max),
        params={"n": n, "sigma": float(sigma), "r_max": r_max},
    )


def make_wright_fisher(kappa: float, theta0: float = 2.0, theta1: float = 2.0, sigma: float = 1.0) -> SdeModel:
    """Wright-Fisher diffusion with mutation on (0, 1).

    ``sigma`` multiplies the diffusion sqrt(2 kappa x (1-x)); at sigma = 1 the
    stationary law is Beta(theta1, theta0).
    """
    _check_positive(kappa=kappa, theta0=theta0, theta1=theta1, sigma=sigma)
    kappa, theta0, theta1, sigma = map(float, (kappa, theta0, theta1, sigma))
    a = theta1 / sigma**2
    b = theta0 / sigma**2

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return sigma * np.sqrt(np.clip(2.0 * kappa * x * (1.0 - x), 0.0, None))

    def density(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = x ** (a - 1.0) * (1.0 - x) ** (b - 1.0)
        return np.where((x > 0) & (x < 1), out, 0.0)

    return SdeModel(
        name="wright_fisher",
        drift=lambda x: kappa * (theta1 * (1.0 - np.asarray(x, dtype=float)) - theta0 * np.asarray(x, dtype=float)),
        diffusion=diffusion,
        unnormalized_density=density,
        normalizer=float(special.beta(a, b)),
        domain=(WF_DELTA, 1.0 - WF_DELTA),
        boundary="clip",
        drift_derivative=lambda x: np.full_like(np.asarray(x, dtype=float), -kappa * (theta0 + theta1)),
        params={"kappa": kappa, "theta0": theta0, "theta1": theta1, "sigma": sigma},
    )


def make_ou(rate: float = 1.0, sigma: float = 1.0, width: float = 10.0) -> SdeModel:
    """Ornstein-Uhlenbeck process dx = -rate x dt + sigma dW.

    The lifting of a linear SDE is exact, which makes this the smoke-test
    process. ``width`` is the half-width of the domain in stationary stds.
    """
    _check_positive(rate=rate, sigma=sigma, width=width)
    rate, sigma = float(rate), float(sigma)
    var = sigma**2 / (2.0 * rate)
    half = width * math.sqrt(var)
    return SdeModel(
        name="ou",
        drift=lambda x: -rate * np.asarray(x, dtype=float),
        diffusion=lambda x: np.full_like(np.asarray(x, dtype=float), sigma),
        unnormalized_density=lambda x: np.exp(-0.5 * np.asarray(x, dtype=float) ** 2 / var),
        normalizer=math.sqrt(2.0 * math.pi * var) * math.erf(width / math.sqrt(2.0)),
        domain=(-half, half),
        boundary="none",
        drift_derivative=lambda x: np.full_like(np.asarray(x, dtype=float), -rate),
        params={"rate": rate, "sigma": sigma},
    )


@dataclass(frozen=True)
class ProcessParams:
    """Parameters selecting and configuring one of the test processes."""

    process: str
    sigma: float = 1.0
    n: int = 3
    r_max: float = 5.0
    kappa: float = 2.0
    theta0: float = 2.0
    theta1: float = 2.0
    rate: float = 1.0

    def __post_init__(self):
        if self.process not in ("cubic", "bessel", "wright_fisher", "ou"):
            raise InvalidParameterError(f"unknown process {self.process!r}")
        _check_positive(sigma=self.sigma, r_max=self.r_max, kappa=self.kappa,
                        theta0=self.theta0, theta1=self.theta1, rate=self.rate)
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParameterError("n must be an integer >= 2")

    def build(self, sigma: float | None = None) -> SdeModel:
        s = self.sigma if sigma is None else sigma
        if self.process == "cubic":
            return make_cubic(s)
        if self.process == "bessel":
            return make_bessel(self.n, s, self.r_max)
        if self.process == "wright_fisher":
            return make_wright_fisher(self.kappa, self.theta0, self.theta1, s)
        return make_ou(self.rate, s)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    seed: int | None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        states = self.states.reshape(len(self.times), -1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if states.shape[1] == 1:
                writer.writerow(["t", "x"])
            else:
                writer.writerow(["t"] + [f"x{i}" for i in range(states.shape[1])])
            for t, row in zip(self.times, states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        states = data[:, 1] if data.shape[1] == 2 else data[:, 1:]
        return cls(times=data[:, 0], states=states, seed=None)


@dataclass(frozen=True)
class ObservationSeries:
    times: np.ndarray
    values: np.ndarray
    sigma_y: float
    delta: float
    stride: int

    def __len__(self):
        return len(self.values)


def reflect_into(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold values back into [lo, hi] by mirror reflection at both walls."""
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def apply_boundary(model: SdeModel, x: np.ndarray) -> np.ndarray:
    if model.boundary == "reflect":
        lo, hi = model.bounds
        return reflect_into(x, lo, hi)
    if model.boundary == "clip":
        lo, hi = model.domain
        return np.clip(x, lo, hi)
    return x


def _n_steps(span: float, step: float) -> int:
    k = int(round(span / step))
    if abs(k * step - span) > 1e-9 * max(1.0, span):
        k = int(math.floor(span / step + 1e-9))
    return k


def simulate_em(model: SdeModel, x0, dt: float, T: float, seed: int | None = None,
                rng: np.random.Generator | None = None) -> Trajectory:
    """Euler-Maruyama path(s) with per-step boundary handling.

    ``x0`` may be a scalar or an array of starting points; an array gives one
    independent path per entry and ``states`` has shape (steps + 1, paths).
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if not T >= dt:
        raise InvalidInputError("horizon T must be at least dt")
    x = np.array(x0, dtype=float, copy=True)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if not model.contains(x):
        raise InvalidInputError(f"initial state {x0!r} outside the domain of {model.name}")
    if rng is None:
        rng = np.random.default_rng(seed)

    k = _n_steps(T, dt)
    out = np.empty((k + 1, x.size))
    out[0] = x
    sqdt = math.sqrt(dt)
    drift, diffusion = model.drift, model.diffusion
    for i in range(1, k + 1):
        xi = rng.standard_normal(x.size)
        x = x + drift(x) * dt + diffusion(x) * sqdt * xi
        x = apply_boundary(model, x)
        out[i] = x
    times = dt * np.arange(k + 1)
    return Trajectory(times=times, states=out[:, 0] if scalar else out, seed=seed)


def stationary_table(model: SdeModel, steps: int = STATIONARY_GRID_STEPS):
    """Tabulated CDF of the stationary density on a uniform grid over the domain."""
    lo, hi = model.domain
    grid = np.linspace(lo, hi, steps + 1)
    pdf = model.stationary_density(grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    return grid, cdf


def sample_stationary(model: SdeModel, seed: int | None = None, size=None,
                      rng: np.random.Generator | None = None):
    """Draw from the stationary density by inverse-CDF interpolation."""
    if rng is None:
        rng = np.random.default_rng(seed)
    grid, cdf = stationary_table(model)
    u = rng.uniform(size=size)
    out = np.interp(u, cdf, grid)
    return float(out) if size is None else out


def observe(traj: Trajectory, delta: float, sigma_y: float, seed: int | None = None,
            rng: np.random.Generator | None = None) -> ObservationSeries:
    """Subsample a trajectory every ``delta`` and add N(0, sigma_y^2) noise."""
    if sigma_y < 0:
        raise InvalidInputError("sigma_y must be non-negative")
    dt = traj.dt
    ratio = delta / dt
    stride = int(round(ratio))
    if stride < 1 or abs(stride - ratio) > 1e-6 * max(1.0, ratio):
        raise InvalidInputError(f"delta={delta} is not a positive integer multiple of dt={dt}")
    if rng is None:
        rng = np.random.default_rng(seed)
    truth = traj.states[::stride]
    values = truth + sigma_y * rng.standard_normal(truth.shape)
    return ObservationSeries(times=traj.times[::stride], values=values,
                             sigma_y=float(sigma_y), delta=float(delta), stride=stride)
