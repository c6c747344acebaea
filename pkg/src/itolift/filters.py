"""Tracking filters: Kalman filter in lifted coordinates and scalar baselines.

All filters consume the same :class:`~itolift.sde.ObservationSeries` and
return one state estimate per observation time. The first observation is
assimilated directly into the shared prior centred on ``x0``; every later one
follows a prediction over the sampling interval.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .discretize import DiscreteLgss, psd_repair
from .errors import InvalidInputError, NumericalError
from .lifting import LiftedModel, lift
from .sde import ObservationSeries, SdeModel, apply_boundary

log = logging.getLogger(__name__)

PSD_TOL = 1e-9


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class UpdateInfo:
    innovation: float
    innovation_var: float
    gain: np.ndarray
    loglik: float


@dataclass
class FilterConfig:
    sigma_model: float = 1.0
    prior_var: float = 0.1
    ukf_alpha: float = 1e-3
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    pf_particles: int = 2000
    pf_resample_threshold: float = 1.0
    r_min: float = 1e-10
    linearization_point: float | None = None
    dt: float = 1e-3

    def __post_init__(self):
        if self.pf_particles < 1:
            raise InvalidInputError("particle count must be at least 1")
        if not self.ukf_alpha > 0:
            raise InvalidInputError("UKF alpha must be positive")


@dataclass
class FilterResult:
    name: str
    estimates: np.ndarray
    variances: np.ndarray
    divergences: int = 0
    extra: dict = field(default_factory=dict)


def check_psd(P: np.ndarray, where: str) -> None:
    if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise NumericalError(f"{where}: covariance lost symmetry")
    if np.linalg.eigvalsh(P).min() < -PSD_TOL:
        raise NumericalError(f"{where}: covariance not positive semidefinite")


def kf_predict(belief: GaussianBelief, F, Q) -> GaussianBelief:
    F = np.atleast_2d(F)
    Q = np.atleast_2d(Q)
    if F.shape != belief.cov.shape or Q.shape != belief.cov.shape:
        raise InvalidInputError("dimension mismatch in predict")
    cov = psd_repair(F @ belief.cov @ F.T + Q)
    return GaussianBelief(F @ belief.mean, cov)


def kf_update(belief: GaussianBelief, y: float, C, R_meas: float):
    """Kalman measurement update with the Joseph-form covariance."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (1, belief.mean.size):
        raise InvalidInputError("observation row has the wrong size")
    P = belief.cov
    PC = P @ C[0]
    s = float(C[0] @ PC) + R_meas
    if not s > 0 or not math.isfinite(s):
        raise NumericalError(f"singular innovation variance {s}")
    K = PC / s
    nu = float(y - C[0] @ belief.mean)
    mean = belief.mean + K * nu
    IKC = np.eye(P.shape[0]) - np.outer(K, C[0])
    cov = psd_repair(IKC @ P @ IKC.T + R_meas * np.outer(K, K))
    loglik = -0.5 * (math.log(2.0 * math.pi * s) + nu * nu / s)
    return GaussianBelief(mean, cov), UpdateInfo(nu, s, K, loglik)


def _scalar_update(m: float, P: float, y: float, R: float):
    s = P + R
    k = P / s
    P_new = (1.0 - k) ** 2 * P + k * k * R
    return m + k * (y - m), max(P_new, 0.0)


def lifted_kf_run(lifted: LiftedModel, discrete: DiscreteLgss, obs: ObservationSeries, x0: float,
                  prior_var: float = 0.1) -> FilterResult:
    """Kalman filter on the lifted state; the estimate is the anchor coordinate."""
    if abs(discrete.R_meas - obs.sigma_y**2) > 1e-12 * max(1.0, discrete.R_meas) or \
            abs(discrete.delta - obs.delta) > 1e-9:
        raise InvalidInputError("discrete model does not match the observation series")
    m = lifted.dimension
    belief = GaussianBelief(lift(lifted.basis, float(x0)), prior_var * np.eye(m))
    R = max(discrete.R_meas, 0.0)
    K = len(obs)
    est = np.empty(K)
    var = np.empty(K)
    loglik = 0.0
    for k in range(K):
        if k > 0:
            belief = kf_predict(belief, discrete.F, discrete.Q)
            check_psd(belief.cov, "lifted-kf predict")
        if R > 0 or belief.cov[0, 0] > 0:
            belief, info = kf_update(belief, obs.values[k], discrete.C, R)
            loglik += info.loglik
        check_psd(belief.cov, "lifted-kf update")
        est[k] = belief.mean[0]
        var[k] = belief.cov[0, 0]
    return FilterResult("lifted_kf", est, var, extra={"loglik": loglik})


def _floor(model: SdeModel, x, cfg: FilterConfig):
    if model.name == "bessel":
        return np.maximum(x, cfg.r_min)
    return x


def _euler_mean(model: SdeModel, x, delta: float, cfg: FilterConfig):
    x = _floor(model, x, cfg)
    return x + model.drift(x) * delta


def _process_var(model: SdeModel, x: float, delta: float, cfg: FilterConfig) -> float:
    return float(model.diffusion(np.array([_floor(model, x, cfg)]))[0] ** 2 * delta)


def _recover(model: SdeModel, m: float, last: float, cfg: FilterConfig):
    lo, hi = model.bounds if model.boundary != "none" else model.domain
    if math.isnan(m):
        m = last
    return float(np.clip(m, lo, hi)), cfg.prior_var


def _scalar_filter(name, model, obs, x0, cfg, predict) -> FilterResult:
    K = len(obs)
    est = np.empty(K)
    var = np.empty(K)
    R = obs.sigma_y**2
    m, P = float(x0), cfg.prior_var
    last = m
    divergences = 0
    for k in range(K):
        if k > 0:
            m, P = predict(m, P)
        if R > 0 or P > 0:
            m, P = _scalar_update(m, P, obs.values[k], R)
        if not (math.isfinite(m) and math.isfinite(P)):
            divergences += 1
            m, P = _recover(model, m, last, cfg)
        if P < -PSD_TOL:
            raise NumericalError(f"{name}: negative variance {P}")
        est[k] = m
        var[k] = P
        last = m
    return FilterResult(name, est, var, divergences)


def ekf_run(model: SdeModel, obs: ObservationSeries, x0: float, cfg: FilterConfig) -> FilterResult:
    """Extended Kalman filter with one Euler step of the drift per interval."""
    delta = obs.delta

    def predict(m, P):
        with np.errstate(all="ignore"):
            xf = float(_floor(model, m, cfg))
            F = 1.0 + float(model.drift_derivative(np.array([xf]))[0]) * delta
            Q = _process_var(model, m, delta, cfg)
            return float(_euler_mean(model, m, delta, cfg)), max(F * F * P + Q, 0.0)

    return _scalar_filter("ekf", model, obs, x0, cfg, predict)


def ukf_weights(cfg: FilterConfig, n: int = 1):
    lam = cfg.ukf_alpha**2 * (n + cfg.ukf_kappa) - n
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - cfg.ukf_alpha**2 + cfg.ukf_beta)
    return lam, wm, wc


def ukf_run(model: SdeModel, obs: ObservationSeries, x0: float, cfg: FilterConfig) -> FilterResult:
    """Unscented Kalman filter with the scaled symmetric sigma-point set."""
    delta = obs.delta
    lam, wm, wc = ukf_weights(cfg)
    scale = math.sqrt(1.0 + lam)

    def predict(m, P):
        with np.errstate(all="ignore"):
            spread = scale * math.sqrt(max(P, 0.0))
            pts = np.array([m, m + spread, m - spread])
            prop = _euler_mean(model, pts, delta, cfg)
            mean = float(wm @ prop)
            cov = float(wc @ (prop - mean) ** 2)
            return mean, max(cov, 0.0) + _process_var(model, m, delta, cfg)

    return _scalar_filter("ukf", model, obs, x0, cfg, predict)


def static_point(model: SdeModel, cfg: FilterConfig) -> float:
    if cfg.linearization_point is not None:
        return float(cfg.linearization_point)
    p = model.params
    if model.name == "cubic":
        return 1.0
    if model.name == "bessel":
        return p["n"] * p["r_max"] / (p["n"] + 1.0)
    if model.name == "wright_fisher":
        return p["theta1"] / (p["theta0"] + p["theta1"])
    return 0.0


def regular_kf_run(model: SdeModel, obs: ObservationSeries, x0: float, cfg: FilterConfig) -> FilterResult:
    """Kalman filter on the drift linearized once at a fixed state."""
    delta = obs.delta
    xbar = static_point(model, cfg)
    fbar = float(model.drift(np.array([xbar]))[0])
    slope = float(model.drift_derivative(np.array([xbar]))[0])
    F = 1.0 + slope * delta
    Q = _process_var(model, xbar, delta, cfg)
    offset = (fbar - slope * xbar) * delta

    def predict(m, P):
        return F * m + offset, F * F * P + Q

    return _scalar_filter("regular_kf", model, obs, x0, cfg, predict)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    positions = (rng.uniform() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="left")


def pf_run(model: SdeModel, obs: ObservationSeries, x0: float, cfg: FilterConfig,
           seed: int | None = None, rng: np.random.Generator | None = None) -> FilterResult:
    """Bootstrap particle filter with Euler-Maruyama proposals and systematic resampling."""
    if rng is None:
        rng = np.random.default_rng(seed)
    n = cfg.pf_particles
    ratio = obs.delta / cfg.dt
    substeps = int(round(ratio))
    if substeps < 1 or abs(substeps - ratio) > 1e-6 * ratio:
        raise InvalidInputError("sampling interval is not a multiple of the particle step")
    sqdt = math.sqrt(cfg.dt)
    R = obs.sigma_y**2
    K = len(obs)
    est = np.empty(K)
    var = np.empty(K)
    resets = 0
    max_norm_err = 0.0

    x = float(x0) + math.sqrt(cfg.prior_var) * rng.standard_normal(n)
    x = apply_boundary(model, x)
    logw = np.zeros(n)
    for k in range(K):
        if k > 0:
            for _ in range(substeps):
                with np.errstate(all="ignore"):
                    x = x + model.drift(x) * cfg.dt + model.diffusion(x) * sqdt * rng.standard_normal(n)
                x = apply_boundary(model, x)
                bad = ~np.isfinite(x)
                if bad.any():
                    lo, hi = model.domain
                    x[bad] = np.clip(np.nan_to_num(x[bad], nan=float(x0)), lo, hi)
        if R > 0:
            logw = logw - 0.5 * (obs.values[k] - x) ** 2 / R
        else:
            logw = np.where(x == obs.values[k], 0.0, -np.inf)
        top = np.max(logw)
        if not math.isfinite(top):
            log.warning("particle weights underflowed at step %d; resetting to uniform", k)
            resets += 1
            w = np.full(n, 1.0 / n)
        else:
            w = np.exp(logw - top)
            w /= w.sum()
        max_norm_err = max(max_norm_err, abs(w.sum() - 1.0))
        est[k] = float(w @ x)
        var[k] = float(w @ (x - est[k]) ** 2)
        ess = 1.0 / float(w @ w)
        if ess <= cfg.pf_resample_threshold * n:
            x = x[systematic_resample(w, rng)]
            logw = np.zeros(n)
        else:
            logw = np.log(w)
    return FilterResult("pf", est, var, divergences=resets,
                        extra={"weight_norm_error": max_norm_err})


def rmse(estimates, truth) -> float:
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise InvalidInputError(f"length mismatch: {estimates.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimates - truth) ** 2)))
