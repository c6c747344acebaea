"""Fitting the lifted model: multi-start BFGS over (exponents, A, B).

The anchor coordinate U_1(x) = x is structural, so the decision vector only
holds the M - 1 exponents and the two M x M matrices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

from .errors import InvalidInputError, OptimizationFailedError
from .lifting import (
    SENTINEL,
    ExponentialBasis,
    LiftedModel,
    QuadratureGrid,
    WeightedResiduals,
    diagnostics,
    penalty_and_gradient,
    stability_penalty,
)
from .sde import SdeModel

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    mu_stab: float = 1.0
    max_iters: int = 2000
    gradient_tol: float = 1e-6
    n_restarts: int = 8
    init_scale: float = 0.25
    exponent_scale: float = 0.5
    seed: int = 0
    c1: float = 1e-4
    c2: float = 0.9
    # "analytic" or "fd"; the stationarity check always uses differences
    gradient: str = "analytic"

    def __post_init__(self):
        if self.mu_stab < 0:
            raise InvalidInputError("mu_stab must be non-negative")
        if self.max_iters < 1 or self.n_restarts < 1:
            raise InvalidInputError("max_iters and n_restarts must be at least 1")
        if self.gradient not in ("analytic", "fd"):
            raise InvalidInputError(f"unknown gradient mode {self.gradient!r}")


@dataclass
class RestartResult:
    index: int
    value: float
    iterations: int
    converged: bool
    gradient_norm: float
    stop_reason: str


@dataclass
class FitReport:
    lifted: LiftedModel
    converged: bool
    iterations: int
    final_gradient_norm: float
    restart_index_of_best: int
    restarts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_gradient_norm": float(self.final_gradient_norm),
            "restart_index_of_best": int(self.restart_index_of_best),
            "restarts": [
                {
                    "index": r.index,
                    "value": float(r.value),
                    "iterations": r.iterations,
                    "converged": r.converged,
                    "gradient_norm": float(r.gradient_norm),
                    "stop_reason": r.stop_reason,
                }
                for r in self.restarts
            ],
        }


def param_count(m: int) -> int:
    return (m - 1) + 2 * m * m


def pack(exponents, A, B) -> np.ndarray:
    exponents = np.atleast_1d(np.asarray(exponents, dtype=float))
    m = exponents.size + 1
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != (m, m) or B.shape != (m, m):
        raise InvalidInputError(f"expected {m}x{m} matrices for {m - 1} exponents")
    return np.concatenate([exponents, A.ravel(), B.ravel()])


def dimension_of(n_params: int) -> int:
    # n = 2 m^2 + m - 1
    m = int(round((-1.0 + math.sqrt(1.0 + 8.0 * (n_params + 1))) / 4.0))
    if m < 1 or param_count(m) != n_params:
        raise InvalidInputError(f"{n_params} parameters do not describe any lifted dimension")
    return m


def unpack(theta, m: int | None = None):
    theta = np.asarray(theta, dtype=float)
    if m is None:
        m = dimension_of(theta.size)
    elif theta.size != param_count(m):
        raise InvalidInputError(f"vector of length {theta.size} does not match dimension {m}")
    k = m - 1
    return theta[:k].copy(), theta[k:k + m * m].reshape(m, m).copy(), theta[k + m * m:].reshape(m, m).copy()


class PenalizedObjective:
    """J + mu_stab * max(0, abscissa(A))^2 as a function of the packed vector."""

    def __init__(self, model: SdeModel, grid: QuadratureGrid, m: int, mu_stab: float):
        self.terms = WeightedResiduals(model, grid)
        self.m = m
        self.mu = mu_stab

    def __call__(self, theta) -> float:
        e, A, B = unpack(theta, self.m)
        j = self.terms.value(e, A, B)
        if j >= SENTINEL or not np.all(np.isfinite(A)):
            return SENTINEL
        return j + stability_penalty(A, self.mu)

    def gradient(self, theta) -> np.ndarray:
        e, A, B = unpack(theta, self.m)
        j, ge, gA, gB = self.terms.value_and_gradient(e, A, B)
        if j >= SENTINEL or not np.all(np.isfinite(A)):
            return np.zeros_like(theta)
        _, gp = penalty_and_gradient(A, self.mu)
        return np.concatenate([ge, (gA + gp).ravel(), gB.ravel()])

    def fd_gradient(self, theta, rel_step: float = 1e-7) -> np.ndarray:
        return central_difference(self, theta, rel_step)


def central_difference(fun, theta, rel_step: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (fun(tp) - fun(tm)) / (2.0 * h)
    return g


def _backtrack(fun, x, f, g, p, c1):
    slope = float(g @ p)
    a = 1.0
    for _ in range(60):
        fn = fun(x + a * p)
        if fn <= f + c1 * a * slope:
            return a, fn
        a *= 0.5
    return None, None


def bfgs(fun, grad, x0, gtol=1e-6, max_iters=2000, c1=1e-4, c2=0.9):
    """BFGS with a strong-Wolfe line search.

    Falls back to Armijo backtracking when the Wolfe search fails and resets
    the inverse Hessian to steepest descent when that fails as well. Returns
    (x, f, g, iterations, converged, stop_reason).
    """
    x = np.array(x0, dtype=float)
    f = fun(x)
    g = grad(x)
    n = x.size
    H = None
    for it in range(max_iters):
        if np.max(np.abs(g)) <= gtol:
            return x, f, g, it, True, "gradient"
        p = -g if H is None else -(H @ g)
        if g @ p >= 0:
            H, p = None, -g
        with np.errstate(all="ignore"):
            a, _, _, f_new, _, g_new = line_search(fun, grad, x, p, gfk=g, old_fval=f,
                                                   c1=c1, c2=c2, maxiter=30)
        if a is None or f_new is None or not math.isfinite(f_new):
            a, f_new = _backtrack(fun, x, f, g, p, c1)
            if a is None:
                if H is None:
                    return x, f, g, it, False, "no-progress"
                H = None
                continue
            g_new = None
        s = a * p
        x_new = x + s
        if g_new is None:
            g_new = grad(x_new)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if H is None:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    return x, f, g, max_iters, bool(np.max(np.abs(g)) <= gtol), "max-iters"


def initial_point(m: int, rng: np.random.Generator, config: OptimizerConfig) -> np.ndarray:
    e = rng.normal(0.0, config.exponent_scale, m - 1)
    A = rng.normal(0.0, config.init_scale, (m, m))
    B = rng.normal(0.0, config.init_scale, (m, m))
    return pack(e, A, B)


def fit(model: SdeModel, m: int, grid: QuadratureGrid, config: OptimizerConfig | None = None) -> FitReport:
    """Minimize the penalized objective from ``n_restarts`` random starts.

    Restarts draw their initial points from one generator seeded with
    ``config.seed``, in order; the restart with the lowest final penalized
    objective is returned.
    """
    config = config or OptimizerConfig()
    if m < 2:
        raise InvalidInputError("lifted dimension must be at least 2")
    obj = PenalizedObjective(model, grid, m, config.mu_stab)
    grad = obj.gradient if config.gradient == "analytic" else obj.fd_gradient
    rng = np.random.default_rng(config.seed)
    starts = [initial_point(m, rng, config) for _ in range(config.n_restarts)]

    best = None
    restarts = []
    for i, theta0 in enumerate(starts):
        x, f, g, iters, conv, reason = bfgs(obj, grad, theta0, config.gradient_tol,
                                            config.max_iters, config.c1, config.c2)
        gnorm = float(np.max(np.abs(g)))
        restarts.append(RestartResult(i, f, iters, conv, gnorm, reason))
        log.info("restart %d: value=%.6g iters=%d grad=%.3g (%s)", i, f, iters, gnorm, reason)
        if math.isfinite(f) and f < SENTINEL and (best is None or f < best[1]):
            best = (i, f, x, iters, conv)
    if best is None:
        raise OptimizationFailedError("every restart ended at a non-finite objective",
                                      [r.__dict__ for r in restarts])
    i, f, x, iters, conv = best
    e, A, B = unpack(x, m)
    lifted = LiftedModel(ExponentialBasis(e), A, B)
    diag = diagnostics(model, lifted, grid)
    diag["penalized_objective"] = f
    diag["mu_stab"] = config.mu_stab
    lifted = LiftedModel(lifted.basis, A, B, diag)
    fd = obj.fd_gradient(x)
    return FitReport(lifted=lifted, converged=conv, iterations=iters,
                     final_gradient_norm=float(np.max(np.abs(fd))),
                     restart_index_of_best=i, restarts=restarts)


def stationarity_check(model: SdeModel, lifted: LiftedModel, grid: QuadratureGrid,
                       h: float = 1e-7, mu_stab: float = 1.0) -> float:
    """Largest central-difference partial derivative of the penalized objective."""
    obj = PenalizedObjective(model, grid, lifted.dimension, mu_stab)
    theta = pack(lifted.exponents, lifted.A, lifted.B)
    return float(np.max(np.abs(central_difference(obj, theta, h))))
