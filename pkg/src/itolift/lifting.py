"""Lifting map, generator, Ito residuals and the density-weighted objective.

The lifting map is U(x) = (x, exp(a_1 x), ..., exp(a_{M-1} x)). The first
coordinate is the anchor and always reproduces the state itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalError, UndefinedMetricError
from .sde import SdeModel

# objective value reported when the residuals overflow
SENTINEL = 1e12

DEFAULT_DX = {"cubic": 0.005, "bessel": 0.0005, "wright_fisher": 0.0005, "ou": 0.005}


@dataclass(frozen=True)
class ExponentialBasis:
    exponents: np.ndarray

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.exponents, dtype=float)).copy()
        e.setflags(write=False)
        object.__setattr__(self, "exponents", e)

    @property
    def dimension(self) -> int:
        return self.exponents.size + 1

    def evaluate(self, x):
        """Return (U, U', U'') stacked as arrays of shape (M, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = self.exponents[:, None]
        shape = (self.dimension, x.size)
        U, dU, d2U = np.empty(shape), np.empty(shape), np.empty(shape)
        U[0], dU[0], d2U[0] = x, 1.0, 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            np.exp(e * x, out=U[1:])
            np.multiply(e, U[1:], out=dU[1:])
            np.multiply(e, dU[1:], out=d2U[1:])
        return U, dU, d2U


@dataclass(frozen=True)
class LiftedModel:
    basis: ExponentialBasis
    A: np.ndarray
    B: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        m = self.basis.dimension
        if A.shape != (m, m) or B.shape != (m, m):
            raise InvalidInputError(f"A and B must be {m}x{m}, got {A.shape} and {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    @property
    def exponents(self) -> np.ndarray:
        return self.basis.exponents

    def lift(self, x):
        return lift(self.basis, x)

    def to_dict(self) -> dict:
        return {
            "exponents": [float(v) for v in self.basis.exponents],
            "A": [float(v) for v in self.A.ravel()],
            "B": [float(v) for v in self.B.ravel()],
            "dimension": self.dimension,
            "diagnostics": {k: _plain(v) for k, v in self.diagnostics.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LiftedModel":
        basis = ExponentialBasis(np.array(doc["exponents"], dtype=float))
        m = basis.dimension
        return cls(
            basis=basis,
            A=np.array(doc["A"], dtype=float).reshape(m, m),
            B=np.array(doc["B"], dtype=float).reshape(m, m),
            diagnostics=dict(doc.get("diagnostics", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LiftedModel":
        return cls.from_dict(json.loads(text))


def _plain(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


@dataclass(frozen=True)
class QuadratureGrid:
    points: np.ndarray
    weights: np.ndarray
    dx: float


def make_grid(model: SdeModel, dx: float | None = None, bounds: tuple[float, float] | None = None) -> QuadratureGrid:
    """Midpoint-rule grid over the model domain, weighted by the stationary density."""
    if dx is None:
        dx = DEFAULT_DX.get(model.name, 0.005)
    lo, hi = model.domain if bounds is None else bounds
    if not dx > 0 or not lo < hi:
        raise InvalidInputError("grid needs dx > 0 and a non-empty interval")
    n = max(1, int(round((hi - lo) / dx)))
    h = (hi - lo) / n
    points = lo + (np.arange(n) + 0.5) * h
    weights = np.clip(model.stationary_density(points), 0.0, None) * h
    return QuadratureGrid(points=points, weights=weights, dx=h)


def lift(basis: ExponentialBasis, x):
    """Map a scalar state (or array of states) to lifted coordinates."""
    U, _, _ = basis.evaluate(x)
    if not np.all(np.isfinite(U)):
        raise NumericalError(f"lifting overflow at x={x!r} with exponents {basis.exponents.tolist()}")
    return U[:, 0] if np.ndim(x) == 0 else U


def generator_apply(model: SdeModel, basis: ExponentialBasis, x):
    """Apply L u = f u' + G^2 u'' / 2 to every basis function."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, dU, d2U = basis.evaluate(x)
    out = model.drift(x) * dU + 0.5 * model.diffusion(x) ** 2 * d2U
    return out


def _squeeze(values, x):
    return values[:, 0] if np.ndim(x) == 0 else values


def residual_R(model: SdeModel, lifted: LiftedModel, x):
    U, _, _ = lifted.basis.evaluate(x)
    return _squeeze(generator_apply(model, lifted.basis, x) - lifted.A @ U, x)


def residual_S(model: SdeModel, lifted: LiftedModel, x):
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    U, dU, _ = lifted.basis.evaluate(xs)
    return _squeeze(model.diffusion(xs) * dU - lifted.B @ U, x)


def spectral_abscissa(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("spectral abscissa needs a square matrix")
    try:
        lam = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed for A={A.tolist()}: {exc}") from exc
    return float(np.max(lam.real))


def stability_penalty(A, mu_stab: float) -> float:
    if mu_stab < 0:
        raise InvalidInputError("mu_stab must be non-negative")
    return mu_stab * max(0.0, spectral_abscissa(A)) ** 2


def r2_lift(j_value: float, j_null: float) -> float:
    if not j_null > 0:
        raise UndefinedMetricError(f"R2_lift undefined for J_null={j_null}")
    return 1.0 - j_value / j_null


class WeightedResiduals:
    """Objective terms for one (model, grid) pair, with drift and diffusion cached.

    ``density`` evaluates the weighted integrand pointwise, ``value`` the
    quadrature sum and ``value_and_gradient`` adds the exact gradient with
    respect to exponents, A and B.
    """

    def __init__(self, model: SdeModel, grid: QuadratureGrid):
        self.model = model
        self.grid = grid
        self.x = grid.points
        self.f = model.drift(self.x)
        self.g = model.diffusion(self.x)
        self.w = grid.weights
        self._key = None
        self._cached = None

    def residuals(self, exponents, A, B):
        # the line search asks for value and gradient at the same point
        key = b"".join(np.ascontiguousarray(v, dtype=float).tobytes() for v in (exponents, A, B))
        if key != self._key:
            self._cached = self._residuals(exponents, A, B)
            self._key = key
        return self._cached

    def _residuals(self, exponents, A, B):
        basis = ExponentialBasis(exponents)
        U, dU, d2U = basis.evaluate(self.x)
        LU = self.f * dU + 0.5 * self.g**2 * d2U
        GU = self.g * dU
        with np.errstate(over="ignore", invalid="ignore"):
            R = LU - A @ U
            S = GU - B @ U
        return U, R, S, (dU, LU, GU)

    def pointwise(self, exponents, A, B):
        """(|R|^2 + |S|^2) rho(x) at each grid point."""
        _, R, S, _ = self.residuals(exponents, A, B)
        with np.errstate(over="ignore", invalid="ignore"):
            return ((R**2).sum(0) + (S**2).sum(0)) * self.model.stationary_density(self.x)

    def value(self, exponents, A, B) -> float:
        _, R, S, _ = self.residuals(exponents, A, B)
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(((R**2).sum(0) + (S**2).sum(0)) @ self.w)
        return val if math.isfinite(val) else SENTINEL

    def null_value(self, exponents) -> float:
        m = np.size(exponents) + 1
        z = np.zeros((m, m))
        return self.value(exponents, z, z)

    def value_and_gradient(self, exponents, A, B):
        exponents = np.atleast_1d(np.asarray(exponents, dtype=float))
        U, R, S, (dU, LU, GU) = self.residuals(exponents, A, B)
        m = U.shape[0]
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(((R**2).sum(0) + (S**2).sum(0)) @ self.w)
        if not math.isfinite(val):
            return SENTINEL, np.zeros(m - 1), np.zeros((m, m)), np.zeros((m, m))
        Rw = R * self.w
        Sw = S * self.w
        gA = -2.0 * Rw @ U.T
        gB = -2.0 * Sw @ U.T
        ge = np.empty(m - 1)
        x, f, g = self.x, self.f, self.g
        for k, a in enumerate(exponents):
            row = k + 1
            E = U[row]
            d_u = x * E
            d_du = (1.0 + a * x) * E
            d_d2u = (2.0 * a + a * a * x) * E
            d_lu = f * d_du + 0.5 * g * g * d_d2u
            d_gu = g * d_du
            ge[k] = 2.0 * (Rw[row] @ d_lu - (A[:, row] @ Rw) @ d_u
                           + Sw[row] @ d_gu - (B[:, row] @ Sw) @ d_u)
        return val, ge, gA, gB


def objective(model: SdeModel, lifted: LiftedModel, grid: QuadratureGrid) -> float:
    return WeightedResiduals(model, grid).value(lifted.exponents, lifted.A, lifted.B)


def objective_null(model: SdeModel, basis: ExponentialBasis, grid: QuadratureGrid) -> float:
    return WeightedResiduals(model, grid).null_value(basis.exponents)


def abscissa_gradient(A: np.ndarray):
    """Spectral abscissa of A and its derivative with respect to the entries.

    The derivative is the classical simple-eigenvalue perturbation formula;
    at a repeated rightmost eigenvalue it is one element of the subgradient.
    """
    lam, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    k = int(np.argmax(lam.real))
    y, v = vl[:, k], vr[:, k]
    denom = np.conj(y) @ v
    if abs(denom) < 1e-14:
        return float(lam[k].real), np.zeros_like(A)
    return float(lam[k].real), np.real(np.outer(np.conj(y), v) / denom)


def penalty_and_gradient(A: np.ndarray, mu_stab: float):
    if mu_stab == 0:
        return 0.0, np.zeros_like(A)
    ab, d = abscissa_gradient(A)
    if ab <= 0:
        return 0.0, np.zeros_like(A)
    return mu_stab * ab * ab, 2.0 * mu_stab * ab * d


def diagnostics(model: SdeModel, lifted: LiftedModel, grid: QuadratureGrid) -> dict:
    terms = WeightedResiduals(model, grid)
    j = terms.value(lifted.exponents, lifted.A, lifted.B)
    j0 = terms.null_value(lifted.exponents)
    return {
        "J_value": j,
        "J_null": j0,
        "r2_lift": r2_lift(j, j0) if j0 > 0 else float("nan"),
        "spectral_abscissa": spectral_abscissa(lifted.A),
    }
