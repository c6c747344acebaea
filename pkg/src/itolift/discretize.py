"""Exact discretization of the lifted linear SDE dU = A U dt + B dW."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError
from .lifting import LiftedModel


def matrix_exponential(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise InvalidInputError("matrix exponential needs a square matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("matrix exponential of a non-finite matrix")
    return scipy.linalg.expm(X)


def psd_repair(P: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() >= 0:
        return P
    w = np.clip(w, 0.0, None)
    P = (V * w) @ V.T
    return 0.5 * (P + P.T)


def van_loan(A, B, delta: float):
    """Transition matrix F and process-noise covariance Q over one step ``delta``.

    Built from the block exponential exp([[A, B B^T], [0, -A^T]] delta), whose
    top blocks are F and Q F^{-T}.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise InvalidInputError(f"incompatible shapes A{A.shape}, B{B.shape}")
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    m = A.shape[0]
    H = np.zeros((2 * m, 2 * m))
    H[:m, :m] = A
    H[:m, m:] = B @ B.T
    H[m:, m:] = -A.T
    E = matrix_exponential(H * delta)
    F = E[:m, :m]
    Q = E[:m, m:] @ F.T
    return F, psd_repair(Q)


@dataclass(frozen=True)
class DiscreteLgss:
    F: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    R_meas: float
    delta: float

    @property
    def dimension(self) -> int:
        return self.F.shape[0]

    def to_dict(self) -> dict:
        m = self.dimension
        return {
            "F": [float(v) for v in self.F.ravel()],
            "Q": [float(v) for v in self.Q.ravel()],
            "C": [float(v) for v in self.C.ravel()],
            "R_meas": float(self.R_meas),
            "delta": float(self.delta),
            "dimension": m,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteLgss":
        m = int(doc["dimension"])
        return cls(
            F=np.array(doc["F"], dtype=float).reshape(m, m),
            Q=np.array(doc["Q"], dtype=float).reshape(m, m),
            C=np.array(doc["C"], dtype=float).reshape(1, m),
            R_meas=float(doc["R_meas"]),
            delta=float(doc["delta"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_discrete(lifted: LiftedModel, delta: float, sigma_y: float) -> DiscreteLgss:
    if sigma_y < 0:
        raise InvalidInputError("sigma_y must be non-negative")
    F, Q = van_loan(lifted.A, lifted.B, delta)
    C = np.zeros((1, lifted.dimension))
    C[0, 0] = 1.0
    return DiscreteLgss(F=F, Q=Q, C=C, R_meas=float(sigma_y) ** 2, delta=float(delta))
