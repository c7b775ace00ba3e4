"""Periodic elasticity tensors ``a_ij^{alpha beta}(y)``.

Tensors are stored as ``C[..., alpha, i, beta, j] = a_ij^{alpha beta}`` so that
the flux is ``sigma[alpha, i] = C[alpha, i, beta, j] * du[beta]/dx[j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["CoefficientField", "isotropic_tensor", "check_symmetries", "ellipticity_bounds"]


class CoefficientError(ValueError):
    pass


def isotropic_tensor(lam, mu) -> np.ndarray:
    """Isotropic tensor for (broadcastable) Lame parameters, shape (..., 2, 2, 2, 2)."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    eye = np.eye(2)
    t_lam = np.einsum("ai,bj->aibj", eye, eye)
    t_mu = np.einsum("ab,ij->aibj", eye, eye) + np.einsum("aj,ib->aibj", eye, eye)
    return lam[..., None, None, None, None] * t_lam + mu[..., None, None, None, None] * t_mu


def check_symmetries(C: np.ndarray) -> float:
    """Largest violation of the major and minor symmetries, relative to max |C|."""
    major = np.abs(C - np.swapaxes(np.swapaxes(C, -4, -2), -3, -1)).max()
    minor = np.abs(C - np.swapaxes(C, -4, -3)).max()
    scale = max(np.abs(C).max(), 1e-300)
    return float(max(major, minor) / scale)


def _sym_basis() -> np.ndarray:
    """Orthonormal basis of symmetric 2x2 matrices."""
    s = 1.0 / math.sqrt(2.0)
    return np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]], [[0.0, s], [s, 0.0]]])


def ellipticity_bounds(C: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of ``xi -> C xi xi`` on symmetric matrices (flattened over leading axes)."""
    B = _sym_basis()
    C = np.asarray(C).reshape(-1, 2, 2, 2, 2)
    Q = np.einsum("pai,naibj,qbj->npq", B, C, B)
    ev = np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, 1, 2)))
    return float(ev[:, 0].min()), float(ev[:, -1].max())


@dataclass(frozen=True)
class CoefficientField:
    """1-periodic isotropic elasticity tensor.

    ``isotropic_lame``: constant ``lam``, ``mu``.
    ``periodic_isotropic``: ``lam(y) = lam (1 + amplitude sin 2pi y1)`` and
    ``mu(y) = mu (1 + amplitude cos 2pi y2)``.
    """

    kind: str = "isotropic_lame"
    lam: float = 1.0
    mu: float = 1.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("isotropic_lame", "periodic_isotropic"):
            raise CoefficientError(f"unknown coefficient kind {self.kind!r}")
        if self.mu <= 0 or self.lam + self.mu <= 0:
            raise CoefficientError("Lame parameters violate ellipticity (need mu > 0, lam + mu > 0)")
        if self.kind == "periodic_isotropic" and not (0.0 <= self.amplitude < 1.0):
            raise CoefficientError("amplitude must lie in [0, 1)")

    @property
    def is_constant(self) -> bool:
        return self.kind == "isotropic_lame" or self.amplitude == 0.0

    def lame(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        shape = y.shape[:-1]
        if self.is_constant:
            return np.full(shape, self.lam), np.full(shape, self.mu)
        lam = self.lam * (1.0 + self.amplitude * np.sin(2 * np.pi * y[..., 0]))
        mu = self.mu * (1.0 + self.amplitude * np.cos(2 * np.pi * y[..., 1]))
        return lam, mu

    def tensor(self, y: np.ndarray) -> np.ndarray:
        lam, mu = self.lame(y)
        return isotropic_tensor(lam, mu)

    @property
    def bounds(self) -> tuple[float, float]:
        """``(mu0, mu1)`` over all y, from the preset parameters."""
        k = self.amplitude if not self.is_constant else 0.0
        lo_mu, hi_mu = self.mu * (1 - k), self.mu * (1 + k)
        lo_lam, hi_lam = self.lam * (1 - k), self.lam * (1 + k)
        if self.lam < 0:
            lo_lam, hi_lam = hi_lam, lo_lam
        mu0 = min(2 * lo_mu, 2 * (lo_mu + lo_lam))
        mu1 = max(2 * hi_mu, 2 * (hi_mu + hi_lam))
        return mu0, mu1

    @property
    def mu0(self) -> float:
        return self.bounds[0]

    @property
    def mu1(self) -> float:
        return self.bounds[1]

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam, "mu": self.mu, "amplitude": self.amplitude}
