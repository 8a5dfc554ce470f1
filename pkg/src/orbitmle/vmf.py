"""von Mises-Fisher distribution on the unit sphere S^2.

Density (w.r.t. surface measure): kappa / (4 pi sinh kappa) * exp(kappa u.mu).
Provides a numerically stable log-density, exact inverse-CDF sampling, the
mean resultant length coth(kappa) - 1/kappa, and the covariance bound
I + mu mu^T used by the variance-side consistency checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KAPPA_MAX = 1e6


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        if abs(float(np.linalg.norm(mu)) - 1.0) > 1e-12:
            raise ValueError("mu must be unit-norm to 1e-12")
        if not (0.0 < self.kappa <= KAPPA_MAX):
            raise ValueError(f"kappa must be in (0, {KAPPA_MAX}], got {self.kappa}")


def log_sinh(kappa: float) -> float:
    """log(sinh(kappa)), stable for large kappa."""
    # sinh(k) = e^k (1 - e^{-2k}) / 2
    return kappa + np.log(-np.expm1(-2.0 * kappa)) - np.log(2.0)


def vmf_log_normalizer(kappa: float) -> float:
    """log of kappa / (4 pi sinh kappa)."""
    return np.log(kappa) - np.log(4.0 * np.pi) - log_sinh(kappa)


def vmf_log_density(u: np.ndarray, p: VmfParams) -> float:
    u = np.asarray(u, dtype=float).reshape(3)
    return float(p.kappa * (u @ p.mu) + vmf_log_normalizer(p.kappa))


def vmf_mean_resultant(kappa: float) -> float:
    """coth(kappa) - 1/kappa, the norm of E[U]. Series below 1e-3."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if kappa < 1e-3:
        return kappa / 3.0 - kappa**3 / 45.0
    return 1.0 / np.tanh(kappa) - 1.0 / kappa


def vmf_covariance_bound(p: VmfParams) -> np.ndarray:
    """The matrix I + mu mu^T dominating Var(U) in Loewner order."""
    return np.eye(3) + np.outer(p.mu, p.mu)


def rotation_from_pole(mu: np.ndarray) -> np.ndarray:
    """Rotation taking the pole (0,0,1) to mu (Rodrigues about pole x mu)."""
    mu = np.asarray(mu, dtype=float).reshape(3)
    pole = np.array([0.0, 0.0, 1.0])
    c = float(mu @ pole)
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(pole, mu)
    s = np.linalg.norm(axis)
    axis = axis / s
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def _w_from_uniform(xi: np.ndarray, kappa: float) -> np.ndarray:
    """Inverse CDF of the polar cosine w = cos(angle to mu) on S^2."""
    return 1.0 + np.log(xi + (1.0 - xi) * np.exp(-2.0 * kappa)) / kappa


def vmf_sample(p: VmfParams, stream: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Exact VMF samples via the closed-form inverse CDF of the polar cosine.

    Returns shape (3,) when size is None, else (size, 3). Unit-norm to
    1e-12.
    """
    n = 1 if size is None else int(size)
    xi = stream.uniform(size=n)
    w = _w_from_uniform(xi, p.kappa)
    phi = stream.uniform(0.0, 2.0 * np.pi, size=n)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    samples = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), w])
    samples = samples @ rotation_from_pole(p.mu).T
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    return samples[0] if size is None else samples
