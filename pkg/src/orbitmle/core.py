"""Domain records, physical constants, feasibility projection, RNG streams.

All quantities are strict SI: meters, meters/second, hertz. The scaled
parameter space (positions / POSITION_SCALE, velocities / VELOCITY_SCALE)
makes the 6-dimensional state dimensionless so that ball radii, descent
steps, and tolerances are single unit-free numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s
EARTH_RADIUS = 6.371e6  # m

# Nondimensionalization of the (r, v) state.
POSITION_SCALE = 1.0e6  # m
VELOCITY_SCALE = 1.0e3  # m/s


class GeometryError(ValueError):
    """State too close to (or exactly at) a radar site, or r = 0."""


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StateVector:
    """Position/velocity state in an Earth-centered Cartesian frame."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", _vec3(self.r))
        object.__setattr__(self, "v", _vec3(self.v))
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))):
            raise ValueError("state components must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])

    @staticmethod
    def from_array(x: np.ndarray) -> "StateVector":
        x = np.asarray(x, dtype=float).reshape(6)
        return StateVector(r=x[:3], v=x[3:])

    def scaled(self) -> np.ndarray:
        """Dimensionless 6-vector (r / L, v / V)."""
        return np.concatenate([self.r / POSITION_SCALE, self.v / VELOCITY_SCALE])

    @staticmethod
    def from_scaled(x: np.ndarray) -> "StateVector":
        x = np.asarray(x, dtype=float).reshape(6)
        return StateVector(r=x[:3] * POSITION_SCALE, v=x[3:] * VELOCITY_SCALE)


@dataclass(frozen=True)
class ParameterBounds:
    """Compact feasible set: r_min <= ||r|| <= r_max, ||v|| <= v_max."""

    r_min: float = 6.471e6
    r_max: float = 5.0e7
    v_max: float = 1.5e4

    def __post_init__(self):
        if not (EARTH_RADIUS <= self.r_min < self.r_max):
            raise ValueError(f"need {EARTH_RADIUS} <= r_min < r_max, "
                             f"got r_min={self.r_min}, r_max={self.r_max}")
        if not (0.0 < self.v_max <= SPEED_OF_LIGHT):
            raise ValueError(f"need 0 < v_max <= c, got v_max={self.v_max}")

    def contains(self, theta: StateVector, rel_tol: float = 1e-12) -> bool:
        """Feasibility test with a small relative slack: radial clamping
        can land a few ulps outside the exact interval."""
        rn = float(np.linalg.norm(theta.r))
        vn = float(np.linalg.norm(theta.v))
        return (self.r_min * (1.0 - rel_tol) <= rn <= self.r_max * (1.0 + rel_tol)
                and vn <= self.v_max * (1.0 + rel_tol))


@dataclass(frozen=True)
class RadarSite:
    """One monostatic radar: position plus per-channel noise model."""

    s: np.ndarray
    sigma_d: float  # range noise std, m
    kappa: float    # angle concentration, dimensionless
    sigma_f: float  # Doppler noise std, Hz
    f_c: float      # carrier frequency, Hz

    def __post_init__(self):
        object.__setattr__(self, "s", _vec3(self.s))
        for name in ("sigma_d", "kappa", "sigma_f", "f_c"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be strictly positive, got {val}")

    def noise_key(self) -> tuple:
        """Hashable identity of the full site configuration."""
        return (tuple(self.s), self.sigma_d, self.kappa, self.sigma_f, self.f_c)


@dataclass(frozen=True)
class MeasurementTuple:
    """One radar's observation: range d, direction u, Doppler shift f."""

    d: float
    u: np.ndarray
    f: float

    def __post_init__(self):
        object.__setattr__(self, "u", _vec3(self.u))
        if abs(float(np.linalg.norm(self.u)) - 1.0) > 1e-12:
            raise ValueError("direction u must be unit-norm to 1e-12")


@dataclass(frozen=True)
class Scenario:
    """Ground truth plus radar network plus reproducibility seed."""

    truth: StateVector
    sites: Sequence[RadarSite]
    bounds: ParameterBounds = field(default_factory=ParameterBounds)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise ValueError("scenario needs at least one site")
        for i, site in enumerate(self.sites):
            if np.linalg.norm(self.truth.r - site.s) < 1e3:
                raise GeometryError(f"truth within 1 km of site {i}")


def project_to_feasible(theta: StateVector, bounds: ParameterBounds) -> StateVector:
    """Clamp the state onto the compact feasible set.

    Position is radially rescaled (direction preserved) onto
    [r_min, r_max]; velocity is rescaled onto the v_max ball. Idempotent,
    and the identity on already-feasible states.
    """
    rn = float(np.linalg.norm(theta.r))
    if rn == 0.0:
        raise GeometryError("degenerate position: ||r|| = 0 has no direction to preserve")
    # same relative slack as ParameterBounds.contains, so projection is
    # exactly idempotent despite norm rounding
    rel = 1e-12
    r = theta.r
    if rn < bounds.r_min * (1.0 - rel):
        r = theta.r * (bounds.r_min / rn)
    elif rn > bounds.r_max * (1.0 + rel):
        r = theta.r * (bounds.r_max / rn)
    vn = float(np.linalg.norm(theta.v))
    v = theta.v if vn <= bounds.v_max * (1.0 + rel) else theta.v * (bounds.v_max / vn)
    if r is theta.r and v is theta.v:
        return theta
    return StateVector(r=r, v=v)


def derive_stream(master_seed: int, stream_id: int, *more_ids: int) -> np.random.Generator:
    """Deterministic, independent substream keyed by (master_seed, stream_id, ...).

    The same key always yields the identical stream, regardless of thread
    count or call order; distinct keys give statistically independent
    streams. Extra ids allow multi-level keying (e.g. per radar-count,
    per trial).
    """
    key = [int(master_seed), int(stream_id), *(int(i) for i in more_ids)]
    return np.random.default_rng(np.random.SeedSequence(key))
