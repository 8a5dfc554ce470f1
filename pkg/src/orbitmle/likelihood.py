"""Negative log-likelihood objective, analytic gradient, per-tuple log
densities, and the ball-supremum lower approximation.

The objective is the sum of three channel terms per radar:

    range:   (||r - s|| - d)^2 / (2 sigma_d^2)
    angle:   -kappa * u . (r - s)/||r - s||
    doppler: ((2 f_c / c) u_pred . v - f)^2 / (2 sigma_f^2)

Ball/perturbation logic lives in the scaled parameter space (positions
over 1e6 m, velocities over 1e3 m/s) so radii are unit-free scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm, qmc

from .core import (
    SPEED_OF_LIGHT,
    GeometryError,
    MeasurementTuple,
    ParameterBounds,
    RadarSite,
    StateVector,
    project_to_feasible,
)
from .measurement import MIN_SITE_DISTANCE
from .vmf import vmf_log_normalizer

GAUSS_LOG_NORM = -0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Channels:
    """Channel enable flags for weight tests; all on by default."""

    range_on: bool = True
    angle_on: bool = True
    doppler_on: bool = True


ALL_CHANNELS = Channels()


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    range_term: float
    angle_term: float
    doppler_term: float


@dataclass(frozen=True)
class BallSupConfig:
    """Probe set for the ball-supremum approximation."""

    rho: float
    num_probes: int = 64

    def __post_init__(self):
        if not (0.0 < self.rho <= 0.1):
            raise ValueError(f"rho must be in (0, 0.1] scaled units, got {self.rho}")
        if self.num_probes < 8:
            raise ValueError("num_probes must be >= 8")


@dataclass(frozen=True)
class SiteData:
    """Column-packed (site, measurement) arrays for vectorized evaluation."""

    S: np.ndarray        # (N, 3)
    sigma_d: np.ndarray  # (N,)
    kappa: np.ndarray    # (N,)
    sigma_f: np.ndarray  # (N,)
    m_dop: np.ndarray    # (N,) 2 f_c / c
    d: np.ndarray        # (N,)
    U: np.ndarray        # (N, 3)
    f: np.ndarray        # (N,)


def pack(sites: Sequence[RadarSite], meas: Sequence[MeasurementTuple]) -> SiteData:
    if len(sites) != len(meas) or not sites:
        raise ValueError("sites and measurements must be non-empty and equal length")
    return SiteData(
        S=np.array([s.s for s in sites]),
        sigma_d=np.array([s.sigma_d for s in sites]),
        kappa=np.array([s.kappa for s in sites]),
        sigma_f=np.array([s.sigma_f for s in sites]),
        m_dop=np.array([2.0 * s.f_c / SPEED_OF_LIGHT for s in sites]),
        d=np.array([m.d for m in meas]),
        U=np.array([m.u for m in meas]),
        f=np.array([m.f for m in meas]),
    )


def _geometry(theta: StateVector, data: SiteData):
    Z = theta.r[None, :] - data.S
    dn = np.linalg.norm(Z, axis=1)
    if np.any(dn < MIN_SITE_DISTANCE):
        raise GeometryError("singular geometry: state within 1 km of a site")
    ZH = Z / dn[:, None]
    return Z, dn, ZH


def _term_arrays(theta: StateVector, data: SiteData,
                 channels: Channels = ALL_CHANNELS):
    _, dn, ZH = _geometry(theta, data)
    zero = np.zeros_like(dn)
    rng = ((dn - data.d) ** 2 / (2.0 * data.sigma_d**2)) if channels.range_on else zero
    ang = (-data.kappa * np.einsum("ij,ij->i", data.U, ZH)) if channels.angle_on else zero
    resid = data.m_dop * (ZH @ theta.v) - data.f
    dop = (resid**2 / (2.0 * data.sigma_f**2)) if channels.doppler_on else zero
    return rng, ang, dop


def objective_packed(theta: StateVector, data: SiteData,
                     channels: Channels = ALL_CHANNELS) -> ObjectiveBreakdown:
    rng, ang, dop = _term_arrays(theta, data, channels)
    # fsum: exact accumulation, permutation invariant across site orderings
    range_term = math.fsum(rng)
    angle_term = math.fsum(ang)
    doppler_term = math.fsum(dop)
    total = range_term + angle_term + doppler_term
    return ObjectiveBreakdown(total=total, range_term=range_term,
                              angle_term=angle_term, doppler_term=doppler_term)


def objective(theta: StateVector, sites: Sequence[RadarSite],
              meas: Sequence[MeasurementTuple],
              channels: Channels = ALL_CHANNELS) -> ObjectiveBreakdown:
    return objective_packed(theta, pack(sites, meas), channels)


def gradient_packed(theta: StateVector, data: SiteData,
                    channels: Channels = ALL_CHANNELS) -> np.ndarray:
    """Analytic gradient of objective total w.r.t. (r, v), shape (6,)."""
    _, dn, ZH = _geometry(theta, data)
    g_r = np.zeros(3)
    g_v = np.zeros(3)
    if channels.range_on:
        g_r += ((dn - data.d) / data.sigma_d**2) @ ZH
    # tangential projector applied through (I - zh zh^T) x = x - (zh.x) zh
    if channels.angle_on:
        proj_u = data.U - np.einsum("ij,ij->i", data.U, ZH)[:, None] * ZH
        g_r += -(data.kappa / dn) @ proj_u
    if channels.doppler_on:
        resid = data.m_dop * (ZH @ theta.v) - data.f
        w = resid * data.m_dop / data.sigma_f**2
        g_v += w @ ZH
        proj_v = theta.v[None, :] - (ZH @ theta.v)[:, None] * ZH
        g_r += (w / dn) @ proj_v
    return np.concatenate([g_r, g_v])


def gradient(theta: StateVector, sites: Sequence[RadarSite],
             meas: Sequence[MeasurementTuple],
             channels: Channels = ALL_CHANNELS) -> np.ndarray:
    return gradient_packed(theta, pack(sites, meas), channels)


def log_density_tuple(x: MeasurementTuple, site: RadarSite, theta: StateVector,
                      channels: Channels = ALL_CHANNELS) -> float:
    """Log density of one measurement tuple under theta (normalizers included)."""
    data = pack([site], [x])
    return float(log_density_batch(data.d, data.U, data.f, site, theta, channels)[0])


def log_density_batch(D: np.ndarray, U: np.ndarray, F: np.ndarray,
                      site: RadarSite, theta: StateVector,
                      channels: Channels = ALL_CHANNELS) -> np.ndarray:
    """Vectorized log g(x; theta) over a batch of tuples from one site."""
    z = theta.r - site.s
    dn = float(np.linalg.norm(z))
    if dn < MIN_SITE_DISTANCE:
        raise GeometryError("singular geometry: state within 1 km of a site")
    zh = z / dn
    out = np.zeros(np.shape(D))
    if channels.range_on:
        out += GAUSS_LOG_NORM - np.log(site.sigma_d) \
            - (D - dn) ** 2 / (2.0 * site.sigma_d**2)
    if channels.angle_on:
        out += site.kappa * (U @ zh) + vmf_log_normalizer(site.kappa)
    if channels.doppler_on:
        f_pred = 2.0 * site.f_c / SPEED_OF_LIGHT * (zh @ theta.v)
        out += GAUSS_LOG_NORM - np.log(site.sigma_f) \
            - (F - f_pred) ** 2 / (2.0 * site.sigma_f**2)
    return out


def ball_probe_states(theta: StateVector, cfg: BallSupConfig,
                      bounds: ParameterBounds) -> list[StateVector]:
    """Center plus num_probes low-discrepancy points in the scaled rho-ball.

    Uses an unscrambled Halton sequence, so the probe set for k probes is a
    prefix of the set for k' > k (monotone refinement). Every probe is
    projected to feasibility.
    """
    halton = qmc.Halton(d=7, scramble=False)
    halton.fast_forward(1)  # skip the all-zeros point
    pts = halton.random(cfg.num_probes)
    dirs = norm.ppf(pts[:, :6])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = cfg.rho * pts[:, 6] ** (1.0 / 6.0)
    x0 = theta.scaled()
    states = [theta]
    for direction, radius in zip(dirs, radii):
        cand = StateVector.from_scaled(x0 + radius * direction)
        states.append(project_to_feasible(cand, bounds))
    return states


def sup_log_density_ball(x: MeasurementTuple, site: RadarSite,
                         theta: StateVector, cfg: BallSupConfig,
                         bounds: ParameterBounds | None = None,
                         channels: Channels = ALL_CHANNELS) -> float:
    """Deterministic lower approximation of sup over the scaled rho-ball
    of log g(x; theta'). The center is always included."""
    bounds = bounds if bounds is not None else ParameterBounds()
    best = -np.inf
    for state in ball_probe_states(theta, cfg, bounds):
        best = max(best, log_density_tuple(x, site, state, channels))
    return best


def log_ratio_term(x: MeasurementTuple, site: RadarSite, theta: StateVector,
                   theta0: StateVector, cfg: BallSupConfig,
                   bounds: ParameterBounds | None = None,
                   channels: Channels = ALL_CHANNELS) -> float:
    """log g(x; theta, rho) - log g(x; theta0) with the ball-sup upper side."""
    return (sup_log_density_ball(x, site, theta, cfg, bounds, channels)
            - log_density_tuple(x, site, theta0, channels))


def sup_log_density_ball_batch(D: np.ndarray, U: np.ndarray, F: np.ndarray,
                               site: RadarSite, theta: StateVector,
                               cfg: BallSupConfig, bounds: ParameterBounds,
                               channels: Channels = ALL_CHANNELS) -> np.ndarray:
    """Vectorized ball-sup log density over a batch of tuples from one site."""
    states = ball_probe_states(theta, cfg, bounds)
    best = log_density_batch(D, U, F, site, states[0], channels)
    for state in states[1:]:
        np.maximum(best, log_density_batch(D, U, F, site, state, channels), out=best)
    return best
