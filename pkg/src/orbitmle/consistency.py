"""Empirical verification of the strong-consistency conditions.

Covers: the normalizing sequence b_n, the mean-drift check (log-ratio
negativity over b_n), the variance summability check, the first-order
unit-vector approximation order checks, and the convergence sweep over
growing radar counts.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    POSITION_SCALE,
    SPEED_OF_LIGHT,
    VELOCITY_SCALE,
    ParameterBounds,
    RadarSite,
    Scenario,
    StateVector,
    derive_stream,
)
from .likelihood import (
    BallSupConfig,
    Channels,
    ALL_CHANNELS,
    log_density_batch,
    sup_log_density_ball_batch,
)
from .measurement import generate_sites, predict
from .solver import EstimationResult, SolverOptions, estimate
from .vmf import VmfParams, vmf_sample

# stream-id tags for the module's independent random substreams
_TAG_MC = 101        # assumption (iv)/(v) measurement draws
_TAG_SWEEP_SITE = 201
_TAG_SWEEP_SOLVE = 202


@dataclass(frozen=True)
class AssumptionCheckConfig:
    rho: float = 1e-3            # scaled ball radius
    delta: float | None = None   # scaled perturbation bound; defaults to rho
    num_mc_samples: int = 20_000
    probe_states: Sequence[StateVector] = ()
    num_probes_ball: int = 64
    channels: Channels = ALL_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "probe_states", tuple(self.probe_states))
        if self.delta is None:
            object.__setattr__(self, "delta", self.rho)
        if self.rho <= 0 or self.delta <= 0:
            raise ValueError("rho and delta must be positive")
        if self.num_mc_samples < 2:
            raise ValueError("num_mc_samples must be >= 2")


@dataclass(frozen=True)
class LogRatioStats:
    """Per-probe Monte Carlo summary of log g(X; theta, rho) - log g(X; theta0)."""

    per_site_mean: np.ndarray
    per_site_variance: np.ndarray
    cumulative_mean_over_bn: float
    b_n: float
    epsilon_margin: float
    std_error: float   # MC standard error of cumulative_mean_over_bn
    passed: bool


@dataclass(frozen=True)
class AssumptionVReport:
    per_site_variance: np.ndarray
    b: np.ndarray                          # cumulative b_i over site prefixes
    partial_sums_of_var_over_bi_sq: np.ndarray
    bounded: bool


@dataclass(frozen=True)
class LemmaSlopeReport:
    scales: np.ndarray
    err_direction: np.ndarray   # unit-vector first-order expansion residual
    err_product: np.ndarray     # inner-product first-order expansion residual
    slope_direction: float
    slope_product: float
    err_parallel: float         # collinear case, excluded from the fit
    passed: bool


@dataclass(frozen=True)
class Quantiles:
    q10: float
    q50: float
    q90: float


@dataclass(frozen=True)
class ConsistencyReport:
    radar_counts: tuple
    error_quantiles_position: tuple  # of Quantiles, per count
    error_quantiles_velocity: tuple
    trials: int
    failures: int
    failures_per_count: tuple


def compute_bn_terms(sites: Sequence[RadarSite], theta0: StateVector, delta: float,
                     delta_r: float | None = None,
                     delta_v: float | None = None) -> np.ndarray:
    """Per-site summands of b_n (before the overall 1/2 factor).

    `delta` is in scaled units; the raw perturbation bounds default to
    delta_r = POSITION_SCALE * delta and delta_v = VELOCITY_SCALE * delta
    and can be overridden. The cross-channel Doppler bound uses
    max(delta_r, delta_v). b_n is a bookkeeping sequence: only its growth
    matters.
    """
    dr = POSITION_SCALE * delta if delta_r is None else delta_r
    dv = VELOCITY_SCALE * delta if delta_v is None else delta_v
    dd = max(dr, dv)
    v0n = float(np.linalg.norm(theta0.v))
    terms = np.empty(len(sites))
    for i, site in enumerate(sites):
        z0n = float(np.linalg.norm(theta0.r - site.s))
        m_i = 2.0 * site.f_c / SPEED_OF_LIGHT
        terms[i] = (dr**2 / site.sigma_d**2
                    + 2.0 * site.kappa * dr / z0n
                    + (m_i * (z0n + v0n + 1.0) / z0n) ** 2 * dd**2 / site.sigma_f**2)
    return terms


def compute_bn(sites: Sequence[RadarSite], theta0: StateVector, delta: float,
               delta_r: float | None = None, delta_v: float | None = None) -> float:
    """The normalizing constant b_n for the given site list."""
    return 0.5 * math.fsum(compute_bn_terms(sites, theta0, delta, delta_r, delta_v))


def _draw_site_samples(site: RadarSite, theta0: StateVector,
                       m: int, stream: np.random.Generator):
    """m measurement tuples from one site under theta0, as column arrays."""
    pred = predict(theta0, site)
    D = pred.d_pred + stream.normal(0.0, site.sigma_d, size=m)
    U = vmf_sample(VmfParams(mu=pred.u_pred, kappa=site.kappa), stream, size=m)
    F = pred.f_pred + stream.normal(0.0, site.sigma_f, size=m)
    return D, U, F


def _validate_probes(cfg: AssumptionCheckConfig, scn: Scenario) -> None:
    if not cfg.probe_states:
        raise ValueError("config must supply at least one probe state")
    x0 = scn.truth.scaled()
    for k, probe in enumerate(cfg.probe_states):
        if not scn.bounds.contains(probe):
            raise ValueError(f"probe {k} is infeasible")
        if float(np.linalg.norm(probe.scaled() - x0)) < 2.0 * cfg.rho:
            raise ValueError(f"probe {k} is within 2*rho of the true state")


def _log_ratio_moments(scn: Scenario, cfg: AssumptionCheckConfig,
                       validate_probes: bool = True):
    """Per-(probe, site) mean/variance of the log ratio, common random numbers.

    Identical sites share one Monte Carlo evaluation (their log-ratio
    distributions coincide), which makes large replicated-site
    configurations cheap.
    """
    if validate_probes:
        _validate_probes(cfg, scn)
    ball = BallSupConfig(rho=cfg.rho, num_probes=cfg.num_probes_ball)
    n_sites = len(scn.sites)
    n_probes = len(cfg.probe_states)
    means = np.empty((n_probes, n_sites))
    variances = np.empty((n_probes, n_sites))
    cache: dict[tuple, int] = {}
    for i, site in enumerate(scn.sites):
        key = site.noise_key()
        if key in cache:
            j = cache[key]
            means[:, i] = means[:, j]
            variances[:, i] = variances[:, j]
            continue
        cache[key] = i
        stream = derive_stream(scn.seed, _TAG_MC, i)
        D, U, F = _draw_site_samples(site, scn.truth, cfg.num_mc_samples, stream)
        log_g0 = log_density_batch(D, U, F, site, scn.truth, cfg.channels)
        for p, probe in enumerate(cfg.probe_states):
            sup_log = sup_log_density_ball_batch(D, U, F, site, probe, ball,
                                                 scn.bounds, cfg.channels)
            ratio = sup_log - log_g0
            means[p, i] = float(np.mean(ratio))
            variances[p, i] = float(np.var(ratio, ddof=1))
    return means, variances


def check_assumption_iv(scn: Scenario, cfg: AssumptionCheckConfig) -> list[LogRatioStats]:
    """Mean-drift check: (1/b_n) sum_i E[log ratio] must be negative with
    at least a 3-standard-error margin, for every probe state."""
    means, variances = _log_ratio_moments(scn, cfg)
    b_n = compute_bn(scn.sites, scn.truth, cfg.delta)
    out = []
    for p in range(means.shape[0]):
        cum = math.fsum(means[p]) / b_n
        se = math.sqrt(math.fsum(variances[p] / cfg.num_mc_samples)) / b_n
        margin = -cum
        out.append(LogRatioStats(
            per_site_mean=means[p].copy(), per_site_variance=variances[p].copy(),
            cumulative_mean_over_bn=cum, b_n=b_n, epsilon_margin=margin,
            std_error=se, passed=margin > 3.0 * se))
    return out


def check_identifiability(scn: Scenario, cfg: AssumptionCheckConfig) -> bool:
    """Empirical identifiability: with the ball collapsed (rho -> 0), every
    per-site mean log-ratio at every probe != theta0 is <= 0 within MC error."""
    tiny = AssumptionCheckConfig(
        rho=1e-12, delta=cfg.delta, num_mc_samples=cfg.num_mc_samples,
        probe_states=cfg.probe_states, num_probes_ball=8, channels=cfg.channels)
    means, variances = _log_ratio_moments(scn, tiny, validate_probes=False)
    se = np.sqrt(variances / tiny.num_mc_samples)
    return bool(np.all(means <= 3.0 * se))


def delta_probe(scn: Scenario, delta: float) -> StateVector:
    """Truth displaced by the raw position bound delta_r = L*delta along
    the line of sight of site 0 (so the range shift equals delta_r)."""
    z0 = scn.truth.r - scn.sites[0].s
    direction = z0 / np.linalg.norm(z0)
    return StateVector(r=scn.truth.r + POSITION_SCALE * delta * direction,
                       v=scn.truth.v)


def check_assumption_v(scn: Scenario, cfg: AssumptionCheckConfig,
                       probe: StateVector | None = None) -> AssumptionVReport:
    """Variance summability: partial sums of var_i / b_i^2 with b_i built
    over site prefixes must stay bounded (the normalizer-growth lemma).

    The closed-form variance bounds behind b_n hold for theta within the
    delta-perturbation of theta0, so the default probe sits at that
    distance rather than among the far probes of the mean-drift check.
    """
    probe = probe if probe is not None else delta_probe(scn, cfg.delta)
    single = AssumptionCheckConfig(
        rho=cfg.rho, delta=cfg.delta, num_mc_samples=cfg.num_mc_samples,
        probe_states=(probe,), num_probes_ball=cfg.num_probes_ball,
        channels=cfg.channels)
    _, variances = _log_ratio_moments(scn, single, validate_probes=False)
    var = variances[0]
    terms = compute_bn_terms(scn.sites, scn.truth, cfg.delta)
    b = 0.5 * np.cumsum(terms)
    contrib = var / b**2
    partial = np.cumsum(contrib)
    # sample-variance MC error, Gaussian-scale approximation
    se_sum = 3.0 * math.fsum(v * math.sqrt(2.0 / (cfg.num_mc_samples - 1)) / bb**2
                             for v, bb in zip(var, b))
    n = len(var)
    half = n // 2
    increments_shrink = n < 4 or float(np.mean(contrib[half:])) < float(
        np.mean(contrib[:half]))
    bound = contrib[0] + 1.0 / b[0] + se_sum
    bounded = bool(increments_shrink and partial[-1] <= bound)
    return AssumptionVReport(per_site_variance=var, b=b,
                             partial_sums_of_var_over_bi_sq=partial,
                             bounded=bounded)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def check_lemma_approximations(y: np.ndarray, v0: np.ndarray,
                               delta_scales: Sequence[float],
                               seed: int = 12345) -> LemmaSlopeReport:
    """Approximation-order check for the first-order unit-vector expansions.

    For perpendicular perturbations the residuals of both expansions must
    be second order: log-log slope >= 1.9 over the given scales. The
    collinear case (where the direction does not move at all) is excluded
    from the fit and reported separately.
    """
    y = np.asarray(y, dtype=float).reshape(3)
    v0 = np.asarray(v0, dtype=float).reshape(3)
    yn = float(np.linalg.norm(y))
    if yn <= 0:
        raise ValueError("y must be nonzero")
    scales = np.asarray(delta_scales, dtype=float)
    if np.any(np.diff(scales) >= 0) or scales.max() > 0.1 * yn:
        raise ValueError("delta_scales must be decreasing with max <= 0.1*||y||")
    stream = derive_stream(seed, 0)
    d1 = stream.normal(size=3)
    d1 = _unit(d1 - (d1 @ y) / yn**2 * y)  # perpendicular to y
    d2 = _unit(stream.normal(size=3))

    err2 = np.empty(len(scales))
    err3 = np.empty(len(scales))
    for k, s in enumerate(scales):
        delta1 = s * d1
        delta2 = (s / yn) * max(np.linalg.norm(v0), 1.0) * d2
        x = y + delta1
        err2[k] = np.linalg.norm(_unit(x) - y / yn - delta1 / yn)
        u = v0 + delta2
        lhs = _unit(x) @ u - (y / yn) @ v0
        rhs = (y @ delta2 + delta1 @ delta2 + v0 @ delta1) / yn
        err3[k] = abs(lhs - rhs)

    slope2 = float(np.polyfit(np.log(scales), np.log(np.maximum(err2, 1e-300)), 1)[0])
    slope3 = float(np.polyfit(np.log(scales), np.log(np.maximum(err3, 1e-300)), 1)[0])
    x_par = y + scales[0] * _unit(y)
    err2_parallel = float(np.linalg.norm(_unit(x_par) - y / yn - scales[0] * _unit(y) / yn))
    return LemmaSlopeReport(scales=scales, err_direction=err2, err_product=err3,
                            slope_direction=slope2, slope_product=slope3,
                            err_parallel=err2_parallel,
                            passed=slope2 >= 1.9 and slope3 >= 1.9)


def _sweep_trial(template: Scenario, n_radars: int, trial: int,
                 opts: SolverOptions) -> tuple[float, float, bool]:
    proto = template.sites[0]
    site_stream = derive_stream(template.seed, _TAG_SWEEP_SITE, n_radars, trial)
    sites = generate_sites(template.truth.r, n_radars, site_stream,
                           sigma_d=proto.sigma_d, kappa=proto.kappa,
                           sigma_f=proto.sigma_f, f_c=proto.f_c)
    scn_seed = int(np.random.SeedSequence(
        [template.seed, _TAG_MC, n_radars, trial]).generate_state(1, np.uint64)[0])
    scn = Scenario(truth=template.truth, sites=sites, bounds=template.bounds,
                   seed=scn_seed)
    from .measurement import simulate_scenario
    meas = simulate_scenario(scn)
    solve_stream = derive_stream(template.seed, _TAG_SWEEP_SOLVE, n_radars, trial)
    res = estimate(sites, meas, template.bounds, opts, solve_stream)
    pos_err = float(np.linalg.norm(res.estimate.r - template.truth.r))
    vel_err = float(np.linalg.norm(res.estimate.v - template.truth.v))
    return pos_err, vel_err, res.converged


def run_consistency_sweep(template: Scenario, radar_counts: Sequence[int],
                          trials: int, opts: SolverOptions | None = None,
                          n_jobs: int = 1) -> ConsistencyReport:
    """Solve `trials` fresh scenarios at each radar count and report error
    quantiles. Non-converged solves are excluded and counted as failures;
    more than 10% failures at any count aborts the sweep."""
    counts = tuple(int(n) for n in radar_counts)
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("radar_counts must be strictly increasing")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    opts = opts if opts is not None else SolverOptions()

    jobs = [(n, t) for n in counts for t in range(trials)]
    if n_jobs != 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=(n_jobs if n_jobs > 0 else -1), prefer="processes")(
            delayed(_sweep_trial)(template, n, t, opts) for n, t in jobs)
    else:
        results = [_sweep_trial(template, n, t, opts) for n, t in jobs]

    pos_q, vel_q, fails = [], [], []
    for ci, n in enumerate(counts):
        chunk = results[ci * trials:(ci + 1) * trials]
        ok = [(p, v) for p, v, conv in chunk if conv]
        n_fail = trials - len(ok)
        fails.append(n_fail)
        if n_fail > 0.10 * trials:
            raise RuntimeError(f"sweep error: {n_fail}/{trials} failures at N={n}")
        pos = np.sort([p for p, _ in ok])
        vel = np.sort([v for _, v in ok])
        pos_q.append(Quantiles(*(float(np.quantile(pos, q)) for q in (0.1, 0.5, 0.9))))
        vel_q.append(Quantiles(*(float(np.quantile(vel, q)) for q in (0.1, 0.5, 0.9))))
    return ConsistencyReport(radar_counts=counts,
                             error_quantiles_position=tuple(pos_q),
                             error_quantiles_velocity=tuple(vel_q),
                             trials=trials, failures=sum(fails),
                             failures_per_count=tuple(fails))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_consistency_csv(path: str, report: ConsistencyReport) -> None:
    buf = io.StringIO()
    buf.write("N,trials,failures,pos_q10,pos_q50,pos_q90,vel_q10,vel_q50,vel_q90\n")
    for i, n in enumerate(report.radar_counts):
        pq = report.error_quantiles_position[i]
        vq = report.error_quantiles_velocity[i]
        row = [str(n), str(report.trials), str(report.failures_per_count[i]),
               _fmt(pq.q10), _fmt(pq.q50), _fmt(pq.q90),
               _fmt(vq.q10), _fmt(vq.q50), _fmt(vq.q90)]
        buf.write(",".join(row) + "\n")
    _atomic_write(path, buf.getvalue())


def write_assumption_iv_csv(path: str, stats: Sequence[LogRatioStats]) -> None:
    buf = io.StringIO()
    buf.write("probe_id,n_sites,b_n,cum_mean_over_bn,std_err,pass\n")
    for p, st in enumerate(stats):
        row = [str(p), str(len(st.per_site_mean)), _fmt(st.b_n),
               _fmt(st.cumulative_mean_over_bn), _fmt(st.std_error),
               "1" if st.passed else "0"]
        buf.write(",".join(row) + "\n")
    _atomic_write(path, buf.getvalue())


def default_far_probes(scn: Scenario, count: int, rho: float,
                       seed_tag: int = 77) -> list[StateVector]:
    """Feasible probe states at scaled distance in [max(0.05, 2 rho), 0.5]
    from the truth, deterministically drawn from the scenario seed."""
    from .core import project_to_feasible
    stream = derive_stream(scn.seed, seed_tag)
    x0 = scn.truth.scaled()
    lo = max(0.05, 2.0 * rho)
    probes = []
    while len(probes) < count:
        direction = _unit(stream.normal(size=6))
        dist = stream.uniform(lo, 0.5)
        cand = project_to_feasible(StateVector.from_scaled(x0 + dist * direction),
                                   scn.bounds)
        if np.linalg.norm(cand.scaled() - x0) >= 2.0 * rho:
            probes.append(cand)
    return probes
