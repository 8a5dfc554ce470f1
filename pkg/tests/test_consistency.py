import math
import os

import numpy as np
import pytest

from orbitmle.core import (
    ParameterBounds,
    RadarSite,
    Scenario,
    StateVector,
    derive_stream,
)
from orbitmle.consistency import (
    AssumptionCheckConfig,
    check_assumption_iv,
    check_assumption_v,
    check_identifiability,
    check_lemma_approximations,
    compute_bn,
    compute_bn_terms,
    default_far_probes,
    delta_probe,
    run_consistency_sweep,
    write_assumption_iv_csv,
    write_consistency_csv,
)
from orbitmle.likelihood import Channels
from orbitmle.measurement import generate_sites
from orbitmle.solver import SolverOptions

TRUTH = StateVector(r=[7.0e6, 1.0e5, 2.0e5], v=[1.0e3, 7.4e3, 500.0])
BOUNDS = ParameterBounds()


def make_scenario(n_sites, seed=0, **noise):
    params = dict(sigma_d=10.0, kappa=1e4, sigma_f=1.0, f_c=1e9)
    params.update(noise)
    sites = generate_sites(TRUTH.r, n_sites, derive_stream(seed, 0), **params)
    return Scenario(truth=TRUTH, sites=sites, bounds=BOUNDS, seed=seed)


class TestComputeBn:
    # single radar, sigma_d=10, kappa=4, ||z0||=1e6, f_c=1e9, sigma_f=100,
    # ||v0||=7.5e3, raw bounds delta_r=delta_v=1; frozen high-precision value
    B1_ORACLE = 7.2628092709021026e-3

    def _single(self):
        theta0 = StateVector(r=[7.371e6, 0.0, 0.0], v=[7.5e3, 0.0, 0.0])
        site = RadarSite(s=[6.371e6, 0.0, 0.0], sigma_d=10.0, kappa=4.0,
                         sigma_f=100.0, f_c=1e9)
        return theta0, site

    def test_hand_value(self):
        theta0, site = self._single()
        got = compute_bn([site], theta0, delta=1e-6, delta_r=1.0, delta_v=1.0)
        assert got == pytest.approx(self.B1_ORACLE, rel=1e-12)

    def test_scaled_delta_default(self):
        # delta in scaled units: delta=1e-6 means delta_r = 1 m, delta_v = 1e-3 m/s
        theta0, site = self._single()
        explicit = compute_bn([site], theta0, delta=1e-6,
                              delta_r=1.0, delta_v=1e-3)
        assert compute_bn([site], theta0, delta=1e-6) == explicit

    def test_vanishes_as_delta_to_zero(self):
        theta0, site = self._single()
        assert compute_bn([site], theta0, delta=1e-30) < 1e-20

    def test_doubling_sites_doubles_bn(self):
        theta0, site = self._single()
        one = compute_bn([site], theta0, delta=1e-3)
        two = compute_bn([site, site], theta0, delta=1e-3)
        assert two == pytest.approx(2.0 * one, rel=1e-15)

    def test_terms_positive_and_cumulative_monotone(self):
        scn = make_scenario(16)
        terms = compute_bn_terms(scn.sites, scn.truth, delta=1e-3)
        assert np.all(terms > 0.0)
        assert np.all(np.diff(np.cumsum(terms)) > 0.0)


class TestMeanDrift:
    def _cfg(self, scn, n_probes=4, samples=2000, rho=1e-3):
        probes = default_far_probes(scn, n_probes, rho)
        return AssumptionCheckConfig(rho=rho, delta=rho,
                                     num_mc_samples=samples,
                                     probe_states=probes)

    def test_far_probes_all_pass(self):
        scn = make_scenario(8, seed=2)
        stats = check_assumption_iv(scn, self._cfg(scn))
        assert all(st.passed for st in stats)
        assert all(st.cumulative_mean_over_bn < 0.0 for st in stats)

    def test_deterministic_rerun(self):
        scn = make_scenario(4, seed=3)
        cfg = self._cfg(scn, n_probes=2, samples=500)
        a = check_assumption_iv(scn, cfg)
        b = check_assumption_iv(scn, cfg)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.per_site_mean, sb.per_site_mean)
            assert sa.cumulative_mean_over_bn == sb.cumulative_mean_over_bn

    def test_range_only_mean_matches_closed_form(self):
        # range-only log ratio with a collapsed ball at a probe whose
        # range shift is exactly Delta: mean = -Delta^2 / (2 sigma_d^2)
        theta0 = StateVector(r=[7.371e6, 0.0, 0.0], v=[0.0, 0.0, 0.0])
        site = RadarSite(s=[6.371e6, 0.0, 0.0], sigma_d=10.0, kappa=1.0,
                         sigma_f=1.0, f_c=1e9)
        scn = Scenario(truth=theta0, sites=[site], bounds=BOUNDS, seed=11)
        delta_raw = 40.0  # meters along the line of sight
        probe = delta_probe(scn, delta_raw / 1e6)
        cfg = AssumptionCheckConfig(
            rho=1e-12, delta=1e-3, num_mc_samples=40_000,
            probe_states=(probe,), num_probes_ball=8,
            channels=Channels(range_on=True, angle_on=False, doppler_on=False))
        stats = check_assumption_iv(scn, cfg)
        expected = -delta_raw**2 / (2.0 * site.sigma_d**2)
        mean = stats[0].per_site_mean[0]
        se = math.sqrt(stats[0].per_site_variance[0] / cfg.num_mc_samples)
        assert abs(mean - expected) <= 4.0 * se

    def test_probe_too_close_rejected(self):
        scn = make_scenario(2, seed=4)
        cfg = AssumptionCheckConfig(rho=1e-3, num_mc_samples=100,
                                    probe_states=(scn.truth,))
        with pytest.raises(ValueError):
            check_assumption_iv(scn, cfg)

    def test_identifiability(self):
        scn = make_scenario(4, seed=5)
        cfg = self._cfg(scn, n_probes=3, samples=2000)
        assert check_identifiability(scn, cfg)


class TestVarianceSummability:
    def test_replicated_sites_bounded(self):
        scn = make_scenario(1, seed=6)
        scn = Scenario(truth=scn.truth, sites=list(scn.sites) * 128,
                       bounds=BOUNDS, seed=6)
        cfg = AssumptionCheckConfig(rho=1e-3, delta=1e-3,
                                    num_mc_samples=20_000)
        rep = check_assumption_v(scn, cfg)
        assert rep.bounded
        # identical sites: var_i constant, b_i linear in i, so the partial
        # sums must track var_1/b_1^2 * sum 1/i^2 (bounded by pi^2/6)
        limit = rep.partial_sums_of_var_over_bi_sq[0] * math.pi**2 / 6.0
        assert rep.partial_sums_of_var_over_bi_sq[-1] <= limit * (1 + 1e-9)

    def test_replicated_partial_sums_match_inverse_squares(self):
        scn = make_scenario(1, seed=7)
        scn = Scenario(truth=scn.truth, sites=list(scn.sites) * 64,
                       bounds=BOUNDS, seed=7)
        cfg = AssumptionCheckConfig(rho=1e-3, delta=1e-3, num_mc_samples=5000)
        rep = check_assumption_v(scn, cfg)
        n = len(rep.b)
        expected = rep.partial_sums_of_var_over_bi_sq[0] * np.cumsum(
            1.0 / np.arange(1, n + 1) ** 2)
        np.testing.assert_allclose(rep.partial_sums_of_var_over_bi_sq,
                                   expected, rtol=1e-9)

    def test_range_only_variance_closed_form(self):
        # range channel, collapsed ball, probe at raw distance delta_r along
        # the line of sight: log ratio is Gaussian with variance delta_r^2/sigma_d^2
        theta0 = StateVector(r=[7.371e6, 0.0, 0.0], v=[0.0, 0.0, 0.0])
        site = RadarSite(s=[6.371e6, 0.0, 0.0], sigma_d=10.0, kappa=1.0,
                         sigma_f=1.0, f_c=1e9)
        scn = Scenario(truth=theta0, sites=[site], bounds=BOUNDS, seed=12)
        delta = 1e-3  # scaled; raw delta_r = 1000 m
        cfg = AssumptionCheckConfig(
            rho=1e-12, delta=delta, num_mc_samples=200_000, num_probes_ball=8,
            channels=Channels(range_on=True, angle_on=False, doppler_on=False))
        rep = check_assumption_v(scn, cfg)
        expected = (1e6 * delta) ** 2 / site.sigma_d**2
        assert rep.per_site_variance[0] == pytest.approx(expected, rel=0.05)


class TestLemmaSlopes:
    Y = np.array([1.0e6, 2.0e5, -3.0e5])
    V0 = np.array([1.0e3, 7.4e3, 500.0])

    def test_slopes_second_order(self):
        yn = np.linalg.norm(self.Y)
        rep = check_lemma_approximations(
            self.Y, self.V0, [1e-2 * yn, 5e-3 * yn, 2.5e-3 * yn])
        assert rep.passed
        assert rep.slope_direction >= 1.9
        assert rep.slope_product >= 1.9

    def test_residual_ratio_near_four_per_halving(self):
        yn = np.linalg.norm(self.Y)
        rep = check_lemma_approximations(
            self.Y, self.V0, [1e-2 * yn, 5e-3 * yn, 2.5e-3 * yn])
        ratios = rep.err_direction[:-1] / rep.err_direction[1:]
        np.testing.assert_allclose(ratios, 4.0, rtol=0.15)

    def test_parallel_perturbation_exact_direction(self):
        # moving along y does not change the unit vector, so the residual of
        # the direction expansion reduces to the reported parallel error
        yn = np.linalg.norm(self.Y)
        rep = check_lemma_approximations(
            self.Y, self.V0, [1e-2 * yn, 5e-3 * yn])
        s = 1e-2 * yn
        # unit(y + s*unit(y)) == unit(y), so error is exactly s/||y|| = 1e-2
        assert rep.err_parallel == pytest.approx(s / yn, rel=1e-9)

    def test_increasing_scales_rejected(self):
        with pytest.raises(ValueError):
            check_lemma_approximations(self.Y, self.V0, [1.0, 2.0])


class TestSweep:
    def _template(self, seed=8):
        return make_scenario(1, seed=seed)

    def test_sweep_deterministic_and_decreasing(self):
        template = self._template()
        opts = SolverOptions(num_starts=2)
        a = run_consistency_sweep(template, [4, 16], trials=6, opts=opts)
        b = run_consistency_sweep(template, [4, 16], trials=6, opts=opts)
        assert a == b
        assert a.error_quantiles_position[1].q50 < a.error_quantiles_position[0].q50
        assert a.failures == 0

    def test_threaded_matches_sequential(self):
        template = self._template(seed=9)
        opts = SolverOptions(num_starts=2)
        seq = run_consistency_sweep(template, [4, 8], trials=4, opts=opts, n_jobs=1)
        par = run_consistency_sweep(template, [4, 8], trials=4, opts=opts, n_jobs=2)
        assert seq == par

    def test_non_increasing_counts_rejected(self):
        with pytest.raises(ValueError):
            run_consistency_sweep(self._template(), [4, 4], trials=2)

    def test_failure_rate_guard(self):
        template = self._template(seed=10)
        bad = SolverOptions(max_iterations=1, num_starts=1,
                            gradient_tolerance=1e-300, step_tolerance=1e-300)
        with pytest.raises(RuntimeError, match="sweep error"):
            run_consistency_sweep(template, [4], trials=4, opts=bad)


class TestCsvWriters:
    def test_consistency_csv(self, tmp_path):
        template = make_scenario(1, seed=13)
        rep = run_consistency_sweep(template, [4, 8], trials=4,
                                    opts=SolverOptions(num_starts=2))
        path = os.path.join(tmp_path, "consistency.csv")
        write_consistency_csv(path, rep)
        lines = open(path, newline="").read().splitlines()
        assert lines[0] == "N,trials,failures,pos_q10,pos_q50,pos_q90,vel_q10,vel_q50,vel_q90"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "4"
        assert float(first[4]) == rep.error_quantiles_position[0].q50

    def test_assumption_iv_csv(self, tmp_path):
        scn = make_scenario(2, seed=14)
        probes = default_far_probes(scn, 2, 1e-3)
        cfg = AssumptionCheckConfig(rho=1e-3, num_mc_samples=500,
                                    probe_states=probes)
        stats = check_assumption_iv(scn, cfg)
        path = os.path.join(tmp_path, "assumption_iv.csv")
        write_assumption_iv_csv(path, stats)
        lines = open(path, newline="").read().splitlines()
        assert lines[0] == "probe_id,n_sites,b_n,cum_mean_over_bn,std_err,pass"
        assert len(lines) == 3
        row = lines[1].split(",")
        assert row[1] == "2"
        assert float(row[3]) == stats[0].cumulative_mean_over_bn
