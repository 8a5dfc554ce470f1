import numpy as np
import pytest

from orbitmle.core import derive_stream
from orbitmle.vmf import (
    VmfParams,
    rotation_from_pole,
    vmf_covariance_bound,
    vmf_log_density,
    vmf_mean_resultant,
    vmf_sample,
)

MU_X = np.array([1.0, 0.0, 0.0])


class TestParams:
    def test_rejects_non_unit_mu(self):
        with pytest.raises(ValueError):
            VmfParams(mu=[1.0, 1.0, 0.0], kappa=1.0)

    def test_rejects_kappa_out_of_range(self):
        with pytest.raises(ValueError):
            VmfParams(mu=MU_X, kappa=0.0)
        with pytest.raises(ValueError):
            VmfParams(mu=MU_X, kappa=2e6)


class TestLogDensity:
    def test_at_mean_kappa_one(self):
        # oracle: log(kappa e^kappa / (4 pi sinh kappa)) at 40 digits
        got = vmf_log_density(MU_X, VmfParams(mu=MU_X, kappa=1.0))
        assert got == pytest.approx(-1.6924636085404864, rel=1e-14)
        assert np.exp(got) == pytest.approx(0.18406549961659598, rel=1e-14)

    def test_perpendicular(self):
        kappa = 3.7
        got = vmf_log_density([0.0, 1.0, 0.0], VmfParams(mu=MU_X, kappa=kappa))
        expected = np.log(kappa) - np.log(4 * np.pi) - np.log(np.sinh(kappa))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_uniform_limit(self):
        got = vmf_log_density([0.0, 0.0, 1.0], VmfParams(mu=MU_X, kappa=1e-9))
        assert got == pytest.approx(np.log(1.0 / (4 * np.pi)), abs=1e-8)

    def test_large_kappa_stable(self):
        got = vmf_log_density(MU_X, VmfParams(mu=MU_X, kappa=1e5))
        # kappa u.mu + log kappa - log(4 pi) - (kappa - log 2) for large kappa
        expected = np.log(1e5) - np.log(4 * np.pi) + np.log(2.0)
        assert np.isfinite(got)
        assert got == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("kappa", [0.5, 2.0, 10.0, 50.0])
    def test_normalization_quadrature(self, kappa):
        # 400 x 800 latitude-longitude grid: Gauss-Legendre nodes in
        # cos(latitude), periodic midpoint rule in longitude
        p = VmfParams(mu=np.array([0.0, 0.6, 0.8]), kappa=kappa)
        n_lat, n_lon = 400, 800
        w_nodes, w_weights = np.polynomial.legendre.leggauss(n_lat)
        phi = (np.arange(n_lon) + 0.5) * 2 * np.pi / n_lon
        W, P = np.meshgrid(w_nodes, phi, indexing="ij")
        sin_t = np.sqrt(1.0 - W**2)
        U = np.stack([sin_t * np.cos(P), sin_t * np.sin(P), W], axis=-1)
        logd = p.kappa * (U @ p.mu) + (np.log(p.kappa) - np.log(4 * np.pi)
                                       - (p.kappa + np.log(-np.expm1(-2 * p.kappa)) - np.log(2)))
        area = w_weights[:, None] * (2 * np.pi / n_lon)
        assert np.sum(np.exp(logd) * area) == pytest.approx(1.0, abs=1e-6)


class TestMeanResultant:
    def test_series_limit(self):
        assert vmf_mean_resultant(1e-8) == pytest.approx(3.3333333333333333e-9, abs=1e-12)

    def test_kappa_two(self):
        assert vmf_mean_resultant(2.0) == pytest.approx(0.5373147207275481, rel=1e-14)

    def test_kappa_hundred(self):
        assert vmf_mean_resultant(100.0) == pytest.approx(0.99, abs=1e-9)

    def test_strictly_increasing_with_range(self):
        kappas = np.logspace(-6, 5, 400)
        vals = np.array([vmf_mean_resultant(k) for k in kappas])
        assert np.all(np.diff(vals) > 0)
        assert vals[0] > 0.0 and vals[-1] < 1.0


class _ForcedStream:
    """Stub stream returning fixed uniforms (endpoint tests)."""

    def __init__(self, xi):
        self.xi = xi

    def uniform(self, low=0.0, high=1.0, size=None):
        n = 1 if size is None else size
        if low == 0.0 and high == 1.0:
            return np.full(n, self.xi)
        return np.zeros(n)


class TestSampler:
    def test_inverse_cdf_endpoint(self):
        mu = np.array([0.0, 0.6, 0.8])
        out = vmf_sample(VmfParams(mu=mu, kappa=3.0), _ForcedStream(1.0))
        np.testing.assert_allclose(out, mu, atol=1e-12)

    def test_unit_norm(self):
        p = VmfParams(mu=MU_X, kappa=5.0)
        samples = vmf_sample(p, derive_stream(0, 1), size=1000)
        np.testing.assert_allclose(np.linalg.norm(samples, axis=1), 1.0, atol=1e-12)

    def test_uniform_limit_mean(self):
        p = VmfParams(mu=MU_X, kappa=1e-9)
        samples = vmf_sample(p, derive_stream(0, 2), size=100_000)
        assert np.linalg.norm(samples.mean(axis=0)) <= 0.02

    def test_kappa_two_mean(self):
        n = 100_000
        p = VmfParams(mu=MU_X, kappa=2.0)
        samples = vmf_sample(p, derive_stream(0, 3), size=n)
        mean = samples.mean(axis=0)
        # oracle: coth(2) - 1/2 evaluated at high precision
        expected = 0.5373147207275481 * MU_X
        np.testing.assert_allclose(mean, expected, atol=3.0 / np.sqrt(n))

    @pytest.mark.parametrize("kappa", [0.5, 2.0, 10.0, 100.0])
    def test_moment_match_random_mu(self, kappa):
        n = 100_000
        rng = derive_stream(10, int(kappa * 10))
        for trial in range(5):
            mu = rng.normal(size=3)
            mu /= np.linalg.norm(mu)
            samples = vmf_sample(VmfParams(mu=mu, kappa=kappa),
                                 derive_stream(11, trial), size=n)
            expected = vmf_mean_resultant(kappa) * mu
            np.testing.assert_allclose(samples.mean(axis=0), expected,
                                       atol=4.0 / np.sqrt(n))

    def test_rotation_equivariance(self):
        n = 200_000
        mu = np.array([0.0, 0.0, 1.0])
        R = rotation_from_pole(np.array([0.6, 0.0, 0.8]))
        a = vmf_sample(VmfParams(mu=mu, kappa=4.0), derive_stream(12, 0), size=n) @ R.T
        b = vmf_sample(VmfParams(mu=R @ mu, kappa=4.0), derive_stream(12, 1), size=n)
        np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=4.0 / np.sqrt(n))
        np.testing.assert_allclose(np.cov(a.T), np.cov(b.T), atol=6.0 / np.sqrt(n))


class TestCovarianceBound:
    def test_axis_aligned(self):
        got = vmf_covariance_bound(VmfParams(mu=MU_X, kappa=1.0))
        np.testing.assert_allclose(got, np.diag([2.0, 1.0, 1.0]))

    def test_eigenvalues(self):
        mu = np.array([0.36, 0.48, 0.8])
        got = vmf_covariance_bound(VmfParams(mu=mu, kappa=1.0))
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(got)), [1.0, 1.0, 2.0],
                                   atol=1e-12)

    def test_dominates_sample_covariance(self):
        n = 100_000
        mu = np.array([0.0, 0.6, 0.8])
        p = VmfParams(mu=mu, kappa=5.0)
        samples = vmf_sample(p, derive_stream(13, 0), size=n)
        bound = vmf_covariance_bound(p)
        diff = bound + 3.0 / np.sqrt(n) * np.eye(3) - np.cov(samples.T)
        assert np.linalg.eigvalsh(diff).min() >= 0.0


class TestRotationFromPole:
    def test_near_pole_identity(self):
        np.testing.assert_allclose(rotation_from_pole([0.0, 0.0, 1.0]), np.eye(3))

    def test_antipole(self):
        R = rotation_from_pole([0.0, 0.0, -1.0])
        np.testing.assert_allclose(R @ np.array([0.0, 0.0, 1.0]), [0.0, 0.0, -1.0])
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)

    def test_orthonormal_generic(self):
        mu = np.array([0.36, 0.48, 0.8])
        R = rotation_from_pole(mu)
        np.testing.assert_allclose(R @ np.array([0.0, 0.0, 1.0]), mu, atol=1e-15)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
