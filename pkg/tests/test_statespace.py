from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dmfm import factor, mar, numcore, simlab, statespace
from dmfm.errors import DimensionMismatch, SeriesTooShort, SingularPhi
from dmfm.statespace import StateSpaceParams

from conftest import random_orthogonal, random_stable


def _random_psd(rng, n, floor=0.2):
    b = rng.standard_normal((n, n))
    return b @ b.T / n + floor * np.eye(n)


def _population_moments(phi, sx, sz):
    return sx + phi @ sz @ phi.T + sz, -phi @ sz


def _observed(rng, phi, sx, sz, T):
    n = phi.shape[0]
    lx, lz = np.linalg.cholesky(sx), np.linalg.cholesky(sz)
    x = np.linalg.cholesky(numcore.stationary_cov(phi, sx)) @ rng.standard_normal(n)
    out = np.empty((T, n))
    xi = rng.standard_normal((T, n)) @ lx.T
    zeta = rng.standard_normal((T, n)) @ lz.T
    for t in range(T):
        x = phi @ x + xi[t]
        out[t] = x
    return out + zeta


class TestResidualMoments:
    def test_exact_dynamics(self, rng):
        phi = random_stable(rng, 4, 0.9)
        x = np.empty((20, 4))
        x[0] = rng.standard_normal(4)
        for t in range(1, 20):
            x[t] = phi @ x[t - 1]
        g0, g1 = statespace.residual_moments(numcore.unvec_series(x, 2, 2), phi)
        assert_allclose(g0, 0, atol=1e-12)
        assert_allclose(g1, 0, atol=1e-12)

    def test_zero_phi(self, rng):
        f = rng.standard_normal((15, 2, 2))
        g0, g1 = statespace.residual_moments(f, np.zeros((4, 4)))
        assert_allclose(g0, numcore.autocov(f, 0) * 15 / 14 - np.outer(numcore.vec(f[0]), numcore.vec(f[0])) / 14)
        v = numcore.vec_series(f[1:])
        assert_allclose(g1, v[1:].T @ v[:-1] / 13)

    def test_population_identity(self):
        rng = np.random.default_rng(1)
        phi = random_stable(rng, 2, 0.7)
        sx, sz = _random_psd(rng, 2), _random_psd(rng, 2)
        y = _observed(rng, phi, sx, sz, 100_000)
        g0, g1 = statespace.residual_moments(y[:, :, None], phi)
        p0, p1 = _population_moments(phi, sx, sz)
        assert np.linalg.norm(g0 - p0) < 0.02 * np.linalg.norm(p0)
        assert np.linalg.norm(g1 - p1) < 0.02 * np.linalg.norm(p0)

    def test_errors(self, rng):
        with pytest.raises(SeriesTooShort):
            statespace.residual_moments(np.ones((2, 1, 1)), np.eye(1))
        with pytest.raises(DimensionMismatch):
            statespace.residual_moments(np.ones((5, 2, 1)), np.eye(3))


class TestNoiseCovariances:
    def test_exact_inversion(self, rng):
        for _ in range(5):
            phi = random_stable(rng, 3, 0.8)
            sx, sz = _random_psd(rng, 3), _random_psd(rng, 3)
            got_z, got_x = statespace.noise_covariances(*_population_moments(phi, sx, sz), phi)
            assert_allclose(got_z, sz, atol=1e-10)
            assert_allclose(got_x, sx, atol=1e-10)

    def test_clean_factors(self):
        rng = np.random.default_rng(4)
        phi = 0.7 * random_orthogonal(rng, 2)
        sx = _random_psd(rng, 2)
        y = _observed(rng, phi, sx, 1e-30 * np.eye(2), 10_000)
        g0, g1 = statespace.residual_moments(y[:, :, None], phi)
        sz, sxh = statespace.noise_covariances(g0, g1, phi)
        assert np.linalg.norm(sz) < 0.02 * np.linalg.norm(g0)
        assert np.linalg.norm(sxh - g0) < 0.05 * np.linalg.norm(g0)

    def test_adversarial_stays_psd(self, rng):
        phi = random_stable(rng, 3, 0.8)
        g1 = rng.standard_normal((3, 3)) * 5
        sz, sx = statespace.noise_covariances(np.eye(3), g1, phi)
        for s in (sz, sx):
            assert np.linalg.eigvalsh(s)[0] >= -1e-12 * max(1.0, np.linalg.norm(s))

    def test_singular_phi(self):
        with pytest.raises(SingularPhi):
            statespace.noise_covariances(np.eye(2), np.eye(2), np.diag([1.0, 0.0]))


def _hand_filter(phi, q, r, ys):
    """Scalar filter in exact rational arithmetic, stationary start."""
    x, p = Fraction(0), q / (1 - phi * phi)
    out = []
    for y in ys:
        xp, pp = phi * x, phi * phi * p + q
        k = pp / (pp + r)
        x = xp + k * (y - xp)
        p = (1 - k) ** 2 * pp + k * k * r
        out.append(x)
    return out


class TestKalman:
    def test_hand_fixture(self):
        ys = [Fraction(1), Fraction(0), Fraction(2)]
        want = _hand_filter(Fraction(1, 2), Fraction(1), Fraction(1), ys)
        assert want == [Fraction(4, 7), Fraction(2, 15), Fraction(35, 32)]
        p = StateSpaceParams(np.array([[0.5]]), np.eye(1), np.eye(1))
        got = statespace.kalman_filter(np.array([1.0, 0.0, 2.0]), p).filtered_means.ravel()
        assert_allclose(got, [float(w) for w in want], atol=1e-12)

    def test_noiseless_observation(self, rng):
        f = rng.standard_normal((30, 2, 3))
        p = StateSpaceParams(random_stable(rng, 6, 0.8), _random_psd(rng, 6), np.zeros((6, 6)))
        assert_allclose(statespace.kalman_filter(f, p).filtered_means, f, atol=1e-10)

    def test_white_state_halves(self, rng):
        y = rng.standard_normal(10)
        p = StateSpaceParams(np.zeros((1, 1)), np.eye(1), np.eye(1))
        assert_allclose(statespace.kalman_filter(y, p).filtered_means.ravel(), y / 2, atol=1e-14)

    def test_covariances_and_information(self, rng):
        phi = random_stable(rng, 4, 0.95)
        p = StateSpaceParams(phi, _random_psd(rng, 4), _random_psd(rng, 4))
        out = statespace.kalman_filter(rng.standard_normal((50, 2, 2)), p)
        for pf, pp in zip(out.filtered_covs, out.predicted_covs):
            assert_allclose(pf, pf.T, atol=1e-12)
            assert np.linalg.eigvalsh(pf)[0] >= -1e-12
            assert np.trace(pf) <= np.trace(pp) + 1e-12
        assert np.isfinite(out.loglik)
        assert out.innovations.shape == (50, 4)

    def test_unstable_phi_initialisation(self):
        p = StateSpaceParams(np.array([[1.2]]), np.array([[2.0]]), np.eye(1))
        assert statespace.initial_cov(p.phi, p.sigma_xi)[0, 0] == pytest.approx(20.0)
        assert np.all(np.isfinite(statespace.kalman_filter(np.ones(5), p).filtered_means))

    def test_singular_innovation_uses_pseudoinverse(self):
        p = StateSpaceParams(np.zeros((2, 2)), np.diag([1.0, 0.0]), np.diag([1.0, 0.0]))
        out = statespace.kalman_filter(np.array([[[2.0], [5.0]]] * 3), p)
        assert_allclose(out.filtered_means[:, :, 0], [[1.0, 0.0]] * 3, atol=1e-12)

    def test_dimension_mismatch(self):
        p = StateSpaceParams(np.eye(2), np.eye(2), np.eye(2))
        with pytest.raises(DimensionMismatch):
            statespace.kalman_filter(np.ones((4, 3, 1)), p)

    def test_params_json(self, rng):
        p = StateSpaceParams(rng.standard_normal((3, 3)), np.eye(3), 2 * np.eye(3))
        d = p.to_dict()
        assert set(d) == {"dim", "phi", "sigma_xi", "sigma_zeta"}
        back = StateSpaceParams.from_json(p.to_json())
        assert_allclose(back.phi, p.phi)
        assert_allclose(back.sigma_zeta, p.sigma_zeta)


def _filter_gain(snr, estimated, reps=15):
    """Mean squared error of filtered vs raw factors against the signal part.

    ``estimated`` selects moment-estimated parameters around the L2E fit;
    otherwise the true parameters in the estimated loading coordinates are
    used (``zeta_t = Uhat1^T E_t Uhat2`` has identity covariance).
    """
    cfg = simlab.SimConfig(8, 8, 3, 3, 1000, 0.9, snr, seed=3)
    truth = simlab.generate_truth(cfg)
    raw, filt = [], []
    for rep in range(reps):
        series, f = simlab.simulate(truth, cfg, rep, return_factors=True)
        lp = factor.tipup_loadings(series.frames, 3, 3)
        h = np.kron(lp.u2.T @ truth.loadings.u2, lp.u1.T @ truth.loadings.u1)
        target = truth.lam * (lp.u1.T @ truth.loadings.u1) @ f @ (lp.u2.T @ truth.loadings.u2).T
        fh = factor.extract_factors(series.frames, lp)
        if estimated:
            params = statespace.estimate_params(fh, mar.l2e_estimate(fh).phi)
        else:
            a10, a20 = simlab.rotation_target(lp, truth)
            params = StateSpaceParams(np.kron(a20, a10), truth.lam**2 * h @ truth.sigma_xi @ h.T, np.eye(9))
        ff = statespace.kalman_filter(fh, params).filtered_means
        raw.append(np.mean(np.sum((fh - target) ** 2, axis=(1, 2))))
        filt.append(np.mean(np.sum((ff - target) ** 2, axis=(1, 2))))
    return np.mean(filt), np.mean(raw)


@pytest.mark.parametrize("estimated", [False, True])
def test_filtering_beats_raw_extraction_at_low_snr(estimated):
    filt, raw = _filter_gain(1.5, estimated)
    assert filt < raw


def test_filtering_matches_raw_at_high_snr():
    filt, raw = _filter_gain(64.0, estimated=False)
    assert abs(filt - raw) <= 0.05 * raw
