from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from dmfm import numcore
from dmfm.errors import DimensionMismatch, EmptySeries, NotCausal

from conftest import random_stable

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def mats(r, c):
    return arrays(np.float64, (r, c), elements=finite)


@st.composite
def kron_triples(draw):
    r1 = draw(st.integers(1, 3))
    r2 = draw(st.integers(1, 3))
    return draw(mats(r1, r1)), draw(mats(r1, r2)), draw(mats(r2, r2))


@given(kron_triples())
def test_vec_kron_identity(triple):
    a1, f, a2 = triple
    lhs = numcore.vec(a1 @ f @ a2.T)
    rhs = np.kron(a2, a1) @ numcore.vec(f)
    assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_vec_series_roundtrip(rng):
    f = rng.standard_normal((5, 2, 3))
    v = numcore.vec_series(f)
    assert_allclose(v[3], numcore.vec(f[3]))
    assert_allclose(numcore.unvec_series(v, 2, 3), f)
    assert_allclose(numcore.unvec(numcore.vec(f[0]), 2, 3), f[0])


class TestAutocov:
    def test_constant_series(self):
        f = np.tile(np.array([[1.0, 2.0], [3.0, 4.0]]), (7, 1, 1))
        v = numcore.vec(f[0])
        assert_allclose(numcore.autocov(f, 0), np.outer(v, v))

    def test_scalar_hand_value(self):
        assert numcore.autocov(np.array([1.0, 2.0, 3.0]), 1)[0, 0] == pytest.approx(8 / 3, abs=1e-15)

    def test_matches_nested_loop(self, rng):
        f = rng.standard_normal((10, 2, 2))
        T, k = 10, 2
        want = np.zeros((4, 4))
        for t in range(k, T):
            x = f[t].flatten(order="F")
            y = f[t - k].flatten(order="F")
            for i in range(4):
                for j in range(4):
                    want[i, j] += x[i] * y[j]
        assert_allclose(numcore.autocov(f, k), want / T, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(EmptySeries):
            numcore.autocov(np.ones((2, 1, 1)), 2)

    @given(arrays(np.float64, (6, 2, 2), elements=finite))
    def test_lag0_symmetric_psd(self, f):
        g = numcore.autocov(f, 0)
        assert_allclose(g, g.T, atol=1e-12)
        assert np.linalg.eigvalsh(g)[0] >= -1e-10 * max(1.0, np.abs(g).max())


def _als_kron_oracle(m, r1, r2, rng, restarts=20, iters=500):
    """Independent alternating minimisation of ||m - kron(B, A)||_F."""
    blocks = m.reshape(r2, r1, r2, r1).transpose(0, 2, 1, 3)  # blocks[j, k] = B[j,k] * A
    best = np.inf
    for _ in range(restarts):
        a = rng.standard_normal((r1, r1))
        for _ in range(iters):
            b = np.einsum("jkpq,pq->jk", blocks, a) / np.sum(a * a)
            a = np.einsum("jkpq,jk->pq", blocks, b) / np.sum(b * b)
        best = min(best, np.linalg.norm(m - np.kron(b, a)))
    return best


class TestNearestKron:
    def test_exact_kronecker(self, rng):
        a = rng.standard_normal((2, 2))
        b = rng.standard_normal((2, 2))
        m = np.kron(b, a)
        a1, a2 = numcore.nearest_kron(m, 2, 2)
        assert np.linalg.norm(np.kron(a2, a1) - m) <= 1e-10 * np.linalg.norm(m)
        sign = np.sign(a.flat[np.argmax(np.abs(a))])
        assert_allclose(a1, sign * a / np.linalg.norm(a), atol=1e-10)
        assert_allclose(a2, sign * np.linalg.norm(a) * b, atol=1e-10)

    def test_scalar(self):
        a1, a2 = numcore.nearest_kron(np.array([[-3.5]]), 1, 1)
        assert a1[0, 0] == 1.0
        assert a2[0, 0] == pytest.approx(-3.5)

    def test_matches_als_oracle(self, rng):
        m = rng.standard_normal((4, 4))
        a1, a2 = numcore.nearest_kron(m, 2, 2)
        ours = np.linalg.norm(m - np.kron(a2, a1))
        assert ours == pytest.approx(_als_kron_oracle(m, 2, 2, rng), abs=1e-8)

    def test_rectangular_blocks(self, rng):
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((2, 2))
        a1, a2 = numcore.nearest_kron(np.kron(b, a), 3, 2)
        assert_allclose(np.kron(a2, a1), np.kron(b, a), atol=1e-10)

    def test_bad_shape(self):
        with pytest.raises(DimensionMismatch):
            numcore.nearest_kron(np.eye(5), 2, 2)

    @given(arrays(np.float64, (6, 6), elements=finite))
    def test_normalisation_invariant(self, m):
        a1, a2 = numcore.nearest_kron(m, 2, 3)
        if np.linalg.norm(m) < 1e-6:
            return
        assert np.linalg.norm(a1) == pytest.approx(1.0, abs=1e-12)
        assert a1.flat[np.argmax(np.abs(a1))] > 0


class TestPsdProject:
    def test_fixed_point(self, rng):
        b = rng.standard_normal((4, 4))
        s = b @ b.T
        assert_allclose(numcore.psd_project(s), s, atol=1e-12 * np.linalg.norm(s))

    def test_diag(self):
        assert_allclose(numcore.psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]), atol=1e-15)

    def test_beats_random_psd_samples(self, rng):
        b = rng.standard_normal((3, 3))
        s = 0.5 * (b + b.T)
        w = np.linalg.eigvalsh(s)
        assert w[0] < 0 < w[-1]
        dist = np.linalg.norm(numcore.psd_project(s) - s)
        for _ in range(1000):
            c = rng.standard_normal((3, 3)) * rng.uniform(0.1, 2)
            assert dist <= np.linalg.norm(c @ c.T - s) + 1e-12

    @given(arrays(np.float64, (4, 4), elements=finite))
    def test_idempotent_and_psd(self, s):
        p = numcore.psd_project(s)
        scale = max(1.0, np.linalg.norm(s))
        assert_allclose(numcore.psd_project(p), p, atol=1e-12 * scale)
        assert np.linalg.eigvalsh(p)[0] >= -1e-12 * scale


class TestStationaryCov:
    def test_white_noise(self, rng):
        b = rng.standard_normal((3, 3))
        s = b @ b.T
        assert_allclose(numcore.stationary_cov(np.zeros((3, 3)), s), s, atol=1e-14)

    def test_scalar(self):
        assert numcore.stationary_cov(np.array([[0.5]]), np.array([[1.0]]))[0, 0] == pytest.approx(4 / 3)

    def test_truncated_series_oracle(self, rng):
        phi = random_stable(rng, 4, 0.8)
        want = np.zeros((4, 4))
        p = np.eye(4)
        for _ in range(201):
            want += p @ p.T
            p = phi @ p
        assert_allclose(numcore.stationary_cov(phi, np.eye(4)), want, atol=1e-8)

    @pytest.mark.parametrize("n", [3, 70])
    def test_lyapunov_residual(self, rng, n):
        phi = random_stable(rng, n, 0.9)
        b = rng.standard_normal((n, n))
        s = b @ b.T
        g = numcore.stationary_cov(phi, s)
        assert np.linalg.norm(g - phi @ g @ phi.T - s) <= 1e-10 * np.linalg.norm(s)

    def test_not_causal(self):
        with pytest.raises(NotCausal):
            numcore.stationary_cov(np.array([[1.0]]), np.array([[1.0]]))


class TestSpectralRadius:
    def test_diag(self):
        assert numcore.spectral_radius(np.diag([0.9, 0.1])) == pytest.approx(0.9)

    def test_rotation(self):
        c, s = np.cos(0.7), np.sin(0.7)
        assert numcore.spectral_radius(np.array([[c, -s], [s, c]])) == pytest.approx(1.0, rel=1e-12)

    def test_eigensolver_oracle(self, rng):
        m = rng.standard_normal((3, 3))
        import scipy.linalg

        want = np.max(np.abs(scipy.linalg.eigvals(m)))
        assert numcore.spectral_radius(m) == pytest.approx(want, rel=1e-8)

    @given(arrays(np.float64, (2, 2), elements=finite), arrays(np.float64, (3, 3), elements=finite))
    def test_kron_multiplicative(self, a, b):
        lhs = numcore.spectral_radius(np.kron(b, a))
        rhs = numcore.spectral_radius(a) * numcore.spectral_radius(b)
        assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-8 * max(1.0, rhs))


def test_normalize_pair_keeps_kron(rng):
    a1, a2 = -3 * rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
    b1, b2 = numcore.normalize_pair(a1, a2)
    assert_allclose(np.kron(b2, b1), np.kron(a2, a1), atol=1e-12)
    assert np.linalg.norm(b1) == pytest.approx(1.0)
    assert b1.flat[np.argmax(np.abs(b1))] > 0


def test_sqrtm_psd(rng):
    b = rng.standard_normal((4, 4))
    s = b @ b.T
    r = numcore.sqrtm_psd(s)
    assert_allclose(r @ r, s, atol=1e-10)
    assert_allclose(r, r.T)


def test_is_strictly_positive():
    assert numcore.is_strictly_positive(np.eye(2))
    assert not numcore.is_strictly_positive(np.diag([1.0, 0.0]))
    assert not numcore.is_strictly_positive(np.zeros((2, 2)))
