import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subspace_ot.errors import (
    AsymmetricInput,
    FactorizationFailed,
    IndefiniteInput,
    RankDeficient,
    SingularBlock,
    SingularInput,
)
from subspace_ot.psdlin import (
    SpdMatrix,
    cholesky_lower,
    inv_sqrtm,
    polar_unitary,
    pseudo_inverse,
    schur_complement,
    sqrtm,
)

from conftest import random_spd, rel_err


class TestSpdMatrix:
    def test_rejects_asymmetry(self):
        with pytest.raises(AsymmetricInput):
            SpdMatrix([[1.0, 0.5], [0.0, 1.0]])

    def test_tolerates_small_asymmetry(self):
        m = SpdMatrix([[1.0, 0.5 + 1e-12], [0.5, 1.0]])
        np.testing.assert_array_equal(m.values, m.values.T)

    def test_rejects_indefinite(self):
        with pytest.raises(IndefiniteInput):
            SpdMatrix([[1.0, 0.0], [0.0, -0.1]])

    def test_clips_tiny_negative_eigenvalue(self):
        m = SpdMatrix(np.diag([1.0, -1e-13]))
        assert m.eig.eigenvalues.min() == 0.0

    def test_eigen_factorization(self, rng):
        for d in (2, 5, 9):
            a = random_spd(rng, d)
            m = SpdMatrix(a)
            w, q = m.eig
            assert np.all(np.diff(w) <= 0)
            assert np.linalg.norm(m.eig.reconstruct() - a) <= 1e-10 * (1 + np.linalg.norm(a))
            assert np.linalg.norm(q.T @ q - np.eye(d)) <= 1e-10

    def test_values_read_only(self):
        m = SpdMatrix(np.eye(2))
        with pytest.raises(ValueError):
            m.values[0, 0] = 3.0


class TestSqrtm:
    def test_identity(self):
        np.testing.assert_allclose(sqrtm(np.eye(3)).values, np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(sqrtm(np.diag([4.0, 9.0])).values, np.diag([2.0, 3.0]), atol=1e-14)

    def test_hand_eigendecomposition(self):
        q = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        expected = q @ np.diag([np.sqrt(3), 1.0]) @ q.T
        s = sqrtm([[2.0, 1.0], [1.0, 2.0]]).values
        np.testing.assert_allclose(s, expected, atol=1e-14)
        assert np.linalg.norm(s @ s - [[2, 1], [1, 2]]) <= 1e-10

    def test_asymmetric_raises(self):
        with pytest.raises(AsymmetricInput):
            sqrtm([[1.0, 2.0], [0.0, 1.0]])


class TestInvSqrtm:
    def test_diagonal(self):
        np.testing.assert_allclose(inv_sqrtm(np.diag([4.0, 9.0])).values, np.diag([0.5, 1 / 3]))

    def test_identity(self):
        np.testing.assert_allclose(inv_sqrtm(np.eye(2)).values, np.eye(2))

    def test_regularized_singular(self):
        out = np.diag(inv_sqrtm(np.diag([1.0, 0.0]), reg=1e-6).values)
        np.testing.assert_allclose(out, [1.0, 1000.0], rtol=1e-3)

    def test_singular_raises(self):
        with pytest.raises(SingularInput):
            inv_sqrtm(np.diag([1.0, 0.0]))


class TestCholesky:
    def test_hand_example(self):
        np.testing.assert_allclose(cholesky_lower([[4.0, 2.0], [2.0, 5.0]]), [[2.0, 0.0], [1.0, 2.0]])

    def test_identity(self):
        np.testing.assert_array_equal(cholesky_lower(np.eye(4)), np.eye(4))

    def test_scalar(self):
        np.testing.assert_array_equal(cholesky_lower([[9.0]]), [[3.0]])

    def test_jitter_rescues_singular(self):
        low = cholesky_lower(np.diag([1.0, 0.0]))
        assert np.all(np.diag(low) > 0)
        assert np.linalg.norm(low @ low.T - np.diag([1.0, 0.0])) <= 1e-5

    def test_fails_without_escalation(self):
        with pytest.raises(FactorizationFailed):
            cholesky_lower(np.diag([1.0, -1.0]), escalate=False)

    def test_fails_after_escalation(self):
        with pytest.raises(FactorizationFailed):
            cholesky_lower(np.diag([1.0, -1.0]))


class TestSchur:
    def test_hand_example(self):
        np.testing.assert_allclose(schur_complement([[4.0, 2.0], [2.0, 5.0]], 1).values, [[4.0]])

    def test_block_diagonal(self, rng):
        a1, a2 = random_spd(rng, 2), random_spd(rng, 3)
        m = np.zeros((5, 5))
        m[:2, :2], m[2:, 2:] = a1, a2
        np.testing.assert_allclose(schur_complement(m, 2).values, a2, atol=1e-12)

    def test_identity(self):
        np.testing.assert_allclose(schur_complement(np.eye(4), 2).values, np.eye(2))

    def test_matches_conditional_covariance(self, rng):
        for _ in range(20):
            m = random_spd(rng, 4)
            brute = m[2:, 2:] - m[2:, :2] @ np.linalg.inv(m[:2, :2]) @ m[:2, 2:]
            np.testing.assert_allclose(schur_complement(m, 2).values, brute, rtol=1e-9, atol=1e-12)

    def test_singular_block(self):
        m = np.zeros((2, 2))
        m[1, 1] = 1.0
        with pytest.raises(SingularBlock):
            schur_complement(m, 1, regularize=False)


class TestPolar:
    def test_spd_gives_identity(self):
        np.testing.assert_allclose(polar_unitary(np.diag([2.0, 3.0])), np.eye(2))

    def test_rotation_fixed(self):
        r = np.array([[0.0, -1.0], [1.0, 0.0]])
        np.testing.assert_allclose(polar_unitary(r), r)

    def test_sign_flip(self):
        np.testing.assert_allclose(polar_unitary([[2.0, 0.0], [0.0, -3.0]]), np.diag([1.0, -1.0]), atol=1e-15)

    def test_nearest_orthogonal(self, rng):
        m = rng.standard_normal((4, 4))
        u = polar_unitary(m)
        assert np.linalg.norm(u.T @ u - np.eye(4)) <= 1e-10
        for _ in range(50):
            q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
            assert np.linalg.norm(u - m) <= np.linalg.norm(q - m) + 1e-12

    def test_rank_deficient(self):
        m = np.diag([1.0, 0.0])
        u = polar_unitary(m)
        assert np.linalg.norm(u.T @ u - np.eye(2)) <= 1e-12
        with pytest.raises(RankDeficient):
            polar_unitary(m, strict=True)


class TestPseudoInverse:
    def test_diag(self):
        np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])).values, np.diag([0.5, 0.0]))

    def test_identity(self):
        np.testing.assert_allclose(pseudo_inverse(np.eye(3)).values, np.eye(3))

    def test_rank_one(self):
        v = np.array([2.0, 0.0, 0.0]) @ np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
        m = np.outer(v, v)
        np.testing.assert_allclose(pseudo_inverse(m).values, m / 16, atol=1e-14)
        p = pseudo_inverse(m).values
        assert rel_err(m @ p @ m, m) <= 1e-8


def test_random_suite(rng):
    for _ in range(200):
        d = int(rng.integers(2, 17))
        a = random_spd(rng, d)
        s = sqrtm(a).values
        assert rel_err(s @ s, a) <= 1e-8
        r = inv_sqrtm(a).values
        assert rel_err(r @ a @ r, np.eye(d)) <= 1e-8
        low = cholesky_lower(a)
        assert rel_err(low @ low.T, a) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_polar_idempotent_on_orthogonal(d, seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    np.testing.assert_allclose(polar_unitary(q), q, atol=1e-12)
    np.testing.assert_allclose(polar_unitary(polar_unitary(q)), polar_unitary(q), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_spd_polar_is_identity(d, seed):
    a = random_spd(np.random.default_rng(seed), d)
    np.testing.assert_allclose(polar_unitary(a), np.eye(d), atol=1e-10)
