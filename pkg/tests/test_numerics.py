"""Unit tests for the dense linear-algebra helpers."""

import numpy as np
import pytest

from rnnint.numerics import (
    NumericsError,
    eig2,
    mat_pow,
    project_onto_span,
    spd_sqrt2,
    svd,
)


class TestSvd:
    def test_diagonal(self):
        res = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(res.singular_values, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(res.left_vectors), np.eye(2), atol=1e-12)
        np.testing.assert_allclose(np.abs(res.right_vectors), np.eye(2), atol=1e-12)

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(0)
        l = rng.standard_normal(7)
        l /= np.linalg.norm(l)
        r = rng.standard_normal(7)
        r /= np.linalg.norm(r)
        res = svd(2.0 * np.outer(l, r))
        assert abs(res.singular_values[0] - 2.0) < 1e-12
        assert np.all(res.singular_values[1:] < 1e-12)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((5, 5))
        res = svd(m)
        err = np.linalg.norm(res.reconstruct() - m) / np.linalg.norm(m)
        assert err < 1e-8

    def test_reconstruction_property_sweep(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            rows, cols = rng.integers(2, 9, size=2)
            m = rng.standard_normal((rows, cols)) * 10.0 ** rng.integers(-3, 3)
            res = svd(m)
            assert np.all(np.diff(res.singular_values) <= 1e-12)
            err = np.linalg.norm(res.reconstruct() - m) / np.linalg.norm(m)
            assert err < 1e-8
            k = len(res.singular_values)
            gram = res.left_vectors.T @ res.left_vectors
            np.testing.assert_allclose(gram, np.eye(k), atol=1e-8)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericsError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestEig2:
    def test_diagonal(self):
        res = eig2(np.array([[0.9, 0.0], [0.0, 0.0]]))
        np.testing.assert_allclose(res.eigenvalues, (0.9, 0.0), atol=1e-14)
        np.testing.assert_allclose(np.abs(res.modal_matrix), np.eye(2), atol=1e-12)

    def test_symmetric_offdiagonal(self):
        res = eig2(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(res.eigenvalues, (1.0, -1.0), atol=1e-14)

    def test_rank_one_integrator_matrix(self):
        # eigenvector parametrization (alpha, beta) = (0, 1), decay 0.5
        gamma, alpha, beta = 0.5, 0.0, 1.0
        m = gamma / (beta - alpha) * np.array([[beta, -1.0], [alpha * beta, -alpha]])
        res = eig2(m)
        # oracle: roots of the characteristic polynomial
        tr, det = np.trace(m), np.linalg.det(m)
        roots = np.roots([1.0, -tr, det])
        np.testing.assert_allclose(sorted(res.eigenvalues), sorted(roots.real), atol=1e-12)
        np.testing.assert_allclose(res.eigenvalues, (0.5, 0.0), atol=1e-12)

    def test_modal_identity_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m = rng.standard_normal((2, 2))
            res = eig2(m)
            if res.is_complex or res.is_defective:
                continue
            lam = np.diag(res.eigenvalues)
            np.testing.assert_allclose(m @ res.modal_matrix, res.modal_matrix @ lam, atol=1e-10)

    def test_complex_pair_tagged(self):
        res = eig2(np.array([[0.0, -1.0], [1.0, 0.0]]))  # rotation: eigenvalues +-i
        assert res.is_complex
        assert res.modal_matrix is None

    def test_defective_tagged(self):
        res = eig2(np.array([[1.0, 1.0], [0.0, 1.0]]))  # Jordan block
        assert res.is_defective


class TestMatPow:
    def test_zeroth_power_is_identity(self):
        m = np.random.default_rng(4).standard_normal((5, 5))
        np.testing.assert_allclose(mat_pow(m, 0), np.eye(5))

    def test_diagonal(self):
        np.testing.assert_allclose(mat_pow(np.diag([2.0, 3.0]), 4), np.diag([16.0, 81.0]))

    def test_against_naive_product(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 4))
        naive = np.eye(4)
        for _ in range(7):
            naive = naive @ m
        np.testing.assert_allclose(mat_pow(m, 7), naive, rtol=1e-10, atol=1e-12)

    def test_exponent_addition(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            m = 0.7 * rng.standard_normal((3, 3))
            a, b = rng.integers(0, 6, size=2)
            lhs = mat_pow(m, a + b)
            rhs = mat_pow(m, a) @ mat_pow(m, b)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


class TestProjectOntoSpan:
    def test_vector_in_span(self):
        basis = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
        par, ort = project_onto_span(np.array([2.0, -1.0, 0.0]), basis)
        np.testing.assert_allclose(ort, 0.0, atol=1e-12)

    def test_vector_orthogonal_to_span(self):
        par, ort = project_onto_span(np.array([0.0, 0.0, 3.0]), [np.array([1.0, 0.0, 0.0])])
        np.testing.assert_allclose(par, 0.0, atol=1e-12)

    def test_mixed(self):
        par, ort = project_onto_span(np.array([1.0, 1.0, 0.0]), [np.array([1.0, 0.0, 0.0])])
        np.testing.assert_allclose(par, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(ort, [0.0, 1.0, 0.0], atol=1e-12)

    def test_pythagoras(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.standard_normal(8)
            basis = rng.standard_normal((3, 8))
            par, ort = project_onto_span(v, basis)
            np.testing.assert_allclose(par + ort, v, atol=1e-10)
            lhs = np.linalg.norm(par) ** 2 + np.linalg.norm(ort) ** 2
            np.testing.assert_allclose(lhs, np.linalg.norm(v) ** 2, rtol=1e-9)
            for b in basis:
                assert abs(ort @ b) < 1e-8 * max(1.0, np.linalg.norm(b))

    def test_degenerate_basis_rejected(self):
        b = np.array([1.0, 2.0, 0.0])
        with pytest.raises(NumericsError, match="conditioning"):
            project_onto_span(np.ones(3), [b, 2.0 * b])


class TestSpdSqrt2:
    def test_identity(self):
        np.testing.assert_allclose(spd_sqrt2(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        np.testing.assert_allclose(spd_sqrt2(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_self_check(self):
        m = np.array([[1.0, 0.5], [0.5, 1.0]])
        root = spd_sqrt2(m)
        np.testing.assert_allclose(root @ root, m, atol=1e-10)
        np.testing.assert_allclose(root, root.T, atol=1e-12)

    def test_random_spd(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            a = rng.standard_normal((2, 2))
            m = a @ a.T + 0.1 * np.eye(2)
            root = spd_sqrt2(m)
            np.testing.assert_allclose(root @ root, m, atol=1e-10)

    def test_non_spd_rejected(self):
        with pytest.raises(NumericsError):
            spd_sqrt2(np.diag([1.0, -1.0]))
        with pytest.raises(NumericsError):
            spd_sqrt2(np.array([[1.0, 2.0], [0.0, 1.0]]))
