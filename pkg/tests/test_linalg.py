import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aakrylov import linalg
from aakrylov.errors import SingularMatrixError


class TestQrLeastSquares:
    def test_single_column_exact(self):
        beta = linalg.qr_least_squares([[1.0], [0.0]], [-1.0, 0.0])
        assert beta == pytest.approx([1.0], abs=1e-15)

    def test_rank_deficient_basic_solution(self):
        # identical columns: the dependent pivoted column gets zero weight
        R = [[1.0, 1.0], [0.0, 0.0]]
        beta = linalg.qr_least_squares(R, [-2.0, 0.0])
        assert np.asarray(R) @ beta == pytest.approx([2.0, 0.0], abs=1e-14)
        assert np.count_nonzero(beta) == 1

    def test_window_one_weight(self):
        # single difference column (1/2, -1/2), current residual (3/2, 1/2)
        beta = linalg.qr_least_squares([[0.5], [-0.5]], [1.5, 0.5])
        assert beta == pytest.approx([-1.0], abs=1e-14)

    def test_zero_matrix(self):
        beta = linalg.qr_least_squares(np.zeros((3, 2)), [1.0, 2.0, 3.0])
        assert np.all(beta == 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            linalg.qr_least_squares([[1.0], [0.0]], [1.0, 2.0, 3.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            linalg.qr_least_squares([[np.nan], [0.0]], [1.0, 0.0])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        R = rng.standard_normal((6, 3))
        rhs = rng.standard_normal(6)
        b1 = linalg.qr_least_squares(R, rhs)
        b2 = linalg.qr_least_squares(R, rhs)
        assert np.array_equal(b1, b2)

    def test_agrees_with_pseudo_inverse_on_full_rank(self):
        # 1000 seeded full-column-rank instances, n <= 8
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            p = int(rng.integers(1, n + 1))
            R = rng.standard_normal((n, p))
            s = linalg.singular_values_small(R)
            if s.sigma_min < 1e-6 * s.sigma_max:
                continue
            rhs = rng.standard_normal(n)
            b_qr = linalg.qr_least_squares(R, rhs)
            b_pi = -linalg.pseudo_inverse_solve(R, rhs)
            scale = max(1.0, float(np.linalg.norm(b_pi)))
            assert np.linalg.norm(b_qr - b_pi) <= 1e-10 * scale


class TestPseudoInverseSolve:
    def test_zero_matrix_gives_zero(self):
        x = linalg.pseudo_inverse_solve(np.zeros((3, 2)), [1.0, 1.0, 1.0])
        assert np.all(x == 0.0)

    def test_full_rank_equals_normal_equations(self):
        R = np.array([[2.0], [1.0]])
        rhs = np.array([1.0, 3.0])
        expect = (R.T @ rhs) / float((R.T @ R)[0, 0])
        x = linalg.pseudo_inverse_solve(R, rhs)
        assert x == pytest.approx(expect, rel=1e-13)

    def test_minimum_norm_among_solutions(self):
        # x1 + x2 = 2 consistent; minimum-norm solution is (1, 1)
        x = linalg.pseudo_inverse_solve([[1.0, 1.0], [0.0, 0.0]], [2.0, 0.0])
        assert x == pytest.approx([1.0, 1.0], abs=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_normal_equations_residual(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        p = int(rng.integers(1, 5))
        R = rng.standard_normal((n, p))
        rhs = rng.standard_normal(n)
        x = linalg.pseudo_inverse_solve(R, rhs)
        g = R.T @ rhs
        assert np.linalg.norm(R.T @ R @ x - g) <= 1e-10 * max(np.linalg.norm(g), 1e-30)


class TestRegularizedSolve:
    def test_huge_lambda_crushes_solution(self):
        rng = np.random.default_rng(0)
        R = rng.standard_normal((4, 2))
        rhs = rng.standard_normal(4)
        lam = 1e12 * np.linalg.norm(R.T @ R, 2)
        x = linalg.regularized_solve(R, rhs, lam)
        assert np.linalg.norm(x) <= np.linalg.norm(R.T @ rhs) / lam

    def test_tiny_relative_lambda_matches_qr(self):
        rng = np.random.default_rng(1)
        R = rng.standard_normal((5, 2))
        rhs = rng.standard_normal(5)
        lam = 1e-16 * float(np.max(np.diag(R.T @ R)))
        x = linalg.regularized_solve(R, rhs, lam)
        b_qr = linalg.qr_least_squares(R, rhs)
        assert x == pytest.approx(-b_qr, abs=1e-6)

    def test_scalar_case(self):
        x = linalg.regularized_solve([[1.0], [0.0]], [1.0, 0.0], 1.0)
        assert x == pytest.approx([0.5], abs=1e-15)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            linalg.regularized_solve([[1.0]], [1.0], 0.0)

    def test_converges_to_pseudo_inverse(self):
        rng = np.random.default_rng(2)
        R = rng.standard_normal((6, 3))
        rhs = rng.standard_normal(6)
        target = linalg.pseudo_inverse_solve(R, rhs)
        devs = [
            float(np.linalg.norm(linalg.regularized_solve(R, rhs, lam) - target))
            for lam in (1e-2, 1e-5, 1e-8, 1e-11)
        ]
        assert all(d2 <= d1 for d1, d2 in zip(devs, devs[1:]))
        assert devs[-1] <= 1e-9


class TestSingularValues:
    def test_known_diagonal(self):
        pair = linalg.singular_values_small(np.diag([0.5784, 0.999]))
        assert pair.sigma_min == pytest.approx(0.5784, abs=1e-14)
        assert pair.sigma_max == pytest.approx(0.999, abs=1e-14)

    def test_identity(self):
        assert linalg.singular_values_small(np.eye(3)) == pytest.approx((1.0, 1.0))

    def test_nilpotent(self):
        pair = linalg.singular_values_small([[0.0, 1.0], [0.0, 0.0]])
        assert pair == pytest.approx((0.0, 1.0), abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
    def test_diagonal_extremes_exact(self, diag):
        pair = linalg.singular_values_small(np.diag(diag))
        mags = np.abs(diag)
        assert pair.sigma_min == pytest.approx(mags.min(), abs=1e-14 * (1 + mags.max()))
        assert pair.sigma_max == pytest.approx(mags.max(), abs=1e-14 * (1 + mags.max()))

    def test_svdvals_resolves_tiny(self):
        # rank-1 matrix: second singular value must resolve well below sqrt(eps)
        v = np.array([1.0, 2.0, 3.0])
        s = linalg.svdvals(np.outer(v, v))
        assert s[-2] <= 1e-14 * s[-1]


class TestSolveSquare:
    def test_identity(self):
        b = np.array([3.0, -1.0, 2.0])
        assert np.array_equal(linalg.solve_square(np.eye(3), b), b)

    def test_diagonal(self):
        x = linalg.solve_square(np.diag([-0.5, 0.5]), [1.0, -1.0])
        assert x == pytest.approx([-2.0, -2.0], abs=1e-15)

    def test_upper_triangular(self):
        A = [[1.0 / 3.0, -0.25], [0.0, 2.0 / 3.0]]
        x = linalg.solve_square(A, [1.0 / 3.0, 0.0])
        assert x == pytest.approx([1.0, 0.0], abs=1e-14)

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            linalg.solve_square([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])

    def test_residual_contract(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            A = rng.standard_normal((n, n))
            b = rng.standard_normal(n)
            x = linalg.solve_square(A, b)
            bound = 1e-12 * (np.linalg.norm(A, 2) * np.linalg.norm(x) + np.linalg.norm(b))
            assert np.linalg.norm(A @ x - b) <= bound
