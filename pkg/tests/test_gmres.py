import numpy as np
import pytest

from aakrylov import builtin, gmres
from aakrylov.solver import AAConfig, solve


def _krylov_optimal_norm(A, r0, k):
    """Brute-force minimum of ||r0 - A Z y|| over the order-k Krylov basis."""
    if k == 0:
        return float(np.linalg.norm(r0))
    Z = np.stack([np.linalg.matrix_power(A, j) @ r0 for j in range(k)], axis=1)
    y, *_ = np.linalg.lstsq(A @ Z, r0, rcond=None)
    return float(np.linalg.norm(r0 - A @ Z @ y))


class TestGmres:
    def test_identity_one_step(self):
        tr = gmres(np.eye(3), np.array([1.0, -2.0, 0.5]), np.zeros(3))
        assert tr.residual_norms[1] <= 1e-14

    def test_two_distinct_eigenvalues_two_steps(self):
        A = np.diag([1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0])
        b = np.array([1.0, 2.0, 3.0])
        tr = gmres(A, b, np.zeros(3))
        assert tr.norm_at(2) <= 1e-12 * tr.residual_norms[0]
        # oracle: the degree-2 polynomial (1 - 3 lam)(1 - 1.5 lam) kills the error
        p = lambda lam: (1 - 3 * lam) * (1 - 1.5 * lam)
        assert abs(p(1 / 3)) < 1e-15 and abs(p(2 / 3)) < 1e-15

    def test_zero_rhs(self):
        tr = gmres(np.eye(2), np.zeros(2), np.zeros(2))
        assert tr.residual_norms[0] == 0.0

    def test_norms_non_increasing(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            A = rng.standard_normal((n, n)) + n * np.eye(n)
            tr = gmres(A, rng.standard_normal(n), rng.standard_normal(n))
            assert np.all(np.diff(tr.residual_norms) <= 1e-14)

    def test_final_iterate_consistent(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            A = rng.standard_normal((n, n)) + n * np.eye(n)
            b = rng.standard_normal(n)
            tr = gmres(A, b, np.zeros(n))
            true_final = np.linalg.norm(b - A @ tr.x)
            assert true_final == pytest.approx(tr.residual_norms[-1], abs=1e-10 * np.linalg.norm(b))

    def test_optimality_against_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            n = int(rng.integers(2, 5))
            A = rng.standard_normal((n, n)) + 2 * n * np.eye(n)
            b = rng.standard_normal(n)
            x0 = rng.standard_normal(n)
            tr = gmres(A, b, x0)
            r0 = b - A @ x0
            for k in range(len(tr.residual_norms)):
                oracle = _krylov_optimal_norm(A, r0, k)
                assert tr.residual_norms[k] == pytest.approx(
                    oracle, abs=1e-8 * np.linalg.norm(r0)
                )

    def test_singularity_guard(self):
        with pytest.raises(ValueError):
            gmres(np.ones((2, 3)), np.ones(2))


class TestDominance:
    def test_gmres_never_beaten_by_accelerated_runs(self):
        rng = np.random.default_rng(31)
        from aakrylov.problems import LinearProblem

        checked = 0
        for _ in range(30):
            n = int(rng.integers(2, 7))
            M = rng.uniform(-1, 1, (n, n)) * rng.uniform(0.3, 1.2)
            try:
                prob = LinearProblem(M, rng.uniform(-1, 1, n))
            except ValueError:
                continue
            x0 = rng.uniform(-1, 1, n)
            gm = gmres(prob.A, prob.b, x0, max_iter=25)
            r0 = float(np.linalg.norm(prob.residual(x0)))
            for m in (1, 2, 3):
                tr = solve(prob, x0, AAConfig(m=m, max_iter=25, tol_rel=1e-300))
                for rec in tr.records:
                    assert gm.norm_at(rec.k) <= rec.r_norm + 1e-10 * r0
            checked += 1
        assert checked >= 25

    def test_dominance_on_known_problem(self):
        prob = builtin("prob41")
        rng = np.random.default_rng(1)
        x0 = rng.uniform(-1, 1, 2)
        gm = gmres(prob.A, prob.b, x0)
        tr = solve(prob, x0, AAConfig(m=1, max_iter=25, tol_rel=1e-300))
        r0 = tr.records[0].r_norm
        for rec in tr.records:
            assert gm.norm_at(rec.k) <= rec.r_norm + 1e-12 * r0
