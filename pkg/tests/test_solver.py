import numpy as np
import pytest

from aakrylov import builtin, linalg
from aakrylov.solver import (
    AAConfig,
    AAState,
    aa_step,
    compute_beta,
    fp_solve,
    solve,
    solve_general,
)


def _random_contraction(rng, n, norm_cap=0.95):
    G = rng.standard_normal((n, n))
    return G * (rng.uniform(0.2, norm_cap) / np.linalg.norm(G, 2))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            AAConfig(m=-1)
        with pytest.raises(ValueError):
            AAConfig(tol_rel=0.0)
        with pytest.raises(ValueError):
            AAConfig(ls_strategy="cholesky")
        with pytest.raises(ValueError):
            AAConfig(ls_strategy="regularized")
        with pytest.raises(ValueError):
            AAConfig(ls_strategy="regularized", reg_lambda=1e-8, reg_eps=1e-16)
        with pytest.raises(ValueError):
            AAConfig(ls_strategy="regularized", reg_lambda=0.0)
        with pytest.raises(ValueError):
            AAConfig(reg_lambda=1e-8)


class TestComputeBeta:
    def test_window_one_known_value(self):
        beta = compute_beta([np.array([1.5, 0.5]), np.array([1.0, 1.0])], AAConfig(m=1))
        assert beta == pytest.approx([-1.0], abs=1e-14)

    def test_equal_residuals_give_zero(self):
        r = np.array([0.3, -0.2])
        beta = compute_beta([r, r.copy()], AAConfig(m=1))
        assert np.array_equal(beta, np.zeros(1))

    def test_orthogonal_pair(self):
        beta = compute_beta([np.array([1.0, 0.0]), np.array([0.0, 1.0])], AAConfig(m=1))
        assert beta == pytest.approx([-0.5], abs=1e-15)

    def test_strategies_agree_on_well_conditioned(self):
        rng = np.random.default_rng(11)
        window = [rng.standard_normal(5) for _ in range(4)]
        b_qr = compute_beta(window, AAConfig(m=3))
        b_pi = compute_beta(window, AAConfig(m=3, ls_strategy="pseudo_inverse"))
        b_rg = compute_beta(
            window, AAConfig(m=3, ls_strategy="regularized", reg_eps=1e-16)
        )
        assert b_qr == pytest.approx(b_pi, abs=1e-10)
        assert b_qr == pytest.approx(b_rg, abs=1e-6)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            compute_beta([np.array([np.inf, 0.0]), np.array([1.0, 0.0])], AAConfig(m=1))


class TestStallExample:
    """The amplifying diagonal map where the window-one run repeats a residual."""

    @pytest.fixture()
    def trace(self):
        return solve(builtin("example32_stall"), [-2.0, 2.0], AAConfig(m=1, max_iter=60))

    def test_chain_of_values(self, trace):
        recs = trace.records
        assert recs[0].r == pytest.approx([1.0, 1.0], abs=1e-15)
        assert recs[1].r == pytest.approx([1.5, 0.5], abs=1e-15)
        assert recs[1].beta == pytest.approx([-1.0], abs=1e-14)
        assert recs[2].r == pytest.approx(recs[1].r, abs=1e-14)
        assert recs[2].beta == pytest.approx([0.0], abs=0.0)
        M = np.asarray(builtin("example32_stall").M)
        assert recs[3].r == pytest.approx(M @ recs[2].r, rel=1e-14)

    def test_recovers_and_converges(self, trace):
        assert trace.records[-1].k <= 60
        assert trace.records[-1].r_norm <= 1e-10 * trace.records[0].r_norm

    def test_not_reported_as_stalled(self, trace):
        assert trace.reason in ("converged", "max_iter")


class TestSolveBasics:
    def test_start_at_fixed_point_converges_immediately(self):
        trace = solve(builtin("prob41"), [0.0, 0.0], AAConfig(m=1))
        assert trace.reason == "converged"
        assert trace.k_final == 0

    def test_first_step_is_plain_image(self):
        p = builtin("prob41")
        trace = solve(p, [0.2, 0.3], AAConfig(m=1, max_iter=5))
        assert trace.records[1].x == pytest.approx(p.q(np.array([0.2, 0.3])), abs=0.0)
        assert trace.records[0].beta.size == 0

    def test_m_zero_is_fixed_point_iteration(self):
        p = builtin("prob41")
        trace = solve(p, [0.2, 0.3], AAConfig(m=0, max_iter=20, tol_rel=1e-300))
        x = np.array([0.2, 0.3])
        for rec in trace.records:
            assert rec.x == pytest.approx(x, abs=0.0)
            x = p.q(x)

    def test_fp_residuals_are_matrix_powers(self):
        p = builtin("prob41")
        trace = fp_solve(p, [0.2, 0.3], max_iter=20, tol_rel=1e-300)
        M = np.asarray(p.M)
        r = trace.records[0].r.copy()
        for rec in trace.records[1:21]:
            r = M @ r
            assert np.linalg.norm(rec.r - r) <= 1e-12

    def test_window_length_grows_to_m(self):
        p = builtin("prob41")
        trace = solve(p, [0.2, 0.3], AAConfig(m=3, max_iter=10, tol_rel=1e-300))
        for rec in trace.records[:-1]:
            assert rec.beta.size == min(rec.k, 3)

    def test_determinism(self):
        p = builtin("prob42")
        a = solve(p, [0.0001, 0.3023], AAConfig(m=1, max_iter=100, tol_rel=1e-300))
        b = solve(p, [0.0001, 0.3023], AAConfig(m=1, max_iter=100, tol_rel=1e-300))
        assert a.reason == b.reason
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.x, rb.x)
            assert np.array_equal(ra.r, rb.r)
            assert np.array_equal(ra.beta, rb.beta)

    def test_record_diagnostics(self):
        p = builtin("prob42")
        trace = solve(p, [0.0001, 0.3023], AAConfig(m=1, max_iter=50, tol_rel=1e-300))
        for rec in trace.records[1:]:
            assert rec.y is not None and rec.y > 0
            assert rec.phi is not None and 0.0 <= rec.phi <= np.pi
            assert rec.sigma is not None and rec.sigma > 0

    def test_sigma_floor_flag(self):
        # needs a nonzero fixed point: the floor scales with ||x*||
        p = builtin("prob_nrbe")
        trace = solve(p, [1.2, 1.3], AAConfig(m=2, max_iter=30))
        last = trace.records[-1]
        assert last.sigma is None and last.sigma_floored

    def test_nonfinite_terminates_with_reason(self):
        from aakrylov.problems import NonlinearProblem

        blow = NonlinearProblem(lambda x: x * x * 1e200, n=1)
        trace = solve(blow, [2.0], AAConfig(m=1, max_iter=50))
        assert trace.reason == "nonfinite"

    def test_prob42_acceleration_and_oscillation(self):
        p = builtin("prob42")
        trace = solve(p, [0.0001, 0.3023], AAConfig(m=1, max_iter=240, tol_rel=1e-300))
        fp = fp_solve(p, [0.0001, 0.3023], max_iter=240, tol_rel=1e-300)
        sig_aa = trace.records[240].sigma
        sig_fp = fp.records[240].sigma
        assert sig_aa < 0.9 < sig_fp
        ys = np.array([rec.y for rec in trace.records[1:]])
        assert np.count_nonzero(ys < 0.7) >= 10
        assert np.count_nonzero(ys > 0.95) >= 10

    def test_fp_ratio_approaches_dominant_entry(self):
        trace = fp_solve(builtin("prob42"), [0.0001, 0.3023], max_iter=60, tol_rel=1e-300)
        assert trace.records[50].y == pytest.approx(0.999, abs=1e-3)


class TestGeneralGuesses:
    def test_guess_count_checked(self):
        p = builtin("prob41")
        with pytest.raises(ValueError):
            solve_general(p, [[0.1, 0.1]], AAConfig(m=1))

    def test_seeds_recorded_verbatim(self):
        p = builtin("prob41")
        g = [np.array([0.3, 0.1]), np.array([-0.2, 0.5]), np.array([0.1, -0.4])]
        trace = solve_general(p, g, AAConfig(m=2, max_iter=30))
        for k in range(3):
            assert np.array_equal(trace.records[k].x, g[k])
            assert trace.records[k].beta.size == (2 if k == 2 else 0)
        assert trace.n_seed == 3

    def test_duplicate_guesses_handled(self):
        p = builtin("prob41")
        g = [np.array([0.3, 0.1]), np.array([0.3, 0.1])]
        trace = solve_general(p, g, AAConfig(m=1, max_iter=60))
        assert trace.reason == "converged"

    def test_full_window_from_first_step(self):
        p = builtin("prob41")
        g = [np.array([0.3, 0.1]), np.array([-0.2, 0.5])]
        trace = solve_general(p, g, AAConfig(m=1, max_iter=30, tol_rel=1e-300))
        assert trace.records[1].beta.size == 1


class TestProvedIdentities:
    """Structural identities of the linear case, checked on real traces."""

    # residuals computed as x - q(x) carry an absolute noise floor of about
    # eps * ||x||, so identities hold relative to scales well above it
    _NOISE_CUT = 1e-4

    def _traces(self):
        rng = np.random.default_rng(404)
        for trial in range(25):
            n = int(rng.integers(2, 7))
            M = _random_contraction(rng, n)
            from aakrylov.problems import LinearProblem

            p = LinearProblem(M, rng.standard_normal(n) * 0.1)
            m = int(rng.integers(1, 4))
            trace = solve(p, rng.uniform(-1, 1, n), AAConfig(m=m, max_iter=25, tol_rel=1e-300))
            yield p, m, trace

    def test_residual_update_identity(self):
        # r_{k+1} = (1 + sum beta) M r_k - sum_i beta_i M r_{k-i} for k >= m
        for p, m, trace in self._traces():
            M = np.asarray(p.M)
            r0 = trace.records[0].r_norm
            for idx in range(m, len(trace.records) - 1):
                rec = trace.records[idx]
                if rec.beta.size != m:
                    continue
                expect = (1.0 + rec.beta.sum()) * (M @ rec.r)
                for i in range(1, m + 1):
                    expect -= rec.beta[i - 1] * (M @ trace.records[idx - i].r)
                dev = np.linalg.norm(trace.records[idx + 1].r - expect)
                assert dev <= 1e-11 * r0

    def test_projector_identity(self):
        # r_{k+1} = M (I - R_k R_k^+) r_k, pseudo-inverse computed independently
        checked = 0
        for p, m, trace in self._traces():
            M = np.asarray(p.M)
            r0 = trace.records[0].r_norm
            for idx in range(m, len(trace.records) - 1):
                rec = trace.records[idx]
                if rec.beta.size != m or rec.r_norm < self._NOISE_CUT * r0:
                    continue
                R = np.stack([rec.r - trace.records[idx - i].r for i in range(1, m + 1)], axis=1)
                proj = np.eye(p.n) - R @ np.linalg.pinv(R)
                expect = M @ (proj @ rec.r)
                dev = np.linalg.norm(trace.records[idx + 1].r - expect)
                assert dev <= 1e-10 * rec.r_norm
                checked += 1
        assert checked >= 50

    def test_orthogonality_identity(self):
        # R_k^T M^{-1} r_{k+1} = 0 when M is invertible
        for p, m, trace in self._traces():
            M = np.asarray(p.M)
            pair = linalg.singular_values_small(M)
            if pair.sigma_min < 1e-3 * pair.sigma_max:
                continue  # inverting M would amplify the residual noise floor
            Minv = np.linalg.inv(M)
            r0 = trace.records[0].r_norm
            for idx in range(m, len(trace.records) - 1):
                rec = trace.records[idx]
                nxt = trace.records[idx + 1]
                if rec.beta.size != m or nxt.r_norm <= self._NOISE_CUT * r0:
                    continue
                R = np.stack([rec.r - trace.records[idx - i].r for i in range(1, m + 1)], axis=1)
                v = Minv @ nxt.r
                lhs = np.linalg.norm(R.T @ v)
                assert lhs <= 1e-10 * np.linalg.norm(R, 2) * np.linalg.norm(v)

    def test_monotone_residuals_under_contraction(self):
        rng = np.random.default_rng(808)
        for _ in range(40):
            n = int(rng.integers(2, 7))
            M = _random_contraction(rng, n)
            norm_m = np.linalg.norm(M, 2)
            from aakrylov.problems import LinearProblem

            p = LinearProblem(M, np.zeros(n))
            m = int(rng.integers(1, 4))
            trace = solve(p, rng.uniform(-1, 1, n), AAConfig(m=m, max_iter=20))
            for a, b in zip(trace.records, trace.records[1:]):
                assert b.r_norm <= norm_m * a.r_norm + 1e-12

    def test_beta_lower_bound_contractive(self):
        rng = np.random.default_rng(77)
        from aakrylov.problems import LinearProblem

        for _ in range(200):
            n = int(rng.integers(2, 9))
            M = _random_contraction(rng, n, norm_cap=0.999)
            p = LinearProblem(M, np.zeros(n))
            trace = solve(p, rng.uniform(-1, 1, n), AAConfig(m=1, max_iter=30))
            for rec in trace.records:
                if rec.beta.size:
                    assert rec.beta[0] > -1.0


class TestAAStateApi:
    def test_step_matches_solve(self):
        p = builtin("prob41")
        config = AAConfig(m=1, max_iter=10, tol_rel=1e-300)
        trace = solve(p, [0.2, 0.3], config)
        state = AAState.from_single(p, [0.2, 0.3], 1)
        for k in range(1, 8):
            x, r, beta = aa_step(p, state, config)
            assert np.array_equal(x, trace.records[k].x)
            assert np.array_equal(r, trace.records[k].r)
        state.validate(p)

    def test_window_never_exceeds_m_plus_one(self):
        p = builtin("prob41")
        config = AAConfig(m=2, max_iter=10, tol_rel=1e-300)
        state = AAState.from_single(p, [0.2, 0.3], 2)
        for _ in range(8):
            aa_step(p, state, config)
            assert len(state.xs) <= 3
