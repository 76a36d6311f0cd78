from itertools import combinations

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from rfps.exceptions import DegenerateDataError
from rfps.factor_model import (LAMBDA_GRID, OC_CUTOFF, ObsFlag, SubspaceFit,
                               fit_factor_model, fit_lts_subspace, pc_criterion,
                               reweight_scores, reweight_subspace, select_dimension,
                               select_lambda, svd_preproject,
                               transform_yeo_johnson, yj_trimmed_loglik)
from rfps.robust_stats import chi2_quantile


def subset_svd_objective(X, rows, d):
    """Best rank-d affine fit of the given rows; their residual sum of squares."""
    sub = X[rows]
    mu = sub.mean(axis=0)
    _, s, _ = np.linalg.svd(sub - mu, full_matrices=False)
    return float(np.sum(s[d:] ** 2))


def exhaustive_lts_minimum(X, d, h):
    return min(subset_svd_objective(X, list(rows), d)
               for rows in combinations(range(X.shape[0]), h))


class TestSvdPreproject:
    def test_identical_rows(self):
        X = np.tile(np.arange(5.0), (8, 1))
        Xs, P, xb = svd_preproject(X)
        assert Xs.shape == (8, 0)
        assert xb == pytest.approx(np.arange(5.0))

    def test_exact_low_rank(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 2)) @ rng.standard_normal((2, 100))
        Xs, P, xb = svd_preproject(X)
        assert Xs.shape[1] == 2
        assert np.max(np.abs(Xs @ P.T + xb - X)) < 1e-10

    def test_wide_random(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((50, 1000))
        Xs, P, xb = svd_preproject(X)
        assert Xs.shape[1] == 49
        assert np.max(np.abs(Xs @ P.T + xb - X)) < 1e-8
        assert np.max(np.abs(P.T @ P - np.eye(49))) < 1e-10


class TestLtsSubspace:
    def test_noiseless_exact_model(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 12))
        Z, B, mu, state = fit_lts_subspace(X, d=2, h=20, seed=0)
        assert state.objective < 1e-16
        resid = X - mu - Z @ B.T
        assert np.max(np.linalg.norm(resid, axis=1)) < 1e-8

    def test_matches_exhaustive_subsets(self):
        rng = np.random.default_rng(3)
        for case in range(5):
            X = rng.standard_normal((8, 2))
            _, _, _, state = fit_lts_subspace(X, d=1, h=5, n_starts=200, seed=case)
            oracle = exhaustive_lts_minimum(X, 1, 5)
            assert state.objective <= oracle + 1e-8

    def test_far_row_excluded(self):
        rng = np.random.default_rng(4)
        n, r, d = 25, 6, 2
        X = rng.standard_normal((n, d)) @ rng.standard_normal((d, r)) \
            + 0.01 * rng.standard_normal((n, r))
        # displace one row far off the subspace
        _, _, Vt = np.linalg.svd(X - X.mean(0), full_matrices=True)
        X[3] += 1e6 * Vt[-1]
        _, _, _, state = fit_lts_subspace(X, d=d, h=n - 1, seed=1)
        assert 3 not in state.subset

    def test_objective_trace_monotone(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((40, 8))
        X[:6] += 10
        _, _, _, state = fit_lts_subspace(X, d=2, h=22, seed=2)
        tr = state.objective_trace
        for a, b in zip(tr, tr[1:]):
            assert b <= a + 1e-10

    def test_bad_trim(self):
        X = np.random.default_rng(6).standard_normal((20, 5))
        with pytest.raises(ValueError):
            fit_lts_subspace(X, d=2, h=5, seed=0)   # below [(n-d+2)/2]
        with pytest.raises(ValueError):
            fit_lts_subspace(X, d=2, h=20, seed=0)  # h must stay below n


class TestYeoJohnson:
    def test_identity_at_one(self):
        for d in (-3.0, -0.2, 0.0, 0.7, 5.0):
            assert transform_yeo_johnson(1.0, d) == pytest.approx(d)

    def test_log_branches(self):
        assert transform_yeo_johnson(0.0, np.e - 1) == pytest.approx(1.0)
        assert transform_yeo_johnson(2.0, -(np.e - 1)) == pytest.approx(-1.0)

    def test_continuity_at_zero(self):
        for lam in LAMBDA_GRID[::10]:
            left = transform_yeo_johnson(float(lam), -1e-12)
            right = transform_yeo_johnson(float(lam), 1e-12)
            assert left == pytest.approx(right, abs=1e-10)
            assert transform_yeo_johnson(float(lam), 0.0) == 0.0

    def test_monotone_in_d(self):
        d = np.linspace(-4, 4, 400)
        for lam in (0.0, 0.3, 1.0):
            t = transform_yeo_johnson(lam, d)
            assert np.all(np.diff(t) > 0)


class TestSelectLambda:
    def test_normal_prefers_identity_over_log(self):
        rng = np.random.default_rng(7)
        d = rng.standard_normal(500)
        h = 250
        assert yj_trimmed_loglik(d, 1.0, h) >= yj_trimmed_loglik(d, 0.0, h)

    def test_skewed_picks_small_lambda(self):
        rng = np.random.default_rng(8)
        od = np.exp(rng.standard_normal(400))
        lam, transformed = select_lambda(od, h=200)
        assert lam < 0.5
        assert transformed.shape == (400,)

    def test_constant_distances_zero_scale(self):
        with pytest.raises(DegenerateDataError):
            select_lambda(np.full(50, 3.0), h=25)

    def test_grid_argmax(self):
        rng = np.random.default_rng(9)
        od = np.abs(rng.standard_normal(120)) + 0.1
        h = 60
        lam, _ = select_lambda(od, h)
        med, qn = np.median(od), __import__("rfps.robust_stats", fromlist=["qn_scale"]).qn_scale(od)
        d = (od - med) / qn
        values = [yj_trimmed_loglik(d, float(l), h) for l in LAMBDA_GRID]
        assert lam == pytest.approx(float(LAMBDA_GRID[int(np.argmax(values))]))


def _make_interim(X, d):
    mu = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mu, full_matrices=False)
    B = Vt[:d].T
    Z = (X - mu) @ B
    od = np.linalg.norm(X - mu - Z @ B.T, axis=1)
    return SubspaceFit(mu=mu, B=B, Z=Z, od=od, lambda_opt=1.0,
                       od_transformed=np.zeros_like(od),
                       oc=np.zeros(X.shape[0], dtype=bool))


class TestReweightSubspace:
    def test_no_flags_equals_full_ls(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 10)) \
            + 0.1 * rng.standard_normal((40, 10))
        fit = _make_interim(X, 2)
        out = reweight_subspace(X, fit, h=25)
        assert out.mu == pytest.approx(X.mean(axis=0))
        assert out.B @ out.B.T == pytest.approx(fit.B @ fit.B.T, abs=1e-8)

    def test_displaced_rows_flagged_and_angle_improves(self):
        rng = np.random.default_rng(11)
        n, p, d = 60, 15, 2
        B0 = np.linalg.qr(rng.standard_normal((p, d)))[0]
        Z0 = rng.standard_normal((n, d))
        X = Z0 @ B0.T + 0.05 * rng.standard_normal((n, p))
        off = np.linalg.qr(np.column_stack([B0, rng.standard_normal(p)]))[0][:, -1]
        bad = [0, 1, 2]
        X[bad] += 50.0 * off
        # crude initial fit contaminated by the displaced rows
        fit = _make_interim(X, d)
        fit.oc = np.zeros(n, dtype=bool)
        fit.oc[bad] = True  # flags produced by the transform cutoff upstream
        out = reweight_subspace(X, fit, h=31)
        assert np.all(out.oc[bad])
        angle_before = np.max(subspace_angles(fit.B, B0))
        angle_after = np.max(subspace_angles(out.B, B0))
        assert angle_after < angle_before

    def test_all_flagged(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((10, 4))
        fit = _make_interim(X, 2)
        fit.oc = np.ones(10, dtype=bool)
        fit.oc[:2] = False
        with pytest.raises(DegenerateDataError):
            reweight_subspace(X, fit, h=6)


class TestReweightScores:
    def test_clean_whitened_scores(self):
        rng = np.random.default_rng(13)
        n, p, d = 500, 8, 2
        B0 = np.linalg.qr(rng.standard_normal((p, d)))[0]
        Z0 = rng.standard_normal((n, d))
        X = Z0 @ B0.T + 0.01 * rng.standard_normal((n, p))
        fit = _make_interim(X, d)
        before = fit.mu + fit.Z @ fit.B.T
        out, sd, pc = reweight_scores(fit, mcd_seed=0)
        # location near zero, scatter near identity at this sample size
        mu_z_norm = np.linalg.norm(out.mu - fit.mu)
        assert mu_z_norm < 0.2
        kept = ~pc & ~out.oc
        cov = np.cov(out.Z[kept], rowvar=False)
        assert cov == pytest.approx(np.eye(d), abs=0.25)
        after = out.mu + out.Z @ out.B.T
        assert np.max(np.abs(after - before)) < 1e-6

    def test_fitted_values_invariant(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((80, 6))
        fit = _make_interim(X, 2)
        before = fit.mu + fit.Z @ fit.B.T
        out, _, _ = reweight_scores(fit, mcd_seed=1)
        after = out.mu + out.Z @ out.B.T
        assert np.max(np.abs(after - before)) < 1e-8

    def test_shifted_scores_flagged(self):
        rng = np.random.default_rng(15)
        n, p, d = 100, 10, 2
        B0 = np.linalg.qr(rng.standard_normal((p, d)))[0]
        Z0 = rng.standard_normal((n, d))
        Z0[:10] += 5.0
        X = Z0 @ B0.T + 0.01 * rng.standard_normal((n, p))
        fit = _make_interim(X, d)
        out, sd, pc = reweight_scores(fit, mcd_seed=2)
        assert np.all(pc[:10])
        # final scores reproduce the reweighted scatter exactly: recomputing
        # the weighted covariance on the updated scores gives the identity
        c_sd = np.sqrt(chi2_quantile(0.975, d))
        from rfps.mcd import fit_mcd, reweight_consistency_factor
        kept = np.flatnonzero((fit_mcd(fit.Z, seed=2).robust_distances <= c_sd)
                              & ~fit.oc)
        Zk = out.Z[kept] - out.Z[kept].mean(axis=0)
        cov = Zk.T @ Zk / (kept.size - 1) * reweight_consistency_factor(d)
        assert cov == pytest.approx(np.eye(d), abs=1e-8)


class TestDimensionSelection:
    def test_noiseless_rank2(self):
        rng = np.random.default_rng(16)
        X = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 25))
        d_hat, fit = select_dimension(X, d_max=4, seed=0)
        assert d_hat <= 2
        if d_hat == 2:
            w = fit.flags == ObsFlag.REGULAR
            assert np.sum(fit.od[w] ** 2) < 1e-10

    def test_pure_noise_totality(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((50, 20))
        d_hat, fit = select_dimension(X, d_max=3, seed=1)
        assert d_hat in (1, 2, 3)
        assert fit.Z.shape == (50, d_hat)


class TestFitFactorModel:
    def test_noiseless_od_zero_any_h(self):
        rng = np.random.default_rng(18)
        X = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 20))
        for h in (16, 20, 25):
            fit = fit_factor_model(X, d=2, h=h, seed=0)
            assert np.max(fit.od) < 1e-8

    def test_od_sd_recomputable(self):
        rng = np.random.default_rng(19)
        X = rng.standard_normal((60, 2)) @ rng.standard_normal((2, 30)) \
            + 0.3 * rng.standard_normal((60, 30))
        fit = fit_factor_model(X, d=2, seed=1)
        od = np.linalg.norm(X - fit.mu - fit.Z @ fit.B.T, axis=1)
        sd = np.linalg.norm(fit.Z, axis=1)
        assert od == pytest.approx(fit.od, abs=1e-8)
        assert sd == pytest.approx(fit.sd, abs=1e-8)

    def test_orthogonal_invariance_of_od(self):
        rng = np.random.default_rng(20)
        X = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 18)) \
            + 0.2 * rng.standard_normal((40, 18))
        Q = np.linalg.qr(rng.standard_normal((18, 18)))[0]
        fit1 = fit_factor_model(X, d=2, seed=3)
        fit2 = fit_factor_model(X @ Q, d=2, seed=3)
        assert fit2.od == pytest.approx(fit1.od, abs=1e-6)
        assert np.array_equal(fit1.flags, fit2.flags)

    def test_pc_criterion_zero_first_term_on_exact_data(self):
        rng = np.random.default_rng(21)
        X = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 25))
        fit = fit_factor_model(X, d=2, seed=0)
        w = fit.flags == ObsFlag.REGULAR
        assert float(np.sum(fit.od[w] ** 2)) / (w.sum() * 25) < 1e-10
