import numpy as np
import pytest
from scipy import special

from rfps.exceptions import ConvergenceError
from rfps.robust_stats import (DELTA_S, TUNING_S, bisquare_psi, bisquare_rho,
                               bisquare_weight, chi2_quantile, median, mscale,
                               mscale_batch, normal_quantile, qn_scale,
                               qn_scale_columns)


def brute_force_qn(xs):
    """Order-statistic definition evaluated over all pairwise gaps."""
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    gaps = sorted(abs(xs[i] - xs[j]) for i in range(n) for j in range(i + 1, n))
    h = n // 2 + 1
    k = h * (h - 1) // 2
    from rfps.robust_stats import _qn_factor
    return 2.2219 * _qn_factor(n) * gaps[k - 1]


def chi2_quantile_oracle(prob, df):
    """Bisection on the regularized incomplete gamma (the chi-square CDF)."""
    lo, hi = 0.0, 1.0
    while special.gammainc(df / 2, hi / 2) < prob:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if special.gammainc(df / 2, mid / 2) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestMedian:
    def test_odd(self):
        assert median([1, 2, 3]) == 2

    def test_even_middle_pair(self):
        assert median([1, 2, 3, 4]) == 2.5

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            median([])

    def test_permutation_and_affine_equivariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal(rng.integers(3, 40))
            a, b = rng.uniform(0.5, 3), rng.uniform(-5, 5)
            assert median(rng.permutation(x)) == pytest.approx(median(x))
            assert median(a * x + b) == pytest.approx(a * median(x) + b, abs=1e-12)


class TestQn:
    def test_constant_vector(self):
        assert qn_scale([5, 5, 5, 5]) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for n in [2, 3, 5, 8, 9, 10, 17, 40]:
            x = rng.standard_normal(n)
            assert qn_scale(x) == pytest.approx(brute_force_qn(x), rel=1e-12)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20)            :
            x = rng.standard_normal(rng.integers(4, 30))
            a, b = rng.uniform(-3, 3), rng.uniform(-5, 5)
            assert qn_scale(a * x + b) == pytest.approx(abs(a) * qn_scale(x), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            qn_scale([1.0])

    def test_columnwise_matches_scalar(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((25, 7))
        cols = qn_scale_columns(X, block=3)
        for j in range(7):
            assert cols[j] == pytest.approx(qn_scale(X[:, j]), rel=1e-14)

    def test_contamination_resistance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(21)
        bad = x.copy()
        bad[: (len(x) - 1) // 2] = 1e9
        assert abs(median(bad)) <= np.max(np.abs(x))
        assert qn_scale(bad) < 1e6  # bounded, no blow-up to the contamination value


class TestBisquare:
    def test_anchors(self):
        assert bisquare_rho(0.0, 4.685) == 0.0
        assert bisquare_rho(4.685, 4.685) == 1.0
        assert bisquare_rho(9.0, 4.685) == 1.0

    def test_bad_tuning(self):
        for fn in (bisquare_rho, bisquare_psi, bisquare_weight):
            with pytest.raises(ValueError):
                fn(1.0, 0.0)

    def test_derivative_matches_finite_difference(self):
        c = 4.685
        eps = 1e-6
        rng = np.random.default_rng(5)
        for u in np.concatenate([[1.0], rng.uniform(-2 * c, 2 * c, 100)]):
            fd = (bisquare_rho(u + eps, c) - bisquare_rho(u - eps, c)) / (2 * eps)
            assert bisquare_psi(u, c) == pytest.approx(fd, abs=1e-6)

    def test_shape_properties(self):
        c = 1.547
        u = np.linspace(0, 2 * c, 200)
        rho = bisquare_rho(u, c)
        assert np.all(np.diff(rho) >= -1e-15)          # nondecreasing in |u|
        assert np.all(bisquare_rho(-u, c) == rho)      # even
        assert np.all(bisquare_psi(-u, c) == -bisquare_psi(u, c))  # odd
        outside = np.linspace(c, 3 * c, 50)
        assert np.all(bisquare_psi(outside, c) == 0.0)
        assert np.all(bisquare_weight(outside, c) == 0.0)
        inside = np.linspace(-c + 1e-9, c - 1e-9, 50)
        w = bisquare_weight(inside, c)
        assert np.all((w >= 0) & (w <= 1))


class TestMscale:
    def test_all_zero(self):
        assert mscale(np.zeros(10)) == 0.0

    def test_symmetric_pair_matches_bisection(self):
        r = np.array([2.0, -2.0, 2.0, -2.0])
        s = mscale(r)
        # bisection oracle on mean(rho(r/s)) = delta
        lo, hi = 1e-6, 100.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.mean(bisquare_rho(r / mid, TUNING_S)) > DELTA_S:
                lo = mid
            else:
                hi = mid
        assert s == pytest.approx(0.5 * (lo + hi), rel=1e-8)
        assert bisquare_rho(2.0 / s, TUNING_S) == pytest.approx(DELTA_S, abs=1e-8)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            r = rng.standard_normal(rng.integers(5, 60))
            s = mscale(r)
            if s > 0:
                assert np.mean(bisquare_rho(r / s, TUNING_S)) == pytest.approx(
                    DELTA_S, abs=1e-8)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(7)
        r = rng.standard_normal(30)
        for a in (0.3, 2.0, -4.0):
            assert mscale(a * r) == pytest.approx(abs(a) * mscale(r), rel=1e-8)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(8)
        R = rng.standard_normal((6, 40))
        got = mscale_batch(R)
        for i in range(6):
            assert got[i] == pytest.approx(mscale(R[i]), rel=1e-9)

    def test_mostly_zero_returns_zero(self):
        r = np.zeros(10)
        r[:4] = 3.0
        assert mscale(r) == 0.0


class TestChi2Quantile:
    def test_against_incomplete_gamma_inversion(self):
        for prob, df in [(0.975, 1), (0.975, 5), (0.5, 3), (0.1, 2), (0.99, 10)]:
            assert chi2_quantile(prob, df) == pytest.approx(
                chi2_quantile_oracle(prob, df), rel=1e-8)

    def test_known_values(self):
        assert chi2_quantile(0.975, 1) == pytest.approx(5.023886, rel=1e-6)
        assert chi2_quantile(0.5, 2) == pytest.approx(2 * np.log(2), rel=1e-12)
        assert chi2_quantile(0.975, 5) == pytest.approx(12.8325, rel=1e-5)

    def test_domain(self):
        with pytest.raises(ValueError):
            chi2_quantile(1.5, 2)
        with pytest.raises(ValueError):
            chi2_quantile(0.5, 0)

    def test_normal_quantile(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, rel=1e-6)
        assert normal_quantile(0.5) == 0.0
