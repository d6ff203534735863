import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import betainc, ndtr, ndtri

from mmdlfi.data import RandomSource, Sample, sample_discrete
from mmdlfi.experiments import make_toy
from mmdlfi.inference import (
    CalibrationError,
    CalibrationTable,
    InferenceError,
    SIGNIFICANCE_CAP,
    boosted_test,
    calibrate_null,
    estimate_p_value,
    gaussian_error_rates,
    load_calibration,
    log_binomial_cdf,
    psi_test,
    required_batches,
    save_calibration,
    significance_binomial,
    significance_gaussian,
    threshold_scan,
)
from mmdlfi.kernels import DiscreteIdentity, Gaussian, ProductWitness
from mmdlfi.stats import t_statistic, witness_scores

IDK = DiscreteIdentity(5)


def cat(*idx):
    return Sample.categorical(list(idx), 5)


class TestPsiTest:
    def test_rejects_on_signal_side(self):
        d = psi_test(cat(1, 1), cat(2, 2), cat(2, 2), 0.5, IDK)
        assert d.reject and d.statistic == 1.0 and d.threshold == 0.0

    def test_accepts_on_null_side(self):
        d = psi_test(cat(1, 1), cat(2, 2), cat(1, 1), 0.5, IDK)
        assert not d.reject and d.statistic == -1.0

    def test_tie_rejects(self):
        d = psi_test(cat(1, 1), cat(2, 2), cat(1, 2), 0.5, IDK)
        assert d.statistic == d.threshold == 0.0
        assert d.reject


class TestCalibrateNull:
    def test_constant_kernel_gives_zero_draws(self):
        kernel = ProductWitness(lambda pts: np.ones(len(pts)))
        x_cal = Sample.real(np.arange(20.0)[:, None])
        x_ev = Sample.real([[100.0], [101.0]])
        y_ev = Sample.real([[200.0], [201.0]])
        table = calibrate_null(x_cal, x_ev, y_ev, m=5, k=8, kernel=kernel,
                               rng=RandomSource(0))
        assert np.all(table.draws == 0.0)

    def test_single_repetition(self):
        toy = make_toy(10, 0.2)
        rng = RandomSource(1)
        x_cal = sample_discrete(toy.px, 50, rng.fork(0))
        x_ev = sample_discrete(toy.px, 20, rng.fork(1))
        y_ev = sample_discrete(toy.py, 20, rng.fork(2))
        table = calibrate_null(x_cal, x_ev, y_ev, m=10, k=1, kernel=toy.kernel,
                               rng=rng.fork(3))
        assert table.k == 1 and table.m == 10

    def test_draws_match_statistic_recomputation(self):
        # each draw equals the cross statistic of the drawn subsample
        toy = make_toy(20, 0.3)
        rng = RandomSource(2)
        x_cal = sample_discrete(toy.px, 100, rng.fork(0))
        x_ev = sample_discrete(toy.px, 30, rng.fork(1))
        y_ev = sample_discrete(toy.py, 30, rng.fork(2))
        table = calibrate_null(x_cal, x_ev, y_ev, m=12, k=25, kernel=toy.kernel,
                               rng=rng.fork(3))
        for r in range(25):
            gen = rng.fork(3).fork(r).generator()
            pos = gen.choice(x_cal.size, size=12, replace=False, shuffle=False)
            t_val = t_statistic(x_ev, y_ev, x_cal.take(pos), toy.kernel)
            assert table.draws[r] == pytest.approx(t_val, abs=1e-12)

    def test_null_mean_matches_closed_form(self):
        # marginal E[T] = sum_i px(i) (py(i) - px(i)) = -2 eps^2 / k
        toy = make_toy(50, 0.4)
        expected = float(np.sum(toy.px.pmf * (toy.py.pmf - toy.px.pmf)))
        rng = RandomSource(3)
        trial_means = []
        for t in range(150):
            x_cal = sample_discrete(toy.px, 400, rng.fork(t, 0))
            x_ev = sample_discrete(toy.px, 60, rng.fork(t, 1))
            y_ev = sample_discrete(toy.py, 60, rng.fork(t, 2))
            table = calibrate_null(x_cal, x_ev, y_ev, m=25, k=20,
                                   kernel=toy.kernel, rng=rng.fork(t, 3))
            trial_means.append(table.draws.mean())
        trial_means = np.array(trial_means)
        se = trial_means.std(ddof=1) / np.sqrt(len(trial_means))
        assert abs(trial_means.mean() - expected) < 3 * se

    def test_oversized_subsample_rejected(self):
        x = Sample.real(np.arange(5.0)[:, None])
        with pytest.raises(CalibrationError):
            calibrate_null(x, x, x, m=6, k=1, kernel=Gaussian(1.0),
                           rng=RandomSource(0), allow_overlap=True)

    def test_real_overlap_detected(self):
        pool = Sample.real(np.arange(10.0)[:, None])
        with pytest.raises(CalibrationError):
            calibrate_null(pool, pool, pool, m=2, k=1, kernel=Gaussian(1.0),
                           rng=RandomSource(0))
        # explicit override allowed
        calibrate_null(pool, pool, pool, m=2, k=1, kernel=Gaussian(1.0),
                       rng=RandomSource(0), allow_overlap=True)

    def test_theta_moments_from_scores(self):
        kernel = Gaussian(1.0)
        gen = np.random.default_rng(0)
        x_ev = Sample.real(gen.normal(0, 1, (30, 1)))
        y_ev = Sample.real(gen.normal(1, 1, (30, 1)))
        x_cal = Sample.real(gen.normal(0, 1, (80, 1)))
        y_cal = Sample.real(gen.normal(1, 1, (80, 1)))
        table = calibrate_null(x_cal, x_ev, y_ev, m=10, k=5, kernel=kernel,
                               rng=RandomSource(4), y_cal=y_cal)
        s0 = witness_scores(x_cal, x_ev, y_ev, kernel)
        s1 = witness_scores(y_cal, x_ev, y_ev, kernel)
        assert table.theta0 == pytest.approx(s0.mean())
        assert table.theta1 == pytest.approx(s1.mean())
        assert table.sigma0 == pytest.approx(s0.std(ddof=1))
        assert table.theta1 > table.theta0

    def test_exchangeable_under_calibration_permutation(self):
        toy = make_toy(30, 0.3)
        rng = RandomSource(5)
        x_cal = sample_discrete(toy.px, 500, rng.fork(0))
        x_ev = sample_discrete(toy.px, 40, rng.fork(1))
        y_ev = sample_discrete(toy.py, 40, rng.fork(2))
        t1 = calibrate_null(x_cal, x_ev, y_ev, m=20, k=2000, kernel=toy.kernel,
                            rng=rng.fork(3))
        perm = rng.fork(4).generator().permutation(x_cal.size)
        t2 = calibrate_null(x_cal.take(perm), x_ev, y_ev, m=20, k=2000,
                            kernel=toy.kernel, rng=rng.fork(3))
        # same score multiset, so the two draw samples share one distribution
        a, b = np.sort(t1.draws), np.sort(t2.draws)
        grid = np.unique(np.concatenate([a, b]))
        ks = np.max(np.abs(np.searchsorted(a, grid, "right") / a.size
                           - np.searchsorted(b, grid, "right") / b.size))
        assert ks < 1.63 * np.sqrt(2 / 2000)  # two-sample 1% critical value


class TestPValue:
    def table(self, draws):
        return CalibrationTable(np.asarray(draws, float), m=5, theta0=0.0,
                                theta1=float("nan"), sigma0=1.0)

    def test_extremes(self):
        t = self.table([1.0, 2.0, 3.0, 4.0])
        assert estimate_p_value(5.0, t) == 0.0
        assert estimate_p_value(0.0, t) == 1.0

    def test_strict_inequality_unsmoothed(self):
        t = self.table([1.0, 2.0])
        assert estimate_p_value(2.0, t) == 0.0  # draws strictly above only

    def test_smoothed_never_zero(self):
        t = self.table([1.0, 2.0, 3.0])
        assert estimate_p_value(10.0, t, smoothed=True) == pytest.approx(0.25)
        assert estimate_p_value(2.0, t, smoothed=True) == pytest.approx(3 / 4)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_monotone_non_increasing(self, a, b):
        t = self.table(np.linspace(-2, 2, 9))
        lo, hi = min(a, b), max(a, b)
        assert estimate_p_value(hi, t) <= estimate_p_value(lo, t)


class TestThresholdScan:
    def test_hand_instance(self):
        # t = 0.2: TP = 1, TN = 1/2, objective = 0.5 / 0.5 = 1, the maximum
        assert threshold_scan([0.1, 0.2], [0.3, 0.4]) == pytest.approx(0.2)

    def test_exhaustive_oracle(self):
        gen = np.random.default_rng(6)
        for _ in range(30):
            s0 = gen.normal(0, 1, 12)
            s1 = gen.normal(0.8, 1, 12)
            best, best_val = None, -np.inf
            for t in np.sort(np.concatenate([s0, s1])):
                tn = np.mean(s0 < t)
                if tn <= 0 or tn >= 1:
                    continue
                val = (np.mean(s1 > t) + tn - 1) / math.sqrt(tn * (1 - tn))
                if val > best_val:
                    best, best_val = t, val
            assert threshold_scan(s0, s1) == pytest.approx(best)

    def test_separated_scores_pick_gap_edge(self):
        gen = np.random.default_rng(7)
        s0 = gen.uniform(0, 1, 20)
        s1 = gen.uniform(2, 3, 20)
        assert threshold_scan(s0, s1) == pytest.approx(s0.max())

    def test_all_degenerate_rejected(self):
        with pytest.raises(InferenceError):
            threshold_scan([1.0, 1.0], [1.0, 1.0])


class TestSignificanceGaussian:
    def table(self, theta0=0.2, sigma0=0.1):
        return CalibrationTable(np.zeros(3), m=5, theta0=theta0,
                                theta1=float("nan"), sigma0=sigma0)

    def test_at_null_mean(self):
        assert significance_gaussian(0.2, 100, self.table()) == 0.0

    def test_unit_case(self):
        assert significance_gaussian(0.3, 1, self.table(0.2, 0.1)) == pytest.approx(1.0)

    def test_arithmetic(self):
        assert significance_gaussian(0.25, 100, self.table(0.2, 0.1)) == pytest.approx(5.0)

    def test_zero_sigma_rejected(self):
        with pytest.raises(InferenceError):
            significance_gaussian(0.3, 10, self.table(sigma0=0.0))

    def test_shift_equivariance(self):
        t1 = self.table(0.2, 0.1)
        t2 = self.table(0.2 + 7.0, 0.1)
        assert significance_gaussian(0.25, 64, t1) == pytest.approx(
            significance_gaussian(0.25 + 7.0, 64, t2)
        )


class TestSignificanceBinomial:
    def test_near_median(self):
        assert abs(significance_binomial(5, 10, 0.5)) < 0.5

    def test_full_count_saturates(self):
        assert significance_binomial(10, 10, 0.5) == SIGNIFICANCE_CAP

    def test_against_incomplete_beta_oracle(self):
        m, theta, count = 1000, 0.1, 150
        oracle = ndtri(betainc(m - count, count + 1, 1 - theta))
        assert significance_binomial(count, m, theta) == pytest.approx(oracle, abs=1e-6)

    def test_log_cdf_against_exact_fractions(self):
        for count, m, num, den in [(10, 300, 1, 4), (0, 200, 3, 5), (150, 400, 9, 10)]:
            theta = Fraction(num, den)
            exact = sum(
                Fraction(math.comb(m, i)) * theta**i * (1 - theta) ** (m - i)
                for i in range(count + 1)
            )
            log_exact = math.log(exact.numerator) - math.log(exact.denominator)
            assert log_binomial_cdf(count, m, num / den) == pytest.approx(
                log_exact, abs=1e-10
            )

    def test_degenerate_theta_rejected(self):
        with pytest.raises(InferenceError):
            significance_binomial(3, 10, 0.0)
        with pytest.raises(InferenceError):
            significance_binomial(3, 10, 1.0)


class TestGaussianErrorRates:
    def table(self, theta0, theta1):
        return CalibrationTable(np.zeros(2), m=5, theta0=theta0, theta1=theta1,
                                sigma0=1.0)

    def test_symmetric_midpoint(self):
        t1, t2 = gaussian_error_rates(0.5, self.table(0.0, 1.0), 2.0, 2.0, 36)
        assert t1 == pytest.approx(t2)

    def test_gamma_at_null_mean(self):
        t1, _ = gaussian_error_rates(0.0, self.table(0.0, 1.0), 1.0, 1.0, 100)
        assert t1 == pytest.approx(0.5)

    def test_five_sigma_tail(self):
        t1, t2 = gaussian_error_rates(0.5, self.table(0.0, 1.0), 1.0, 1.0, 100)
        expected = float(ndtr(-5.0))
        assert t1 == pytest.approx(expected, rel=1e-9)
        assert t2 == pytest.approx(expected, rel=1e-9)

    def test_bad_variance_rejected(self):
        with pytest.raises(InferenceError):
            gaussian_error_rates(0.5, self.table(0.0, 1.0), 0.0, 1.0, 10)


class TestBoosting:
    def test_required_batches(self):
        assert required_batches(0.05) == 67
        assert required_batches(0.05) == math.ceil(18 * math.log(2 / 0.05))

    def test_always_correct_base(self):
        assert boosted_test(lambda j: True, alpha=0.05) is True
        assert boosted_test(lambda j: False, alpha=0.05) is False

    def test_insufficient_batches_rejected(self):
        with pytest.raises(InferenceError):
            boosted_test(lambda j: True, alpha=0.05, n_batches=10)

    def test_simulated_error_bound(self):
        # base errs with probability exactly 1/3 per batch, both hypotheses
        gen = np.random.default_rng(8)
        sims, n = 10_000, required_batches(0.05)
        flips = gen.random((sims, n)) < (1 / 3)
        err_h0 = np.mean(flips.mean(axis=1) >= 0.5)     # false rejections
        err_h1 = np.mean((~flips).mean(axis=1) < 0.5)   # false acceptances
        assert err_h0 + err_h1 <= 0.05


class TestCalibrationSerialization:
    def test_roundtrip(self, tmp_path):
        table = CalibrationTable(np.array([0.1, -0.2, 0.3]), m=7, theta0=0.05,
                                 theta1=0.4, sigma0=0.12)
        path = tmp_path / "cal.txt"
        save_calibration(table, path)
        back = load_calibration(path)
        assert np.array_equal(back.draws, table.draws)
        assert (back.m, back.theta0, back.theta1, back.sigma0) == (7, 0.05, 0.4, 0.12)

    def test_nan_theta1_roundtrip(self, tmp_path):
        table = CalibrationTable(np.array([0.0]), m=2, theta0=0.0,
                                 theta1=float("nan"), sigma0=1.0)
        path = tmp_path / "cal.txt"
        save_calibration(table, path)
        assert math.isnan(load_calibration(path).theta1)
