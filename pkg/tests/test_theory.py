import math

import numpy as np
import pytest

from mmdlfi.data import DiscreteDistribution, Sample
from mmdlfi.experiments import make_toy
from mmdlfi.kernels import DiscreteIdentity, ProductWitness, SpectralDecomposition, eigendecompose
from mmdlfi.theory import (
    ProblemParams,
    TheoryError,
    exact_moments_discrete,
    jstar_certified,
    lambda_norms,
    lower_bound_planner,
    mean_direct_discrete,
    upper_bound_planner,
)

IDENTITY_100 = eigendecompose(DiscreteIdentity(100))


def scaled_spectrum(spec, c):
    return SpectralDecomposition(spec.eigenvalues * c, spec.eigenfunctions,
                                 spec.mu, spec.support)


def rank_one_spectrum():
    support = Sample.real(np.linspace(0, 1, 8)[:, None])
    return eigendecompose(ProductWitness(lambda pts: pts[:, 0] + 1.0), support)


class TestLambdaNorms:
    def test_identity_values(self):
        norms = lambda_norms(IDENTITY_100, j=100)
        assert norms.sup == pytest.approx(0.01)
        assert norms.l2 == pytest.approx(0.1)

    def test_rank_one_tail_vanishes(self):
        norms = lambda_norms(rank_one_spectrum(), j=8)
        assert norms.l2_tail == pytest.approx(0.0, abs=1e-12)

    def test_j_two_single_term(self):
        norms = lambda_norms(IDENTITY_100, j=2)
        assert norms.l2_tail == pytest.approx(0.01)

    def test_truncation_flagged(self):
        norms = lambda_norms(IDENTITY_100, j=500)
        assert norms.truncated
        assert norms.l2_tail == pytest.approx(math.sqrt(99) / 100)

    def test_j_below_two_rejected(self):
        with pytest.raises(TheoryError):
            lambda_norms(IDENTITY_100, j=1)


class TestUpperBound:
    def params(self, epsilon, r=0.0, c=1.3, delta=1.0, alpha=0.05):
        return ProblemParams(c_density=c, epsilon=epsilon, delta=delta,
                             alpha=alpha, r_misspec=r)

    def test_epsilon_scaling(self):
        b1 = upper_bound_planner(self.params(0.01), IDENTITY_100)
        b2 = upper_bound_planner(self.params(0.02), IDENTITY_100)
        assert b2.min_m_n == pytest.approx(b1.min_m_n / 4)
        assert b2.min_n_sqrt_nm == pytest.approx(b1.min_n_sqrt_nm / 4)

    def test_misspecification_scaling(self):
        b0 = upper_bound_planner(self.params(0.05, r=0.0), IDENTITY_100)
        b1 = upper_bound_planner(self.params(0.05, r=1.0), IDENTITY_100)
        assert b1.min_m_n == pytest.approx(4 * b0.min_m_n)
        assert b1.min_n_sqrt_nm == pytest.approx(b0.min_n_sqrt_nm)

    def test_toy_arithmetic(self):
        b = upper_bound_planner(self.params(0.06), IDENTITY_100)
        log20 = math.log(20)
        assert b.min_m_n == pytest.approx(1.3 * 0.01 * log20 / 0.06**2, rel=1e-12)
        assert b.min_n_sqrt_nm == pytest.approx(1.3 * 0.1 * log20 / 0.06**2, rel=1e-12)
        assert b.min_m_n == pytest.approx(10.8, abs=0.1)
        assert b.min_n_sqrt_nm == pytest.approx(108.2, abs=0.2)

    def test_homogeneity_in_spectrum(self):
        p = self.params(0.05)
        base = upper_bound_planner(p, IDENTITY_100)
        scaled = upper_bound_planner(p, scaled_spectrum(IDENTITY_100, 3.0))
        assert scaled.min_m_n == pytest.approx(3 * base.min_m_n)
        assert scaled.min_n_sqrt_nm == pytest.approx(3 * base.min_n_sqrt_nm)

    def test_caveat_present(self):
        assert "constants" in upper_bound_planner(self.params(0.1), IDENTITY_100).constant_caveat


class TestLowerBound:
    def params(self, epsilon, delta=1.0, alpha=0.05):
        return ProblemParams(c_density=1.0, epsilon=epsilon, delta=delta, alpha=alpha)

    def test_identity_arithmetic(self):
        res = lower_bound_planner(self.params(0.004), IDENTITY_100, j=100)
        expected_m = 0.01 * math.log(20) / (0.004**2 * 1.0)
        assert res.m_min == pytest.approx(expected_m, rel=1e-12)
        assert res.m_min == pytest.approx(1872, abs=1.0)

    def test_delta_one_collapses_mixed_to_n_scale(self):
        res = lower_bound_planner(self.params(0.01, delta=1.0), IDENTITY_100, j=100)
        assert res.mixed_min == pytest.approx(res.n_min)

    def test_monotone_in_epsilon(self):
        values = [lower_bound_planner(self.params(e), IDENTITY_100, j=50)
                  for e in (0.001, 0.01, 0.1)]
        for a, b in zip(values, values[1:]):
            assert b.m_min <= a.m_min
            assert b.n_min <= a.n_min
            assert b.mixed_min <= a.mixed_min

    def test_identity_precondition_reported(self):
        res = lower_bound_planner(self.params(0.01), IDENTITY_100, j=10)
        assert res.top_eigenfunction_constant

    def test_homogeneity_in_spectrum(self):
        p = self.params(0.02)
        base = lower_bound_planner(p, IDENTITY_100, j=40)
        scaled = lower_bound_planner(p, scaled_spectrum(IDENTITY_100, 2.0), j=40)
        assert scaled.m_min == pytest.approx(2 * base.m_min)
        assert scaled.n_min == pytest.approx(2 * base.n_min)


class TestJstar:
    def test_identity_threshold(self):
        # for the flat spectrum the condition reduces to eps <= 1/(2k)
        assert jstar_certified(IDENTITY_100, 0.004) == 100
        assert jstar_certified(IDENTITY_100, 0.01) == 1

    def test_rank_one_never_certifies(self):
        assert jstar_certified(rank_one_spectrum(), 1e-6) == 1

    def test_non_increasing_in_epsilon(self):
        spec = eigendecompose(DiscreteIdentity(40))
        values = [jstar_certified(spec, e) for e in (1e-4, 1e-3, 1e-2, 1e-1)]
        assert values == sorted(values, reverse=True)

    def test_positive_epsilon_required(self):
        with pytest.raises(TheoryError):
            jstar_certified(IDENTITY_100, 0.0)


def random_discrete(gen, k):
    return DiscreteDistribution(gen.dirichlet(np.ones(k)))


class TestExactMoments:
    def test_mean_zero_when_classes_equal(self, rng):
        k = 6
        p = random_discrete(rng, k)
        pz = random_discrete(rng, k)
        spec = eigendecompose(DiscreteIdentity(k))
        for pi in (0.0, 0.3, 1.0):
            mean, _ = exact_moments_discrete(p, p, pz, spec, 10, 10, pi)
            assert mean == pytest.approx(0.0, abs=1e-14)

    def test_mean_on_toy_at_null(self):
        toy = make_toy(100, 0.3)
        spec = eigendecompose(toy.kernel)
        mean, _ = exact_moments_discrete(toy.px, toy.py, toy.px, spec, 50, 50, 0.5)
        assert mean == pytest.approx(0.5 * toy.true_mmd_sq, rel=1e-10)
        assert mean == pytest.approx(0.0018, rel=1e-10)

    def test_mean_matches_direct_route(self, rng):
        k = 7
        kernel = DiscreteIdentity(k)
        spec = eigendecompose(kernel)
        for _ in range(100):
            px, py, pz = (random_discrete(rng, k) for _ in range(3))
            pi = float(rng.uniform(0, 1))
            spectral, _ = exact_moments_discrete(px, py, pz, spec, 9, 7, pi)
            direct = mean_direct_discrete(px, py, pz, kernel.matrix(), pi)
            # the spectral route subtracts the segment projection, the direct
            # route never does; they agree because the residual is orthogonal
            assert spectral == pytest.approx(direct, abs=1e-10)

    def test_variance_non_negative(self, rng):
        k = 5
        spec = eigendecompose(DiscreteIdentity(k))
        for _ in range(200):
            px, py, pz = (random_discrete(rng, k) for _ in range(3))
            n = int(rng.integers(2, 30))
            m = int(rng.integers(2, 30))
            _, var = exact_moments_discrete(px, py, pz, spec, n, m, float(rng.uniform(0, 1)))
            assert var >= -1e-15

    def test_variance_against_monte_carlo_smoke(self, rng):
        # small instance; the full-scale comparison runs in the acceptance suite
        k, n, m, pi = 4, 12, 9, 0.4
        px, py, pz = (random_discrete(rng, k) for _ in range(3))
        spec = eigendecompose(DiscreteIdentity(k))
        mean_cf, var_cf = exact_moments_discrete(px, py, pz, spec, n, m, pi)
        reps = 40_000
        gen = np.random.default_rng(99)
        cx = gen.multinomial(n, px.pmf, size=reps).astype(float)
        cy = gen.multinomial(n, py.pmf, size=reps).astype(float)
        cz = gen.multinomial(m, pz.pmf, size=reps).astype(float)
        xy = (cx * cy).sum(1) / n**2
        xx_u = (cx * (cx - 1)).sum(1) / (n * (n - 1))
        yy_u = (cy * (cy - 1)).sum(1) / (n * (n - 1))
        stat = pi * (xx_u + yy_u - 2 * xy) + xy - xx_u - (cz * (cy - cx)).sum(1) / (n * m)
        se_mean = stat.std(ddof=1) / np.sqrt(reps)
        assert abs(stat.mean() - mean_cf) < 4 * se_mean
        assert var_cf == pytest.approx(stat.var(ddof=1), rel=0.05)

    def test_support_mismatch_rejected(self, rng):
        spec = eigendecompose(DiscreteIdentity(4))
        p3 = random_discrete(rng, 3)
        with pytest.raises(TheoryError):
            exact_moments_discrete(p3, p3, p3, spec, 5, 5, 0.5)


class TestProblemParams:
    def test_validation(self):
        with pytest.raises(TheoryError):
            ProblemParams(c_density=1.0, epsilon=0.0, delta=1.0, alpha=0.05)
        with pytest.raises(TheoryError):
            ProblemParams(c_density=1.0, epsilon=0.1, delta=0.0, alpha=0.05)
        with pytest.raises(TheoryError):
            ProblemParams(c_density=1.0, epsilon=0.1, delta=1.0, alpha=1.0)
