"""
Unit Tests for the Ball Size Correction Service
Run with: pytest tests/test_correction.py
"""

import dataclasses
import math

import numpy as np
import pytest
from pydantic import ValidationError

from models.divergence import make_divergence, parse_divergence
from models.influence import Sample, smooth_model
from models.moments import MomentSet, estimate_moments
from models.registry import SmoothFunction, build_model
from services.correction_service import (
    BallSizeRule,
    CIResult,
    TFactors,
    a_coefficients,
    a_eval,
    chi2_quantile_1df,
    confidence_interval,
    corrected_ball,
    corrected_q,
    q_exact,
    select_q,
    standardize_smooth,
    t_factors,
)
from utils.errors import ConfigError, DegenerateVariance, DomainError, SingularWhitening


def random_moments(rng, second_order=True, mu3c=0.0):
    """MomentSet with plausible random entries"""
    kappa2 = float(rng.uniform(0.3, 4.0))
    entries = {
        "kappa2": kappa2,
        "gamma": float(rng.normal() * kappa2**1.5),
        "mu4": float(rng.uniform(1.0, 6.0) * kappa2**2),
        "mu3c": mu3c,
    }
    if second_order:
        for name in ("mu2a", "mu2b", "mu2c", "mu2d", "mu12d"):
            entries[name] = float(rng.normal())
        entries["mu22"] = float(rng.uniform(0.0, 3.0))
    return MomentSet(**entries)


def quadratic(gradient, hessian):
    """f(x) = g·x + ½xᵀHx with vanishing third derivative"""
    g = np.asarray(gradient, dtype=float)
    H = np.asarray(hessian, dtype=float)
    d = g.size
    return SmoothFunction(
        "quadratic",
        d,
        value=lambda z: float(g @ z + 0.5 * z @ H @ z),
        gradient=lambda z: g + H @ z,
        hessian=lambda z: H,
        third=lambda z: np.zeros((d, d, d)),
    )


class TestQuantiles:
    """χ²₁ quantiles and the uncorrected ball"""

    def test_known_values(self):
        """0.95 and 0.9 quantiles"""
        assert chi2_quantile_1df(0.95) == pytest.approx(3.841458820694124, abs=1e-12)
        assert chi2_quantile_1df(0.9) == pytest.approx(2.705543454095404, abs=1e-12)

    def test_matches_scipy_chi2(self):
        """Agrees with the chi-square distribution's ppf"""
        from scipy.stats import chi2

        for nominal in (0.5, 0.8, 0.99):
            assert chi2_quantile_1df(nominal) == pytest.approx(chi2.ppf(nominal, 1), rel=1e-12)

    @pytest.mark.parametrize("nominal", [0.0, 1.0, -0.2])
    def test_out_of_range(self, nominal):
        """Levels outside (0, 1) are refused"""
        with pytest.raises(DomainError):
            chi2_quantile_1df(nominal)

    def test_q_exact_scales_by_curvature(self):
        """chi2 has φ''(1) = 2"""
        assert q_exact(0.95, make_divergence("chi2")) == pytest.approx(2 * 3.841458820694124)


class TestCoveragePolynomial:
    """A(x) and its coefficients"""

    def test_mean_model_reverse_kl(self):
        """−A(x)/x = μ4/(2κ²) − γ²/(3κ³) for first-order-only moment sets"""
        rng = np.random.default_rng(51)
        spec = make_divergence("reverse-kl")
        for _ in range(1000):
            moments = random_moments(rng, second_order=False)
            k, g, mu4 = moments.kappa2, moments.gamma, moments.mu4
            expected = mu4 / (2 * k**2) - g**2 / (3 * k**3)
            x = float(rng.uniform(0.5, 3.0))
            assert -a_eval(x, spec, moments) / x == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_standard_normal_mean(self):
        """Normal moments give 3/2"""
        moments = MomentSet(kappa2=1.0, gamma=0.0, mu4=3.0)
        assert -a_eval(1.96, make_divergence("reverse-kl"), moments) / 1.96 == pytest.approx(1.5)

    def test_correctable_divergences_are_linear(self):
        """φ''' = −2φ'', φ'''' = 6φ'' removes the x³ and x⁵ terms"""
        rng = np.random.default_rng(52)
        base = make_divergence("reverse-kl")
        for _ in range(100):
            d2 = float(rng.uniform(0.5, 3.0))
            spec = dataclasses.replace(base, d2_at_1=d2, d3_at_1=-2 * d2, d4_at_1=6 * d2)
            _, a3, a5 = a_coefficients(spec, random_moments(rng))
            assert abs(a3) <= 1e-12
            assert abs(a5) <= 1e-12

    def test_kl_keeps_higher_terms(self):
        """kl is not correctable, so a3 survives"""
        _, a3, _ = a_coefficients(make_divergence("kl"), MomentSet(kappa2=1.0, mu4=3.0))
        assert a3 != 0.0

    def test_zero_variance(self):
        """kappa2 = 0 has no polynomial"""
        with pytest.raises(DegenerateVariance):
            a_coefficients(make_divergence("kl"), MomentSet(kappa2=0.0))


class TestCorrectedBall:
    """q = q_exact (1 − A(√χ)/(n√χ))"""

    def test_standard_normal_mean(self):
        """A(x)/x = −3/2 inflates the ball by 3/(2n)"""
        moments = MomentSet(kappa2=1.0, gamma=0.0, mu4=3.0)
        chi2 = chi2_quantile_1df(0.9)
        q = corrected_q(0.9, make_divergence("reverse-kl"), moments, 20)
        assert q == pytest.approx(chi2 * (1 + 1.5 / 20), rel=1e-12)

    @pytest.mark.parametrize("divergence", ["kl", "reverse-kl", "chi2", "cressie-read:0.5", "cressie-read:-2"])
    def test_ignores_third_order_moment(self, divergence):
        """mu3c never changes the corrected ball size, bit for bit"""
        rng = np.random.default_rng(53)
        spec = parse_divergence(divergence)
        for _ in range(100):
            moments = random_moments(rng)
            reference = corrected_q(0.9, spec, moments, 15)
            for mu3c in (-5.0, 0.3, 12.0):
                varied = moments.model_copy(update={"mu3c": mu3c})
                assert corrected_q(0.9, spec, varied, 15) == reference

    def test_clamp(self):
        """A large positive A(x)/x clamps at a tenth of the uncorrected size"""
        moments = MomentSet(kappa2=1.0, gamma=0.0, mu4=0.0, mu2a=-50.0)
        ball = corrected_ball(0.9, make_divergence("reverse-kl"), moments, 5)
        assert ball.clamped
        assert ball.q == pytest.approx(0.1 * ball.q_exact)

    def test_small_positive_size_kept(self):
        """A corrected size below a tenth of q_exact but still positive is used as is"""
        moments = MomentSet(kappa2=1.0, gamma=0.0, mu4=0.0, mu2a=-4.75)
        ball = corrected_ball(0.9, make_divergence("reverse-kl"), moments, 5)
        assert not ball.clamped
        assert ball.q == pytest.approx(0.05 * ball.q_exact, rel=1e-12)
        assert ball.q > 0.0

    def test_small_n(self):
        """n < 2 is refused"""
        with pytest.raises(ValueError):
            corrected_ball(0.9, make_divergence("kl"), MomentSet(kappa2=1.0), 1)


class TestTFactors:
    """Smooth-model factor"""

    def test_bivariate_normal_x_plus_y2(self):
        """x + y² at normal moments: t3 = 3, t5 = −4, factor 1/2"""
        alpha3 = np.zeros((2, 2, 2))
        eye = np.eye(2)
        alpha4 = (
            np.einsum("ij,kl->ijkl", eye, eye)
            + np.einsum("ik,jl->ijkl", eye, eye)
            + np.einsum("il,jk->ijkl", eye, eye)
        )
        gradient = np.array([1.0, 0.0])
        hessian = np.diag([0.0, 2.0])

        current = t_factors(gradient, hessian, alpha3, alpha4)
        assert current.t3 == pytest.approx(3.0)
        assert current.t5 == pytest.approx(-4.0)
        assert current.factor == pytest.approx(0.5)

        prior = t_factors(gradient, hessian, alpha3, alpha4, prior_sign=True)
        assert prior.t5 == pytest.approx(12.0)
        assert prior.factor == pytest.approx(4.5)
        assert prior.prior_sign

    def test_matches_coverage_polynomial(self):
        """−a1 from sample moments equals the t-factor constant for quadratic θ"""
        rng = np.random.default_rng(54)
        spec = make_divergence("reverse-kl")
        for _ in range(50):
            d = int(rng.integers(1, 4))
            n = int(rng.integers(8, 40))
            sample = Sample(rng.gamma(2.0, 1.0, (n, d)) @ rng.normal(size=(d, d)) + rng.normal(size=d))
            A = rng.normal(size=(d, d))
            fn = quadratic(rng.normal(size=d), A + A.T)
            a1, _, _ = a_coefficients(spec, estimate_moments(smooth_model(sample, fn), sample))
            std = standardize_smooth(sample, fn)
            factor = t_factors(std.gradient, std.hessian, std.alpha3, std.alpha4).factor
            assert -a1 == pytest.approx(factor, rel=1e-9, abs=1e-9)

    def test_zero_gradient(self):
        """θ with no first-order term is refused"""
        with pytest.raises(DegenerateVariance):
            t_factors(np.zeros(2), np.eye(2), np.zeros((2, 2, 2)), np.zeros((2, 2, 2, 2)))

    def test_singular_whitening(self):
        """Collinear columns cannot be whitened"""
        x = np.linspace(0.0, 1.0, 10)
        fn = quadratic([1.0, 0.0], np.zeros((2, 2)))
        with pytest.raises(SingularWhitening):
            standardize_smooth(Sample(np.column_stack([x, 2 * x])), fn)


class TestSelectQ:
    """Rule dispatch"""

    @pytest.fixture
    def spec(self):
        """Bartlett-correctable divergence"""
        return make_divergence("reverse-kl")

    @pytest.fixture
    def normal_moments(self):
        """Moments of the mean under a standard normal"""
        return MomentSet(kappa2=1.0, gamma=0.0, mu4=3.0)

    def test_exact(self, spec):
        """Plain χ² calibration"""
        ball = select_q(BallSizeRule(kind="exact", nominal=0.95), spec, None, 10)
        assert ball.q == pytest.approx(3.841458820694124)
        assert ball.provenance == "chi-square"

    def test_estimated_needs_moments(self, spec, normal_moments):
        """bartlett-estimated reads sample moments"""
        rule = BallSizeRule(kind="bartlett-estimated", nominal=0.9)
        with pytest.raises(ConfigError):
            select_q(rule, spec, None, 10)
        ball = select_q(rule, spec, normal_moments, 10)
        assert ball.provenance == "sample moments"
        assert ball.q > ball.q_exact

    def test_theoretical_uses_oracle(self, spec, normal_moments):
        """bartlett-theoretical ignores the sample moments passed in"""
        rule = BallSizeRule(kind="bartlett-theoretical", nominal=0.9, oracle_moments=normal_moments)
        ball = select_q(rule, spec, MomentSet(kappa2=5.0, mu4=1.0), 10)
        assert ball.provenance == "oracle moments"
        assert ball.q == corrected_q(0.9, spec, normal_moments, 10)

    def test_dicc(self, spec):
        """q = q_exact (1 + factor/n)"""
        factor = TFactors(t1=0.0, t2=0.0, t3=3.0, t4=0.0, t5=-4.0, factor=0.5)
        rule = BallSizeRule(kind="bartlett-dicc", nominal=0.8, oracle_factor=factor)
        ball = select_q(rule, spec, None, 25)
        assert ball.q == pytest.approx(q_exact(0.8, spec) * (1 + 0.5 / 25))
        assert ball.provenance == "oracle t-factors (-2 sign)"

    def test_dicc_clamp(self, spec):
        """Strongly negative factors clamp"""
        factor = TFactors(t1=0.0, t2=0.0, t3=0.0, t4=0.0, t5=0.0, factor=-100.0)
        rule = BallSizeRule(kind="bartlett-dicc", nominal=0.8, oracle_factor=factor)
        ball = select_q(rule, spec, None, 10)
        assert ball.clamped and ball.q == pytest.approx(0.1 * ball.q_exact)

    def test_dicc_small_positive_size(self, spec):
        """Factors that shrink q without crossing zero are not clamped"""
        factor = TFactors(t1=0.0, t2=0.0, t3=0.0, t4=0.0, t5=0.0, factor=-9.5)
        rule = BallSizeRule(kind="bartlett-dicc", nominal=0.8, oracle_factor=factor)
        ball = select_q(rule, spec, None, 10)
        assert not ball.clamped
        assert ball.q == pytest.approx(0.05 * ball.q_exact, rel=1e-12)

    def test_rule_validation(self, normal_moments):
        """Oracle inputs are required exactly where used"""
        with pytest.raises(ValidationError):
            BallSizeRule(kind="bartlett-theoretical", nominal=0.9)
        with pytest.raises(ValidationError):
            BallSizeRule(kind="exact", nominal=0.9, oracle_moments=normal_moments)
        with pytest.raises(ValidationError):
            BallSizeRule(kind="bartlett-dicc", nominal=0.9)
        with pytest.raises(ValidationError):
            BallSizeRule(kind="exact", nominal=1.0)


class TestConfidenceInterval:
    """End-to-end intervals"""

    @pytest.fixture
    def data(self):
        """Gamma sample with the mean model"""
        sample = Sample(np.random.default_rng(55).gamma(2.0, 1.0, 30))
        return sample, build_model("smooth:identity", sample)

    def test_exact_chi2_mean(self, data):
        """Linear model under chi2 gives ψ̂ ± √(qκ/(2n))"""
        sample, model = data
        spec = make_divergence("chi2")
        result = confidence_interval(model, sample, spec, BallSizeRule(kind="exact", nominal=0.95))
        kappa2 = float(np.mean(model.if1**2))
        half = math.sqrt(result.q_used * kappa2 / 60.0)
        assert result.lower == pytest.approx(model.psi_hat - half, abs=1e-9)
        assert result.upper == pytest.approx(model.psi_hat + half, abs=1e-9)
        assert result.method == "exact" and result.solver == "exact"
        assert result.warnings == []

    def test_expansion_solver(self, data):
        """Expansion solver agrees with the exact one for the linear chi2 case"""
        sample, model = data
        spec = make_divergence("chi2")
        rule = BallSizeRule(kind="exact", nominal=0.9)
        exact = confidence_interval(model, sample, spec, rule)
        approx = confidence_interval(model, sample, spec, rule, solver="expansion")
        assert approx.lower == pytest.approx(exact.lower, abs=1e-9)
        assert approx.upper == pytest.approx(exact.upper, abs=1e-9)

    def test_bartlett_widens(self, data):
        """Sample-moment correction widens the reverse-kl interval for a kurtotic sample"""
        sample, model = data
        spec = make_divergence("reverse-kl")
        plain = confidence_interval(model, sample, spec, BallSizeRule(kind="exact", nominal=0.9))
        corrected = confidence_interval(model, sample, spec, BallSizeRule(kind="bartlett-estimated", nominal=0.9))
        assert corrected.provenance == "sample moments"
        assert corrected.q_used > plain.q_used
        assert corrected.lower < plain.lower and corrected.upper > plain.upper
        assert corrected.lower <= model.psi_hat <= corrected.upper

    def test_result_order_validated(self):
        """upper < lower is rejected"""
        with pytest.raises(ValidationError):
            CIResult(
                lower=1.0,
                upper=0.0,
                psi_hat=0.5,
                q_used=1.0,
                method="exact",
                solver="exact",
                nominal=0.9,
                n=10,
                provenance="chi-square",
            )


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
