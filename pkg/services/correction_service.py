"""
Ball Size Correction Service
Coverage polynomial A(x), exact and Bartlett-corrected ball sizes, and the interval pipeline
"""

import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.special import ndtri

from config.settings import settings
from models.divergence import DivergenceSpec
from models.expansion import expansion_coefficients, expansion_interval
from models.influence import InfluenceModel, Sample
from models.moments import CoverageMoments, MomentSet, estimate_moments
from models.registry import SmoothFunction
from services.dro_service import DroSolver, default_solver
from utils.errors import ConfigError, DegenerateVariance, DomainError, SingularWhitening

RuleKind = Literal["exact", "bartlett-estimated", "bartlett-theoretical", "bartlett-dicc"]
SolverKind = Literal["exact", "expansion"]

METHOD_ALIASES = {
    "el": "exact",
    "eb": "bartlett-estimated",
    "tb": "bartlett-theoretical",
    "tb2": "bartlett-dicc",
}


# ==================== SCHEMAS ====================

class TFactors(BaseModel):
    """Smooth-model t-factors and the resulting constant −A(x)/x"""

    t1: float
    t2: float
    t3: float
    t4: float
    t5: float
    factor: float
    prior_sign: bool = False


class BallSizeRule(BaseModel):
    kind: RuleKind
    nominal: float = Field(..., gt=0, lt=1)
    oracle_moments: Optional[MomentSet] = None
    oracle_factor: Optional[TFactors] = None

    @model_validator(mode="after")
    def check_oracle_inputs(self):
        if (self.kind == "bartlett-theoretical") != (self.oracle_moments is not None):
            raise ValueError("oracle_moments is required exactly for bartlett-theoretical")
        if (self.kind == "bartlett-dicc") != (self.oracle_factor is not None):
            raise ValueError("oracle_factor is required exactly for bartlett-dicc")
        return self


class BallSize(BaseModel):
    q: float = Field(..., gt=0)
    q_exact: float
    provenance: str
    clamped: bool = False


class CIResult(BaseModel):
    lower: float
    upper: float
    psi_hat: float
    q_used: float = Field(..., gt=0)
    method: RuleKind
    solver: SolverKind
    nominal: float
    n: int
    provenance: str
    warnings: List[str] = Field(default_factory=list)

    @field_validator("upper")
    @classmethod
    def ordered(cls, upper, info):
        lower = info.data.get("lower")
        if lower is not None and upper < lower:
            raise ValueError("upper end below lower end")
        return upper


# ==================== QUANTILES ====================

def chi2_quantile_1df(nominal: float) -> float:
    """q with P(χ²₁ <= q) = nominal, as the square of a normal quantile"""
    if not 0.0 < nominal < 1.0:
        raise DomainError(f"nominal level must lie in (0, 1), got {nominal}")
    return float(ndtri(0.5 + 0.5 * nominal)) ** 2


def q_exact(nominal: float, spec: DivergenceSpec) -> float:
    return spec.d2_at_1 * chi2_quantile_1df(nominal)


# ==================== COVERAGE POLYNOMIAL ====================

def a_coefficients(spec: DivergenceSpec, moments: CoverageMoments) -> Tuple[float, float, float]:
    """
    Coefficients (a1, a3, a5) of A(x) = a1 x + a3 x³ + a5 x⁵

    Reads first and second order moments only.
    """
    d2, d3, d4 = spec.d2_at_1, spec.d3_at_1, spec.d4_at_1
    k = moments.kappa2
    if k <= 0:
        raise DegenerateVariance("coverage polynomial needs kappa2 > 0")
    g, mu4 = moments.gamma, moments.mu4
    mu2a, mu2b, mu2c = moments.mu2a, moments.mu2b, moments.mu2c
    mu2d, mu22, mu12d = moments.mu2d, moments.mu22, moments.mu12d
    s = 2.0 * d2 + d3

    a5 = -(s**2) * g**2 / (36.0 * d2**2 * k**3)
    a3 = -(
        4.0 * (d2 + d3) * s * g**2
        + 3.0 * (-2.0 * d2**2 - 4.0 * d2 * d3 - 3.0 * d3**2 + d2 * d4) * k * mu4
        + 9.0 * s**2 * k**3
        + 6.0 * d2 * s * g * mu2c
        - 6.0 * d2 * s * g * k * mu2d
    ) / (36.0 * d2**2 * k**3)
    a1 = -(
        -12.0 * g**2
        + 18.0 * k * mu4
        + 36.0 * k * (mu2a + 2.0 * mu2b)
        - 36.0 * g * mu2c
        - 9.0 * mu2c**2
        - 18.0 * k * mu2c * mu2d
        + 9.0 * k**2 * (-2.0 * mu22 + mu2d**2 - 4.0 * mu12d)
    ) / (36.0 * k**3)
    return a1, a3, a5


def a_eval(x: float, spec: DivergenceSpec, moments: CoverageMoments) -> float:
    a1, a3, a5 = a_coefficients(spec, moments)
    x2 = x * x
    return x * (a1 + x2 * (a3 + x2 * a5))


def _coverage_view(moments: CoverageMoments) -> CoverageMoments:
    if isinstance(moments, MomentSet):
        return moments.coverage_moments()
    return moments


def corrected_ball(nominal: float, spec: DivergenceSpec, moments: CoverageMoments, n: int) -> BallSize:
    """Bartlett-corrected ball size with the clamp flag"""
    if n < 2:
        raise ValueError("corrected ball size needs n >= 2")
    moments = _coverage_view(moments)
    chi2 = chi2_quantile_1df(nominal)
    base = spec.d2_at_1 * chi2
    root = math.sqrt(chi2)
    q = base * (1.0 - a_eval(root, spec, moments) / (n * root))
    return _clamp(q, base, "bartlett")


def _clamp(q: float, base: float, provenance: str) -> BallSize:
    """A non-positive corrected size is replaced by CLAMP_FLOOR_FRACTION x q_exact"""
    floor = settings.CLAMP_FLOOR_FRACTION * base
    if q <= 0.0:
        logger.warning(f"corrected ball size {q:.6g} clamped to {floor:.6g}")
        return BallSize(q=floor, q_exact=base, provenance=provenance, clamped=True)
    return BallSize(q=q, q_exact=base, provenance=provenance)


def corrected_q(nominal: float, spec: DivergenceSpec, moments: CoverageMoments, n: int) -> float:
    return corrected_ball(nominal, spec, moments, n).q


# ==================== SMOOTH FUNCTION MODELS ====================

@dataclass(frozen=True)
class StandardizedSmoothModel:
    """Derivatives of θ(u) = f(μ + C u) and standardized moments of U = C⁻¹(X − μ)"""

    gradient: np.ndarray
    hessian: np.ndarray
    alpha3: np.ndarray
    alpha4: np.ndarray


def standardize_smooth(sample: Sample, fn: SmoothFunction) -> StandardizedSmoothModel:
    """
    Whiten a sample by the Cholesky factor of its covariance

    Raises:
        SingularWhitening: if the covariance is rank-deficient
    """
    rows = sample.rows
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / sample.n
    tol = settings.WHITENING_RANK_TOL * max(float(np.trace(cov)), np.finfo(float).tiny)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularWhitening("covariance is not positive definite")
    if np.min(np.diag(chol)) ** 2 <= tol:
        raise SingularWhitening("covariance is rank-deficient")

    u = np.linalg.solve(chol, centered.T).T
    grad = chol.T @ np.asarray(fn.gradient(mean), dtype=float).reshape(sample.d)
    hess = chol.T @ np.asarray(fn.hessian(mean), dtype=float).reshape(sample.d, sample.d) @ chol
    alpha3 = np.einsum("ni,nj,nk->ijk", u, u, u) / sample.n
    alpha4 = np.einsum("ni,nj,nk,nl->ijkl", u, u, u, u) / sample.n
    return StandardizedSmoothModel(gradient=grad, hessian=hess, alpha3=alpha3, alpha4=alpha4)


def t_factors(
    theta_grad: np.ndarray,
    theta_hess: np.ndarray,
    alpha3: np.ndarray,
    alpha4: np.ndarray,
    prior_sign: bool = False,
) -> TFactors:
    """
    Smooth-model correction factor from standardized derivatives and moments

    Args:
        theta_grad: Gradient of θ at the standardized mean
        theta_hess: Hessian of θ at the standardized mean
        alpha3: Third standardized moments α^{jkl}
        alpha4: Fourth standardized moments α^{jklm}
        prior_sign: Use +2 instead of −2 in t5 (the older published variant)

    Returns:
        TFactors with factor = (5/3)t1 − 2t2 + t3/2 − t4 + t5/4
    """
    theta = np.asarray(theta_grad, dtype=float)
    hess = np.asarray(theta_hess, dtype=float)
    norm2 = float(theta @ theta)
    if norm2 <= 0:
        raise DegenerateVariance("θ has zero gradient at the mean")

    Q = 1.0 / norm2
    M = Q * np.outer(theta, theta)
    N = Q * theta
    P = np.eye(theta.size) - M

    t1 = float(np.einsum("jkl,mno,jm,kn,lo->", alpha3, alpha3, M, M, M))
    t2 = float(np.einsum("jkl,mno,jk,lm,no->", alpha3, alpha3, M, M, M))
    t3 = float(np.einsum("jklm,jk,lm->", alpha4, M, M))
    t4 = float(np.einsum("jkl,j,mn,mk,nl->", alpha3, N, hess, P, P))
    trace_term = float(np.einsum("jk,lm,jk,lm->", hess, hess, P, P))
    cross_term = float(np.einsum("jk,lm,jl,km->", hess, hess, P, P))
    t5 = Q * (trace_term + (2.0 if prior_sign else -2.0) * cross_term)

    factor = 5.0 / 3.0 * t1 - 2.0 * t2 + 0.5 * t3 - t4 + 0.25 * t5
    return TFactors(t1=t1, t2=t2, t3=t3, t4=t4, t5=t5, factor=factor, prior_sign=prior_sign)


# ==================== RULE DISPATCH ====================

def select_q(
    rule: BallSizeRule,
    spec: DivergenceSpec,
    moments: Optional[CoverageMoments],
    n: int,
) -> BallSize:
    """
    Ball size for a rule

    Args:
        rule: Method and nominal level
        spec: Divergence of the ball
        moments: Sample moments, used by bartlett-estimated only
        n: Sample size

    Returns:
        BallSize with provenance naming the moments that fed the correction
    """
    if rule.kind == "exact":
        base = q_exact(rule.nominal, spec)
        return BallSize(q=base, q_exact=base, provenance="chi-square")

    if rule.kind == "bartlett-estimated":
        if moments is None:
            raise ConfigError("bartlett-estimated needs sample moments")
        ball = corrected_ball(rule.nominal, spec, moments, n)
        return ball.model_copy(update={"provenance": "sample moments"})

    if rule.kind == "bartlett-theoretical":
        ball = corrected_ball(rule.nominal, spec, rule.oracle_moments, n)
        return ball.model_copy(update={"provenance": "oracle moments"})

    base = q_exact(rule.nominal, spec)
    q = base * (1.0 + rule.oracle_factor.factor / n)
    sign = "+2" if rule.oracle_factor.prior_sign else "-2"
    return _clamp(q, base, f"oracle t-factors ({sign} sign)")


def confidence_interval(
    model: InfluenceModel,
    sample: Sample,
    spec: DivergenceSpec,
    rule: BallSizeRule,
    solver: SolverKind = "exact",
    moments: Optional[MomentSet] = None,
    dro_solver: Optional[DroSolver] = None,
) -> CIResult:
    """
    End-to-end interval: select q, then solve both DRO directions

    Args:
        model: Influence model of the sample
        sample: Observations
        spec: Divergence of the ball
        rule: Ball size rule
        solver: "exact" (KKT solve) or "expansion" (three-term expansion)
        moments: Precomputed sample moments, estimated when needed and absent

    Returns:
        CIResult
    """
    n = model.n
    if moments is None and (rule.kind == "bartlett-estimated" or solver == "expansion"):
        moments = estimate_moments(model, sample)

    ball = select_q(rule, spec, moments, n)
    warnings = []
    if ball.clamped:
        warnings.append(f"ball size clamped to {settings.CLAMP_FLOOR_FRACTION:g} x chi-square value")

    if solver == "exact":
        dro_solver = dro_solver or default_solver
        lower = dro_solver.solve(model, sample, spec, ball.q, "min").objective
        upper = dro_solver.solve(model, sample, spec, ball.q, "max").objective
    else:
        coeffs = expansion_coefficients(moments, spec)
        lower, upper = expansion_interval(model.psi_hat, coeffs, spec, ball.q, n)
        if upper < lower:
            warnings.append("expansion interval inverted; ends swapped")
            lower, upper = upper, lower

    if not lower <= model.psi_hat <= upper:
        warnings.append("interval does not contain the plug-in value")
        logger.warning(f"{model.name}: [{lower:.10g}, {upper:.10g}] excludes psi_hat = {model.psi_hat:.10g}")

    return CIResult(
        lower=lower,
        upper=upper,
        psi_hat=model.psi_hat,
        q_used=ball.q,
        method=rule.kind,
        solver=solver,
        nominal=rule.nominal,
        n=n,
        provenance=ball.provenance,
        warnings=warnings,
    )
