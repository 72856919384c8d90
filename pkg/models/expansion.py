"""
Stochastic Expansion of DRO Optimal Values
Three-term expansion of ψ_max and ψ_min in powers of (q / (n φ''(1)))^(1/2)
"""

import math
from dataclasses import dataclass
from typing import Literal, Tuple

from loguru import logger

from models.divergence import DivergenceSpec
from models.moments import MomentSet
from utils.errors import DegenerateVariance, MissingThirdOrderMoment

Direction = Literal["max", "min"]


@dataclass(frozen=True)
class ExpansionCoefficients:
    c1: float
    c2: float
    c3: float


def expansion_coefficients(moments: MomentSet, spec: DivergenceSpec, strict: bool = False) -> ExpansionCoefficients:
    """
    Coefficients of the optimal-value expansion

    Args:
        moments: Influence moments at the empirical measure
        spec: Divergence of the ball
        strict: Refuse models whose third-order moment is absent instead of
            treating it as zero

    Returns:
        ExpansionCoefficients (c1, c2, c3)
    """
    if moments.kappa2 <= 0:
        raise DegenerateVariance("expansion needs kappa2 > 0")
    if strict and not moments.has_mu3c:
        raise MissingThirdOrderMoment("model has no third-order influence function")

    d2, d3, d4 = spec.d2_at_1, spec.d3_at_1, spec.d4_at_1
    k = moments.kappa2
    g = moments.gamma
    mu3c = moments.mu3c if moments.has_mu3c else 0.0

    c1 = math.sqrt(k)
    c2 = (-d3 * g / (6.0 * d2) + moments.mu2c / 2.0) / k
    bracket = (
        mu3c / 6.0
        - (d3 / (2.0 * d2)) * moments.mu2b
        + (d3 / (3.0 * k * d2)) * g * moments.mu2c
        + (d3**2 / (8.0 * d2**2) - d4 / (24.0 * d2)) * moments.mu4
        + moments.mu2a / 2.0
        - d3**2 * g**2 / (18.0 * d2**2 * k)
        - d3**2 * k**2 / (8.0 * d2**2)
        - moments.mu2c**2 / (2.0 * k)
    )
    c3 = bracket / k**1.5
    return ExpansionCoefficients(c1=c1, c2=c2, c3=c3)


def dro_value_expansion(
    direction: Direction,
    psi_hat: float,
    coeffs: ExpansionCoefficients,
    spec: DivergenceSpec,
    q: float,
    n: int,
) -> float:
    """ψ̂ + Σ_k n^(−k/2) (q/φ'')^(k/2) c_k, with the odd terms negated for min"""
    if direction not in ("max", "min"):
        raise ValueError(f"Unknown direction: {direction}")
    if q < 0:
        raise ValueError("ball size q must be nonnegative")
    s = math.sqrt(q / (n * spec.d2_at_1))
    sign = 1.0 if direction == "max" else -1.0
    return psi_hat + sign * coeffs.c1 * s + coeffs.c2 * s**2 + sign * coeffs.c3 * s**3


def expansion_interval(
    psi_hat: float,
    coeffs: ExpansionCoefficients,
    spec: DivergenceSpec,
    q: float,
    n: int,
) -> Tuple[float, float]:
    """Both ends of the expansion interval; warns when the cubic term inverts them"""
    lower = dro_value_expansion("min", psi_hat, coeffs, spec, q, n)
    upper = dro_value_expansion("max", psi_hat, coeffs, spec, q, n)
    if upper < lower:
        logger.warning(f"expansion interval inverted at q={q:.6g}, n={n}: c3 term dominates c1")
    return lower, upper
