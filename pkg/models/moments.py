"""
Influence Function Moments
The scalar moments that drive the stochastic expansion and the coverage polynomial
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.settings import settings
from models.influence import InfluenceModel, Sample
from utils.errors import DegenerateVariance

SECOND_ORDER_FIELDS = ("mu2a", "mu2b", "mu2c", "mu2d", "mu22", "mu12d")


class CoverageMoments(BaseModel):
    """
    Moments built from first and second order influence functions only

    This is everything the ball-size correction is allowed to read.
    """

    model_config = ConfigDict(frozen=True)

    kappa2: float = Field(..., ge=0, description="Ê IF1²")
    gamma: float = Field(0.0, description="Ê IF1³")
    mu4: float = Field(0.0, description="Ê IF1⁴")
    mu2a: float = Field(0.0, description="Ê IF1(X) IF1(Z) IF2(X,Y) IF2(Y,Z)")
    mu2b: float = Field(0.0, description="Ê IF1(X) IF1(Y)² IF2(X,Y)")
    mu2c: float = Field(0.0, description="Ê IF1(X) IF1(Y) IF2(X,Y)")
    mu2d: float = Field(0.0, description="Ê IF2(X,X)")
    mu22: float = Field(0.0, ge=0, description="Ê IF2(X,Y)²")
    mu12d: float = Field(0.0, description="Ê IF1(X) IF2(X,X)")


class MomentSet(CoverageMoments):
    """CoverageMoments plus the third-order moment mu3c"""

    mu3c: float = Field(0.0, description="Ê IF1(X) IF1(Y) IF1(Z) IF3(X,Y,Z)")
    has_mu3c: bool = Field(True, description="False when the model has no third-order term")

    def coverage_moments(self) -> CoverageMoments:
        return CoverageMoments(**self.model_dump(include=set(CoverageMoments.model_fields)))

    def second_order_free(self) -> bool:
        return all(getattr(self, name) == 0.0 for name in SECOND_ORDER_FIELDS)


def _mean(values: np.ndarray) -> float:
    return math.fsum(values) / len(values)


def estimate_moments(model: InfluenceModel, sample: Sample, strict: bool = True) -> MomentSet:
    """
    Exact empirical moments of the influence functions

    Args:
        model: Canonical influence model
        sample: The sample the model was built from (sets the data scale)
        strict: Raise DegenerateVariance when kappa2 vanishes relative to the data scale

    Returns:
        MomentSet; mu3c is flagged absent for models without a third-order term
    """
    n = model.n
    if1 = model.if1
    kappa2 = _mean(if1**2)
    if strict and kappa2 < settings.DEGENERATE_VARIANCE_TOL * max(sample.scale2, np.finfo(float).tiny):
        raise DegenerateVariance(f"{model.name}: first-order influence has no variance (kappa2 = {kappa2:.3g})")

    if model.if2.is_zero:
        mu2a = mu2b = mu2c = mu2d = mu22 = mu12d = 0.0
    else:
        # v_j = (1/n) Σ_i IF1(i) IF2(i, j)
        v = model.if2.matvec(if1) / n
        mu2a = _mean(v**2)
        mu2c = _mean(if1 * v)
        mu2b = math.fsum(if1 * model.if2.matvec(if1**2)) / n**2
        diagonal = model.if2.diagonal()
        mu2d = _mean(diagonal)
        mu12d = _mean(if1 * diagonal)
        mu22 = max(0.0, model.if2.squared_sum() / n**2)

    if model.if3 is None:
        mu3c, has_mu3c = 0.0, False
    else:
        mu3c = 0.0 if model.if3.is_zero else model.if3.total(if1) / n**3
        has_mu3c = True

    return MomentSet(
        kappa2=kappa2,
        gamma=_mean(if1**3),
        mu4=_mean(if1**4),
        mu2a=mu2a,
        mu2b=mu2b,
        mu2c=mu2c,
        mu2d=mu2d,
        mu22=mu22,
        mu12d=mu12d,
        mu3c=mu3c,
        has_mu3c=has_mu3c,
    )
