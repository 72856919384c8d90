"""Models module initialization"""

from .divergence import DivergenceSpec, make_divergence, parse_divergence, is_bartlett_correctable
from .influence import InfluenceModel, Sample, canonicalize
from .registry import build_model, parse_model_spec
from .moments import CoverageMoments, MomentSet, estimate_moments
from .expansion import ExpansionCoefficients, expansion_coefficients, dro_value_expansion

__all__ = [
    "DivergenceSpec",
    "make_divergence",
    "parse_divergence",
    "is_bartlett_correctable",
    "InfluenceModel",
    "Sample",
    "canonicalize",
    "build_model",
    "parse_model_spec",
    "CoverageMoments",
    "MomentSet",
    "estimate_moments",
    "ExpansionCoefficients",
    "expansion_coefficients",
    "dro_value_expansion",
]
