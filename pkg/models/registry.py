"""
Model Registry
Named smooth functions, V-statistic kernels and losses, and the model-spec parser
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from models.influence import InfluenceModel, Sample, optim_model, smooth_model, vstat_model
from utils.errors import UnknownModel

MODEL_KINDS = ("smooth", "vstat", "optim")


@dataclass(frozen=True)
class SmoothFunction:
    """f: R^d -> R with derivatives at a point, each returned as a dense array"""

    name: str
    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]]
    third: Optional[Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Kernel:
    """h(x, y) broadcast over leading axes; the last axis holds the d coordinates"""

    name: str
    dim: int
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Loss:
    """ℓ(x, ξ) and its x-derivatives, vectorized over the rows of ξ"""

    name: str
    dim: int
    value: Callable[[float, np.ndarray], np.ndarray]
    grad: Callable[[float, np.ndarray], np.ndarray]
    hess: Callable[[float, np.ndarray], np.ndarray]
    start: Callable[[np.ndarray], float]


# ==================== SMOOTH FUNCTIONS ====================

SMOOTH_FUNCTIONS: Dict[str, SmoothFunction] = {
    "identity": SmoothFunction(
        name="identity",
        dim=1,
        value=lambda z: float(z[0]),
        gradient=lambda z: np.array([1.0]),
        hessian=lambda z: np.zeros((1, 1)),
        third=lambda z: np.zeros((1, 1, 1)),
    ),
    "z^2": SmoothFunction(
        name="z^2",
        dim=1,
        value=lambda z: float(z[0] ** 2),
        gradient=lambda z: np.array([2.0 * z[0]]),
        hessian=lambda z: np.array([[2.0]]),
        third=lambda z: np.zeros((1, 1, 1)),
    ),
    "x+y^2": SmoothFunction(
        name="x+y^2",
        dim=2,
        value=lambda z: float(z[0] + z[1] ** 2),
        gradient=lambda z: np.array([1.0, 2.0 * z[1]]),
        hessian=lambda z: np.array([[0.0, 0.0], [0.0, 2.0]]),
        third=lambda z: np.zeros((2, 2, 2)),
    ),
}


# ==================== KERNELS ====================

def _gamma_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    a, b = x[..., 0], y[..., 0]
    return np.minimum(12.0, (a - b) ** 2 + a + b)


def _sin_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sin(x[..., 0] ** 2 + y[..., 0])


def _product_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x[..., 0] * y[..., 0]


def _constant_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


KERNELS: Dict[str, Kernel] = {
    "gamma-kernel": Kernel("gamma-kernel", 1, _gamma_kernel),
    "sin-kernel": Kernel("sin-kernel", 1, _sin_kernel),
    "product": Kernel("product", 1, _product_kernel),
    "constant": Kernel("constant", 1, _constant_kernel),
}


# ==================== LOSSES ====================

def _lsq_value(x, rows):
    y, z = rows[:, 0], rows[:, 1]
    return (y - x * z) ** 2


def _lsq_grad(x, rows):
    y, z = rows[:, 0], rows[:, 1]
    return -2.0 * z * (y - x * z)


def _lsq_hess(x, rows):
    return 2.0 * rows[:, 1] ** 2


def _lsq_start(rows):
    # closed-form slope through the origin when it exists
    zz = float(np.sum(rows[:, 1] ** 2))
    return float(np.sum(rows[:, 0] * rows[:, 1]) / zz) if zz > 0 else 0.0


LOSSES: Dict[str, Loss] = {
    # ξ = (y, z): squared residual of a regression through the origin
    "lsq-loss": Loss("lsq-loss", 2, _lsq_value, _lsq_grad, _lsq_hess, _lsq_start),
    "sq-loss": Loss(
        "sq-loss",
        1,
        value=lambda x, rows: (x - rows[:, 0]) ** 2,
        grad=lambda x, rows: 2.0 * (x - rows[:, 0]),
        hess=lambda x, rows: np.full(rows.shape[0], 2.0),
        start=lambda rows: float(np.median(rows[:, 0])),
    ),
}


# ==================== MODEL SPECS ====================

def parse_model_spec(text: str) -> tuple:
    """Split `smooth:<name> | vstat:<name> | optim:<name>` and check the name exists"""
    kind, sep, name = text.strip().partition(":")
    if not sep or kind not in MODEL_KINDS:
        raise UnknownModel(f"Unknown model spec: {text!r} (expected smooth:, vstat: or optim:)")
    table = {"smooth": SMOOTH_FUNCTIONS, "vstat": KERNELS, "optim": LOSSES}[kind]
    if name not in table:
        raise UnknownModel(f"Unknown {kind} model: {name!r}; registered: {', '.join(sorted(table))}")
    return kind, name


def model_dimension(text: str) -> int:
    kind, name = parse_model_spec(text)
    return {"smooth": SMOOTH_FUNCTIONS, "vstat": KERNELS, "optim": LOSSES}[kind][name].dim


def build_model(text: str, sample: Sample) -> InfluenceModel:
    """
    Construct the InfluenceModel named by a model spec

    Args:
        text: Model spec, e.g. "vstat:gamma-kernel"
        sample: Observations

    Returns:
        InfluenceModel at the empirical measure of the sample
    """
    kind, name = parse_model_spec(text)
    if kind == "smooth":
        return smooth_model(sample, SMOOTH_FUNCTIONS[name])
    if kind == "vstat":
        return vstat_model(sample, KERNELS[name])
    return optim_model(sample, LOSSES[name])
