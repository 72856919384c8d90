"""
Influence Function Models
Statistical functionals presented through canonical influence functions at the empirical measure
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from itertools import permutations
from typing import TYPE_CHECKING, Callable, Optional, Union

import numpy as np
from loguru import logger

from config.settings import settings
from utils.errors import DerivativeUnavailable, InvalidSample, MinimizerNotFound, SingularHessian

if TYPE_CHECKING:
    from models.registry import Kernel, Loss, SmoothFunction


@dataclass(frozen=True)
class Sample:
    """n observations of a d-dimensional vector; a 1-D input is one column"""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise InvalidSample(f"Sample rows must be a matrix, got {rows.ndim} dimensions")
        if rows.shape[0] < 2:
            raise InvalidSample(f"Sample needs at least 2 observations, got {rows.shape[0]}")
        if not np.all(np.isfinite(rows)):
            raise InvalidSample("Sample contains non-finite entries")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def scale2(self) -> float:
        """Mean squared entry, the data scale used by degeneracy checks"""
        return float(np.mean(self.rows**2))

    def __repr__(self) -> str:
        return f"<Sample n={self.n} d={self.d}>"


# ==================== SECOND-ORDER TERMS ====================

class PairTerm(ABC):
    """Symmetric n x n matrix IF2(X_i, X_j)"""

    n: int

    @abstractmethod
    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Σ_j IF2(i, j) v_j for every i"""

    @abstractmethod
    def diagonal(self) -> np.ndarray:
        pass

    @abstractmethod
    def squared_sum(self) -> float:
        """Σ_ij IF2(i, j)²"""

    @abstractmethod
    def dense(self) -> np.ndarray:
        pass

    @property
    def is_zero(self) -> bool:
        return False


class ZeroPairTerm(PairTerm):
    def __init__(self, n: int):
        self.n = n

    def matvec(self, v):
        return np.zeros(self.n)

    def diagonal(self):
        return np.zeros(self.n)

    def squared_sum(self):
        return 0.0

    def dense(self):
        return np.zeros((self.n, self.n))

    @property
    def is_zero(self):
        return True


class FactoredPairTerm(PairTerm):
    """IF2 = F C Fᵀ with an n x m factor F and a symmetric m x m core C"""

    def __init__(self, factors: np.ndarray, core: np.ndarray):
        self.factors = np.asarray(factors, dtype=float)
        self.core = np.asarray(core, dtype=float)
        self.n = self.factors.shape[0]

    def matvec(self, v):
        return self.factors @ (self.core @ (self.factors.T @ v))

    def diagonal(self):
        return np.einsum("ia,ab,ib->i", self.factors, self.core, self.factors)

    def squared_sum(self):
        gram = self.factors.T @ self.factors
        product = self.core @ gram
        return float(np.einsum("ab,ba->", product, product))

    def dense(self):
        return self.factors @ self.core @ self.factors.T


class DensePairTerm(PairTerm):
    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)
        self.n = self.matrix.shape[0]

    def matvec(self, v):
        return self.matrix @ v

    def diagonal(self):
        return np.diagonal(self.matrix).copy()

    def squared_sum(self):
        return float(np.sum(self.matrix**2))

    def dense(self):
        return self.matrix


# ==================== THIRD-ORDER TERMS ====================

class TripleTerm(ABC):
    """Symmetric n x n x n tensor IF3(X_i, X_j, X_k)"""

    n: int

    @abstractmethod
    def contract(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Σ_jk IF3(i, j, k) u_j v_k for every i"""

    @abstractmethod
    def matrix(self, u: np.ndarray) -> np.ndarray:
        """Σ_k IF3(i, j, k) u_k as an n x n matrix"""

    @abstractmethod
    def dense(self) -> np.ndarray:
        pass

    def total(self, u: np.ndarray) -> float:
        """Σ_ijk IF3(i, j, k) u_i u_j u_k"""
        return float(u @ self.contract(u, u))

    @property
    def is_zero(self) -> bool:
        return False


class ZeroTripleTerm(TripleTerm):
    def __init__(self, n: int):
        self.n = n

    def contract(self, u, v):
        return np.zeros(self.n)

    def matrix(self, u):
        return np.zeros((self.n, self.n))

    def dense(self):
        return np.zeros((self.n, self.n, self.n))

    def total(self, u):
        return 0.0

    @property
    def is_zero(self):
        return True


class FactoredTripleTerm(TripleTerm):
    """IF3(i, j, k) = Σ_abc T_abc F_ia F_jb F_kc"""

    def __init__(self, factors: np.ndarray, core: np.ndarray):
        self.factors = np.asarray(factors, dtype=float)
        self.core = np.asarray(core, dtype=float)
        self.n = self.factors.shape[0]

    def contract(self, u, v):
        a = self.factors.T @ u
        b = self.factors.T @ v
        return self.factors @ np.einsum("abc,b,c->a", self.core, a, b)

    def matrix(self, u):
        core = np.einsum("abc,c->ab", self.core, self.factors.T @ u)
        return self.factors @ core @ self.factors.T

    def dense(self):
        f = self.factors
        return np.einsum("ia,jb,kc,abc->ijk", f, f, f, self.core)


# ==================== MODEL ====================

@dataclass(frozen=True)
class InfluenceModel:
    """
    A functional through its plug-in value and canonical influence functions

    if3 is None when the model class provides no third-order term.
    """

    psi_hat: float
    if1: np.ndarray
    if2: PairTerm
    if3: Optional[TripleTerm]
    kind: str
    name: str
    minimizer: Optional[float] = None

    @property
    def n(self) -> int:
        return self.if1.shape[0]

    @property
    def has_if3(self) -> bool:
        return self.if3 is not None

    def truncated_value(self, L: np.ndarray) -> float:
        """ψ(P̂L) through the third-order influence expansion"""
        n = self.n
        delta = np.asarray(L, dtype=float) - 1.0
        value = self.psi_hat + np.mean(self.if1 * delta)
        value += float(delta @ self.if2.matvec(delta)) / (2.0 * n**2)
        if self.if3 is not None:
            value += self.if3.total(delta) / (6.0 * n**3)
        return float(value)

    def gradient(self, L: np.ndarray) -> np.ndarray:
        """D_i = n ∂ψ(P̂L)/∂L_i of the truncated expansion"""
        n = self.n
        delta = np.asarray(L, dtype=float) - 1.0
        grad = self.if1 + self.if2.matvec(delta) / n
        if self.if3 is not None:
            grad = grad + self.if3.contract(delta, delta) / (2.0 * n**2)
        return grad

    def jacobian(self, L: np.ndarray) -> np.ndarray:
        """∂D_i/∂L_j of the truncated expansion, a symmetric n x n matrix"""
        n = self.n
        jac = np.array(self.if2.dense(), dtype=float) / n
        if self.if3 is not None and not self.if3.is_zero:
            delta = np.asarray(L, dtype=float) - 1.0
            jac += self.if3.matrix(delta) / n**2
        return jac

    def __repr__(self) -> str:
        return f"<InfluenceModel {self.kind}:{self.name} n={self.n} psi_hat={self.psi_hat:.6g}>"


# ==================== CANONICALIZATION ====================

def canonicalize(raw: Union[np.ndarray, Callable[..., np.ndarray]], order: int, n: Optional[int] = None) -> np.ndarray:
    """
    Symmetrize over slot permutations, then remove empirical marginal means

    Args:
        raw: Array with `order` axes of length n, or a callable taking `order`
            broadcastable index arrays
        order: Number of slots
        n: Sample size, required when raw is a callable

    Returns:
        Canonical array: permutation invariant with zero mean along every axis
    """
    if callable(raw):
        if n is None:
            raise ValueError("canonicalize needs n when raw is a callable")
        raw = np.asarray(raw(*np.ix_(*[np.arange(n)] * order)), dtype=float)
    else:
        raw = np.asarray(raw, dtype=float)

    if raw.ndim != order:
        raise ValueError(f"expected {order} axes, got {raw.ndim}")

    if order == 1:
        return raw - raw.mean()

    axes = list(permutations(range(order)))
    out = np.zeros_like(raw)
    for perm in axes:
        out += np.transpose(raw, perm)
    out /= len(axes)

    for axis in range(order):
        out -= out.mean(axis=axis, keepdims=True)
    return out


# ==================== MODEL CLASSES ====================

def smooth_model(sample: Sample, fn: "SmoothFunction") -> InfluenceModel:
    """
    Function-of-means model ψ(P) = f(E_P X)

    Args:
        sample: Observations
        fn: Registered smooth function with derivatives up to order 3

    Returns:
        InfluenceModel with factored second and third order terms
    """
    for order, callback in (("gradient", fn.gradient), ("Hessian", fn.hessian), ("third derivative", fn.third)):
        if callback is None:
            raise DerivativeUnavailable(f"{fn.name} provides no {order}")
    if fn.dim != sample.d:
        raise InvalidSample(f"{fn.name} expects {fn.dim} columns, sample has {sample.d}")

    mean = sample.rows.mean(axis=0)
    centered = sample.rows - mean
    grad = np.asarray(fn.gradient(mean), dtype=float).reshape(sample.d)
    hess = np.asarray(fn.hessian(mean), dtype=float).reshape(sample.d, sample.d)
    third = np.asarray(fn.third(mean), dtype=float).reshape(sample.d, sample.d, sample.d)

    if2 = ZeroPairTerm(sample.n) if not np.any(hess) else FactoredPairTerm(centered, hess)
    if3 = ZeroTripleTerm(sample.n) if not np.any(third) else FactoredTripleTerm(centered, third)

    return InfluenceModel(
        psi_hat=float(fn.value(mean)),
        if1=centered @ grad,
        if2=if2,
        if3=if3,
        kind="smooth",
        name=fn.name,
    )


def kernel_matrix(sample: Sample, kernel: "Kernel", block_rows: Optional[int] = None) -> np.ndarray:
    """h(X_i, X_j) for all pairs, evaluated in row blocks"""
    if kernel.dim != sample.d:
        raise InvalidSample(f"{kernel.name} expects {kernel.dim} columns, sample has {sample.d}")
    block_rows = block_rows or settings.KERNEL_BLOCK_ROWS
    rows = sample.rows
    out = np.empty((sample.n, sample.n))
    for start in range(0, sample.n, block_rows):
        stop = min(start + block_rows, sample.n)
        out[start:stop] = kernel.fn(rows[start:stop, None, :], rows[None, :, :])
    return out


def vstat_model(sample: Sample, kernel: "Kernel") -> InfluenceModel:
    """
    Degree-2 V-statistic ψ(P) = E h(X, Y)

    The kernel is symmetrized by averaging, so asymmetric kernels are accepted.
    """
    raw = kernel_matrix(sample, kernel)
    psi_hat = float(np.mean(raw))
    row_means = 0.5 * (raw.mean(axis=1) + raw.mean(axis=0))

    canonical = canonicalize(raw, 2)
    del raw
    canonical *= 2.0

    return InfluenceModel(
        psi_hat=psi_hat,
        if1=2.0 * (row_means - psi_hat),
        if2=DensePairTerm(canonical),
        if3=ZeroTripleTerm(sample.n),
        kind="vstat",
        name=kernel.name,
    )


def _find_minimizer(loss: "Loss", rows: np.ndarray) -> float:
    """Newton on Ê ℓ_x = 0, safeguarded by bisection on a doubling bracket"""

    def slope(x: float):
        grads = loss.grad(x, rows)
        return float(np.mean(grads)), float(np.mean(np.abs(grads)))

    def curvature(x: float) -> float:
        return float(np.mean(loss.hess(x, rows)))

    def converged(value: float, scale: float) -> bool:
        return abs(value) <= settings.MINIMIZER_TOL * max(1.0, scale)

    max_iter = settings.MINIMIZER_MAX_ITER
    x = float(loss.start(rows))
    g, scale = slope(x)
    if converged(g, scale):
        return x

    # bracket [lo, hi] with slope(lo) < 0 < slope(hi)
    step = max(1.0, abs(x))
    lo = hi = x
    for _ in range(max_iter):
        trial = x - step if g > 0 else x + step
        g_trial, _ = slope(trial)
        if (g > 0 and g_trial < 0) or (g < 0 and g_trial > 0):
            lo, hi = (trial, x) if g > 0 else (x, trial)
            break
        if g_trial == 0.0:
            return trial
        step *= 2.0
    else:
        raise MinimizerNotFound(f"{loss.name}: no sign change of Ê ℓ_x found")

    for _ in range(max_iter):
        g, scale = slope(x)
        if converged(g, scale):
            return x
        if g > 0:
            hi = x
        else:
            lo = x
        h = curvature(x)
        candidate = x - g / h if h > 0 else np.nan
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if candidate == x:
            break
        x = candidate

    raise MinimizerNotFound(f"{loss.name}: |Ê ℓ_x| did not fall below {settings.MINIMIZER_TOL:g}")


def optim_model(sample: Sample, loss: "Loss") -> InfluenceModel:
    """
    Optimal value ψ(P) = min_x E_P ℓ(x, ξ) for a scalar decision x

    Returns:
        InfluenceModel with a rank-one second order term and no third order term
    """
    if loss.dim != sample.d:
        raise InvalidSample(f"{loss.name} expects {loss.dim} columns, sample has {sample.d}")

    rows = sample.rows
    x_star = _find_minimizer(loss, rows)
    curvature = float(np.mean(loss.hess(x_star, rows)))
    if curvature <= settings.SINGULAR_HESSIAN_TOL:
        raise SingularHessian(f"{loss.name}: Ê ℓ_xx = {curvature:.3g} at x* = {x_star:.6g}")

    losses = np.asarray(loss.value(x_star, rows), dtype=float)
    psi_hat = float(np.mean(losses))
    slopes = np.asarray(loss.grad(x_star, rows), dtype=float)
    logger.debug(f"{loss.name}: x* = {x_star:.10g}, psi_hat = {psi_hat:.10g}")

    return InfluenceModel(
        psi_hat=psi_hat,
        if1=losses - psi_hat,
        if2=FactoredPairTerm(slopes[:, None], np.array([[-2.0 / curvature]])),
        if3=None,
        kind="optim",
        name=loss.name,
        minimizer=x_star,
    )
