"""
Divergence Family
φ-divergences for the DRO ball with analytic derivative values at 1
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

from utils.errors import DegenerateCressieReadParameter, DomainError, UnknownDivergence

ArrayFn = Callable[[np.ndarray], np.ndarray]

DIVERGENCE_NAMES = ("kl", "reverse-kl", "chi2", "cressie-read")

CORRECTABLE_TOL = 1e-12


@dataclass(frozen=True)
class DivergenceSpec:
    """
    A φ-divergence with φ convex and φ(1) = φ'(1) = 0

    The callables accept scalars or numpy arrays. deriv1_inverse is defined on the
    open interval inverse_domain and raises DomainError outside it; shifted_inverse
    is the same map minus one, computed without cancellation near t = 0.
    """

    name: str
    eval: ArrayFn
    deriv1: ArrayFn
    deriv2: ArrayFn
    deriv1_inverse: ArrayFn
    shifted_inverse: ArrayFn
    d2_at_1: float
    d3_at_1: float
    d4_at_1: float
    inverse_domain: Tuple[float, float]
    lam: Optional[float] = None

    @property
    def label(self) -> str:
        if self.lam is None:
            return self.name
        return f"{self.name}:{self.lam:g}"

    def h(self, t):
        """h(t) = (φ')⁻¹(t) − 1"""
        return self.shifted_inverse(t)

    @property
    def h_prime_at_0(self) -> float:
        return 1.0 / self.d2_at_1

    def ratio(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """
        L = 1 + h(t) and dL/dt for t below the upper end of inverse_domain

        When φ'(0) is finite it is the lower end of inverse_domain, and every
        t at or below it maps to L = 0 with zero slope (the active side of L >= 0).
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, _ = self.inverse_domain
        free = t > lo
        L = np.zeros_like(t)
        slope = np.zeros_like(t)
        if np.any(free):
            L[free] = 1.0 + np.asarray(self.h(t[free]), dtype=float)
            positive = free & (L > 0)
            with np.errstate(divide="ignore", over="ignore"):
                slope[positive] = 1.0 / np.asarray(self.deriv2(L[positive]), dtype=float)
        return L, slope

    def __repr__(self) -> str:
        return f"<DivergenceSpec {self.label}: ({self.d2_at_1:g}, {self.d3_at_1:g}, {self.d4_at_1:g})>"


# ==================== DOMAIN GUARDS ====================

def _as_ratio(x, name: str) -> np.ndarray:
    values = np.asarray(x, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DomainError(f"{name}: likelihood ratio must be nonnegative", side=-1)
    return values


def _check_inverse_domain(t, domain: Tuple[float, float], name: str) -> np.ndarray:
    values = np.asarray(t, dtype=float)
    lo, hi = domain
    if np.any(values >= hi):
        raise DomainError(f"{name}: (φ')⁻¹ undefined at t >= {hi:g}", side=1)
    if np.any(values <= lo):
        raise DomainError(f"{name}: (φ')⁻¹ undefined at t <= {lo:g}", side=-1)
    return values


def _scalar_or_array(values: np.ndarray):
    return values.item() if values.ndim == 0 else values


# ==================== FAMILY MEMBERS ====================

def _reverse_kl() -> DivergenceSpec:
    domain = (-np.inf, 1.0)

    def evaluate(x):
        x = _as_ratio(x, "reverse-kl")
        if np.any(x == 0):
            raise DomainError("reverse-kl: φ(0) is infinite", side=-1)
        u = x - 1.0
        return _scalar_or_array(u - np.log1p(u))

    def deriv1(x):
        x = _as_ratio(x, "reverse-kl")
        return _scalar_or_array(1.0 - 1.0 / x)

    def deriv2(x):
        x = _as_ratio(x, "reverse-kl")
        return _scalar_or_array(1.0 / x**2)

    def inverse(t):
        t = _check_inverse_domain(t, domain, "reverse-kl")
        return _scalar_or_array(1.0 / (1.0 - t))

    def shifted(t):
        t = _check_inverse_domain(t, domain, "reverse-kl")
        return _scalar_or_array(t / (1.0 - t))

    return DivergenceSpec("reverse-kl", evaluate, deriv1, deriv2, inverse, shifted, 1.0, -2.0, 6.0, domain)


def _kl() -> DivergenceSpec:
    domain = (-np.inf, np.inf)

    def evaluate(x):
        x = _as_ratio(x, "kl")
        return _scalar_or_array(xlogy(x, x) - x + 1.0)

    def deriv1(x):
        x = _as_ratio(x, "kl")
        return _scalar_or_array(np.log(x))

    def deriv2(x):
        x = _as_ratio(x, "kl")
        return _scalar_or_array(1.0 / x)

    def inverse(t):
        t = _check_inverse_domain(t, domain, "kl")
        return _scalar_or_array(np.exp(t))

    def shifted(t):
        t = _check_inverse_domain(t, domain, "kl")
        return _scalar_or_array(np.expm1(t))

    return DivergenceSpec("kl", evaluate, deriv1, deriv2, inverse, shifted, 1.0, -1.0, 2.0, domain)


def _chi2() -> DivergenceSpec:
    # L > 0 requires t = 2(L - 1) > -2
    domain = (-2.0, np.inf)

    def evaluate(x):
        x = _as_ratio(x, "chi2")
        return _scalar_or_array((x - 1.0) ** 2)

    def deriv1(x):
        x = _as_ratio(x, "chi2")
        return _scalar_or_array(2.0 * (x - 1.0))

    def deriv2(x):
        x = _as_ratio(x, "chi2")
        return _scalar_or_array(np.full_like(x, 2.0))

    def inverse(t):
        t = _check_inverse_domain(t, domain, "chi2")
        return _scalar_or_array(1.0 + t / 2.0)

    def shifted(t):
        t = _check_inverse_domain(t, domain, "chi2")
        return _scalar_or_array(t / 2.0)

    return DivergenceSpec("chi2", evaluate, deriv1, deriv2, inverse, shifted, 2.0, 0.0, 0.0, domain)


def _cressie_read(lam: float) -> DivergenceSpec:
    lam = float(lam)
    if lam == 0.0 or lam == -1.0:
        raise DegenerateCressieReadParameter(
            f"cressie-read λ = {lam:g} is the {'kl' if lam == 0.0 else 'reverse-kl'} limit; use that name"
        )
    scale = lam * (lam + 1.0)
    # φ'(x) = (x^λ − 1)/λ ranges over (−1/λ, ∞) for λ > 0 and (−∞, −1/λ) for λ < 0
    domain = (-1.0 / lam, np.inf) if lam > 0 else (-np.inf, -1.0 / lam)

    def evaluate(x):
        x = _as_ratio(x, "cressie-read")
        if np.any(x == 0):
            if lam + 1.0 < 0:
                raise DomainError("cressie-read: φ(0) is infinite for λ < −1", side=-1)
        with np.errstate(divide="ignore"):
            power_minus_one = np.where(x > 0, np.expm1((lam + 1.0) * np.log(np.where(x > 0, x, 1.0))), -1.0)
        return _scalar_or_array((power_minus_one - (lam + 1.0) * (x - 1.0)) / scale)

    def deriv1(x):
        x = _as_ratio(x, "cressie-read")
        return _scalar_or_array(np.expm1(lam * np.log(x)) / lam)

    def deriv2(x):
        x = _as_ratio(x, "cressie-read")
        return _scalar_or_array(np.exp((lam - 1.0) * np.log(x)))

    def inverse(t):
        t = _check_inverse_domain(t, domain, "cressie-read")
        return _scalar_or_array(np.exp(np.log1p(lam * t) / lam))

    def shifted(t):
        t = _check_inverse_domain(t, domain, "cressie-read")
        return _scalar_or_array(np.expm1(np.log1p(lam * t) / lam))

    return DivergenceSpec(
        "cressie-read",
        evaluate,
        deriv1,
        deriv2,
        inverse,
        shifted,
        1.0,
        lam - 1.0,
        (lam - 1.0) * (lam - 2.0),
        domain,
        lam=lam,
    )


# ==================== PUBLIC API ====================

def make_divergence(name: str, lam: Optional[float] = None) -> DivergenceSpec:
    """
    Build a registered divergence

    Args:
        name: One of kl, reverse-kl, chi2, cressie-read
        lam: Cressie-Read power; required for cressie-read and rejected otherwise

    Returns:
        DivergenceSpec with analytic derivative values at 1
    """
    if name == "cressie-read":
        if lam is None:
            raise UnknownDivergence("cressie-read requires a power parameter, e.g. cressie-read:0.5")
        return _cressie_read(lam)

    if lam is not None:
        raise UnknownDivergence(f"{name} takes no parameter")

    builders = {"kl": _kl, "reverse-kl": _reverse_kl, "chi2": _chi2}
    if name not in builders:
        raise UnknownDivergence(f"Unknown divergence: {name}")
    return builders[name]()


def parse_divergence(text: str) -> DivergenceSpec:
    """Parse `kl | reverse-kl | chi2 | cressie-read:<λ>`"""
    text = text.strip()
    if ":" not in text:
        return make_divergence(text)

    name, _, raw = text.partition(":")
    if name != "cressie-read":
        raise UnknownDivergence(f"Unknown divergence: {text}")
    try:
        lam = float(raw)
    except ValueError:
        raise UnknownDivergence(f"Invalid cressie-read parameter: {raw!r}")
    if not np.isfinite(lam):
        raise UnknownDivergence(f"Invalid cressie-read parameter: {raw!r}")
    return make_divergence(name, lam)


def is_bartlett_correctable(spec: DivergenceSpec) -> bool:
    """True iff φ‴(1) = −2φ″(1) and φ⁽⁴⁾(1) = −3φ‴(1)"""
    third_ok = abs(spec.d3_at_1 + 2.0 * spec.d2_at_1) <= CORRECTABLE_TOL
    fourth_ok = abs(spec.d4_at_1 + 3.0 * spec.d3_at_1) <= CORRECTABLE_TOL
    return third_ok and fourth_ok


def finite_difference_triple(spec: DivergenceSpec, step: float = 0.05) -> Tuple[float, float, float]:
    """
    Central 5-point differences of eval at 1, refined by two Richardson steps

    Returns:
        Numerical (φ″(1), φ‴(1), φ⁽⁴⁾(1))
    """

    def stencils(h: float) -> np.ndarray:
        f = np.asarray(spec.eval(1.0 + h * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])), dtype=float)
        fm2, fm1, f0, fp1, fp2 = f
        d2 = (fp1 - 2.0 * f0 + fm1) / h**2
        d3 = (fp2 - 2.0 * fp1 + 2.0 * fm1 - fm2) / (2.0 * h**3)
        d4 = (fp2 - 4.0 * fp1 + 6.0 * f0 - 4.0 * fm1 + fm2) / h**4
        return np.array([d2, d3, d4])

    coarse, middle, fine = stencils(step), stencils(step / 2), stencils(step / 4)
    first = (4.0 * middle - coarse) / 3.0
    second = (4.0 * fine - middle) / 3.0
    refined = (16.0 * second - first) / 15.0
    return float(refined[0]), float(refined[1]), float(refined[2])


def level_set_bounds(spec: DivergenceSpec, level: float) -> Tuple[float, float]:
    """
    Endpoints of {x > 0 : φ(x) <= level}

    Every likelihood ratio in a ball with Ê φ(L) <= q/(2n) lies inside the
    bounds for level = q/2.
    """
    if level <= 0:
        return 1.0, 1.0

    def excess(x: float) -> float:
        return float(spec.eval(x)) - level

    try:
        at_zero = float(spec.eval(0.0))
    except DomainError:
        at_zero = np.inf

    if at_zero <= level:
        lower = 0.0
    else:
        left = 0.5
        while excess(left) <= 0:
            left /= 2.0
        lower = brentq(excess, left, 1.0, xtol=1e-14, rtol=1e-14)

    right = 2.0
    while excess(right) <= 0:
        right *= 2.0
    upper = brentq(excess, 1.0, right, xtol=1e-14, rtol=1e-14)
    return lower, upper


def validate_divergence(spec: DivergenceSpec) -> List[str]:
    """
    Check the structural properties every divergence must have

    Returns:
        Human-readable violations; empty when the divergence is sound
    """
    problems = []

    if spec.eval(1.0) != 0.0 or spec.deriv1(1.0) != 0.0:
        problems.append("φ(1) and φ'(1) must both be exactly 0")
    if not spec.d2_at_1 > 0:
        problems.append("φ''(1) must be positive")
    if spec.h(0.0) != 0.0:
        problems.append("h(0) must be 0")

    step = 1e-6
    slope_at_1 = (spec.eval(1.0 + step) - spec.eval(1.0 - step)) / (2.0 * step)
    if abs(slope_at_1) > 1e-8:
        problems.append(f"φ has slope {slope_at_1:.6g} at 1 by central differences")

    grid = np.round(np.arange(1, 51) * 0.1, 10)
    if np.min(spec.eval(grid)) < 0.0:
        problems.append("φ takes negative values on the test grid")
    a, b = np.meshgrid(grid, grid)
    midpoint = spec.eval((a + b) / 2.0)
    chord = (spec.eval(a) + spec.eval(b)) / 2.0
    if np.any(midpoint > chord + 1e-12):
        problems.append("φ fails midpoint convexity on the test grid")

    x = np.linspace(0.1, 5.0, 200)
    if np.max(np.abs(spec.deriv1_inverse(spec.deriv1(x)) - x)) > 1e-10:
        problems.append("(φ')⁻¹ does not invert φ' on [0.1, 5]")

    first = (spec.eval(x + step) - spec.eval(x - step)) / (2.0 * step)
    if np.any(np.abs(first - spec.deriv1(x)) > 1e-6 * np.maximum(1.0, np.abs(first))):
        problems.append("φ' disagrees with central differences of φ on [0.1, 5]")
    second = (spec.deriv1(x + step) - spec.deriv1(x - step)) / (2.0 * step)
    if np.any(np.abs(second - spec.deriv2(x)) > 1e-6 * np.maximum(1.0, np.abs(second))):
        problems.append("φ'' disagrees with central differences of φ' on [0.1, 5]")

    analytic = (spec.d2_at_1, spec.d3_at_1, spec.d4_at_1)
    for label, numeric, exact in zip(("d2", "d3", "d4"), finite_difference_triple(spec), analytic):
        if abs(numeric - exact) > 1e-5 * max(1.0, abs(exact)):
            problems.append(f"{label} = {exact:g} disagrees with finite differences ({numeric:.8g})")

    return problems
