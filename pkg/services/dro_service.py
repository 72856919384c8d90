"""
DRO Solver Service
Exact solution of the φ-divergence DRO pair over likelihood ratios, and the EL profile by duality
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from config.settings import Settings, settings
from models.divergence import DivergenceSpec
from models.expansion import Direction
from models.influence import InfluenceModel, Sample
from utils.errors import (
    DegenerateVariance,
    DomainError,
    InfeasibleBall,
    NoConvergence,
    TargetUnreachable,
)


@dataclass(frozen=True)
class LikelihoodRatioSolution:
    """Optimal reweighting of the sample with its KKT multipliers"""

    L: np.ndarray
    alpha_tilde: float
    beta: float
    objective: float
    residual_divergence: float
    residual_mean: float
    iterations: int
    direction: str
    q: float
    method: str = "newton"

    def summary(self) -> dict:
        return {
            "direction": self.direction,
            "q": self.q,
            "objective": self.objective,
            "alpha_tilde": self.alpha_tilde,
            "beta": self.beta,
            "residuals": {"divergence": self.residual_divergence, "mean": self.residual_mean},
            "iterations": self.iterations,
            "method": self.method,
        }


class _InnerStalled(Exception):
    pass


class _NewtonStalled(Exception):
    pass


@dataclass
class _State:
    alpha: float
    beta: float
    t: np.ndarray
    L: np.ndarray
    slope: np.ndarray
    r_div: float
    r_mean: float

    @property
    def merit(self) -> float:
        return self.r_div**2 + self.r_mean**2


def _solve_linear(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(matrix, rhs, rcond=None)[0]


class DroSolver:
    """
    KKT solver for max/min ψ(P̂L) s.t. Ê φ(L) <= q/(2n), Ê L = 1

    For fixed multipliers (α̃, β) the optimal ratios satisfy L = 1 + h(t) with
    t = α̃(D(L) − β). The inner loop solves that system in t by damped Newton;
    the outer loop is Newton on the two constraint residuals over (α̃, β), with
    the Jacobian taken from the inner system by implicit differentiation and a
    coordinate bisection fallback. Where φ'(0) is finite, ratios pinned at
    L = 0 are handled inside the inner system.
    """

    def __init__(self, config: Settings = settings):
        self.config = config
        logger.debug("DroSolver initialized")

    # ==================== INNER SYSTEM ====================

    def _residual(self, model: InfluenceModel, spec: DivergenceSpec, alpha: float, beta: float, t: np.ndarray):
        L, slope = spec.ratio(t)
        return L, slope, t - alpha * (model.gradient(L) - beta)

    def _inner_jacobian(self, model: InfluenceModel, alpha: float, L: np.ndarray, slope: np.ndarray) -> np.ndarray:
        """∂R/∂t = I − α̃ (∂D/∂L) diag(dL/dt)"""
        return np.eye(model.n) - alpha * model.jacobian(L) * slope[None, :]

    def _directions(self, jac: np.ndarray, r: np.ndarray):
        """The Newton step, then Levenberg-Marquardt steps of growing damping"""
        yield _solve_linear(jac, -r)
        normal = jac.T @ jac
        gradient = jac.T @ r
        mu = 1e-3 * max(float(np.max(np.diag(normal))), np.finfo(float).tiny)
        for _ in range(self.config.MAX_LM_TRIES):
            yield _solve_linear(normal + mu * np.eye(jac.shape[0]), -gradient)
            mu *= 10.0

    def _inner(
        self,
        model: InfluenceModel,
        spec: DivergenceSpec,
        alpha: float,
        beta: float,
        t0: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Damped Newton on R(t) = t − α̃(D(1 + h(t)) − β), with Levenberg-Marquardt steps when Newton stalls"""
        n = model.n
        ceiling = spec.inverse_domain[1] - self.config.DOMAIN_MARGIN
        t = np.zeros(n) if t0 is None else np.array(t0, dtype=float)
        L, slope, r = self._residual(model, spec, alpha, beta, t)
        merit = float(r @ r)
        polished = False

        for _ in range(self.config.MAX_INNER_ITERATIONS):
            if np.max(np.abs(r)) <= self.config.INNER_TOL * (1.0 + np.max(np.abs(t))):
                if polished:
                    return t, L, slope
                # one more step settles the last digits
                polished = True

            accepted = None
            blocked = False
            for step in self._directions(self._inner_jacobian(model, alpha, L, slope), r):
                if not np.all(np.isfinite(step)):
                    continue
                damping = 1.0
                for _ in range(self.config.MAX_HALVINGS + 1):
                    trial_t = t + damping * step
                    if np.max(trial_t) < ceiling:
                        trial = self._residual(model, spec, alpha, beta, trial_t)
                        trial_merit = float(trial[2] @ trial[2])
                        if trial_merit < merit:
                            accepted = (trial_t, trial, trial_merit)
                            break
                    else:
                        blocked = True
                    damping /= 2.0
                if accepted is not None:
                    break

            if accepted is None:
                if polished:
                    return t, L, slope
                if blocked:
                    raise DomainError(f"{spec.label}: α̃(D − β) is pushed past {spec.inverse_domain[1]:g}", side=1)
                raise _InnerStalled(f"inner residual stalled at {math.sqrt(merit):.3g}")

            t, (L, slope, r), merit = accepted

        if polished:
            return t, L, slope
        raise _InnerStalled(f"inner system did not settle within {self.config.MAX_INNER_ITERATIONS} iterations")

    def _evaluate(self, model, spec, target: float, alpha: float, beta: float, t0=None) -> _State:
        t, L, slope = self._inner(model, spec, alpha, beta, t0)
        r_div = math.fsum(np.asarray(spec.eval(L))) / model.n - target
        r_mean = math.fsum(L) / model.n - 1.0
        return _State(alpha, beta, t, L, slope, r_div, r_mean)

    def _converged(self, state: _State) -> bool:
        return abs(state.r_div) <= self.config.DIVERGENCE_TOL and abs(state.r_mean) <= self.config.MEAN_TOL

    # ==================== NEWTON ====================

    def _sensitivities(self, model: InfluenceModel, state: _State) -> Tuple[np.ndarray, np.ndarray]:
        """
        Derivatives of the inner solution in (α̃, β)

        Returns:
            (2 x 2 Jacobian of the residual pair, n x 2 matrix dt/d(α̃, β))
        """
        n = model.n
        jac = self._inner_jacobian(model, state.alpha, state.L, state.slope)
        # ∂R/∂α̃ = −(D − β) = −t/α̃ and ∂R/∂β = α̃ at the inner solution
        dt = _solve_linear(jac, np.column_stack([state.t / state.alpha, -state.alpha * np.ones(n)]))
        dL = state.slope[:, None] * dt
        # φ'(L) = t wherever dL/dt > 0; pinned ratios contribute nothing
        outer = np.vstack([state.t @ dL / n, dL.sum(axis=0) / n])
        return outer, dt

    def _newton(self, model, spec, target, state: _State, sign: float) -> Tuple[_State, int]:
        for iteration in range(1, self.config.MAX_OUTER_ITERATIONS + 1):
            if self._converged(state):
                return state, iteration - 1

            jacobian, dt = self._sensitivities(model, state)
            step = _solve_linear(jacobian, -np.array([state.r_div, state.r_mean]))
            if not np.all(np.isfinite(step)):
                raise _NewtonStalled("non-finite Newton step")

            ceiling = spec.inverse_domain[1] - self.config.DOMAIN_MARGIN
            damping = 1.0
            domain_failures = 0
            accepted = None
            for _ in range(self.config.MAX_HALVINGS + 1):
                alpha = state.alpha + damping * step[0]
                beta = state.beta + damping * step[1]
                if sign * alpha > 0:
                    predicted = state.t + damping * (dt @ step)
                    warm = predicted if np.max(predicted) < ceiling else state.t
                    try:
                        trial = self._evaluate(model, spec, target, alpha, beta, warm)
                    except DomainError:
                        domain_failures += 1
                        trial = None
                    except _InnerStalled:
                        trial = None
                    if trial is not None and trial.merit < state.merit:
                        accepted = trial
                        break
                damping /= 2.0

            if accepted is None:
                if domain_failures == self.config.MAX_HALVINGS + 1:
                    raise _NewtonStalled(f"{spec.label}: every damped step leaves the domain of (φ')⁻¹")
                raise _NewtonStalled("no damped step reduced the residual")
            state = accepted

        if self._converged(state):
            return state, self.config.MAX_OUTER_ITERATIONS
        raise NoConvergence(f"outer iteration exceeded {self.config.MAX_OUTER_ITERATIONS} steps")

    # ==================== BISECTION FALLBACK ====================

    def _bisect(self, fn, lo: float, hi: float, tol: float, budget: int) -> Tuple[float, object, int]:
        """Bisection on a decreasing function given fn(lo) > 0 > fn(hi); fn returns (value, payload)"""
        best = None
        used = 0
        for used in range(1, budget + 1):
            mid = 0.5 * (lo + hi)
            value, payload = fn(mid)
            best = (mid, payload)
            if abs(value) <= tol or mid in (lo, hi):
                return mid, payload, used
            if value > 0:
                lo = mid
            else:
                hi = mid
        return best[0], best[1], used

    def _coordinate_bisection(self, model, spec, target, alpha0: float, sign: float) -> Tuple[_State, int]:
        budget = self.config.MAX_OUTER_ITERATIONS
        counter = {"steps": 0}
        width = 1.0 + float(np.max(np.abs(model.if1)))

        def mean_residual(alpha: float, u: float):
            # u = sign·β; Ê L − 1 decreases in u
            try:
                state = self._evaluate(model, spec, target, alpha, sign * u)
            except DomainError as e:
                return (math.inf if e.side > 0 else -math.inf), None
            except _InnerStalled as e:
                raise NoConvergence(str(e))
            return state.r_mean, state

        def solve_beta(alpha: float) -> _State:
            lo, hi, w = -width, width, width
            for _ in range(200):
                if mean_residual(alpha, lo)[0] > 0:
                    break
                w *= 2.0
                lo = -w
            for _ in range(200):
                if mean_residual(alpha, hi)[0] < 0:
                    break
                w *= 2.0
                hi = w
            _, state, used = self._bisect(
                lambda u: mean_residual(alpha, u), lo, hi, self.config.MEAN_TOL, 200
            )
            counter["steps"] += used
            if state is None or abs(state.r_mean) > self.config.MEAN_TOL:
                raise InfeasibleBall(f"{spec.label}: no feasible β for α̃ = {alpha:.6g}")
            return state

        def divergence_residual(magnitude: float):
            state = solve_beta(sign * magnitude)
            # Ê φ(L) grows with |α̃|; negate so the bisection sees a decreasing function
            return -state.r_div, state

        lo, hi = 0.0, abs(alpha0)
        for _ in range(200):
            if divergence_residual(hi)[0] < 0:
                break
            lo, hi = hi, 2.0 * hi
        _, state, used = self._bisect(divergence_residual, lo, hi, self.config.DIVERGENCE_TOL, 200)
        steps = counter["steps"] + used
        if steps > budget and not self._converged(state):
            raise NoConvergence(f"coordinate bisection exceeded {budget} steps")
        return state, used

    # ==================== PUBLIC API ====================

    def solve(
        self,
        model: InfluenceModel,
        sample: Sample,
        spec: DivergenceSpec,
        q: float,
        direction: Direction,
    ) -> LikelihoodRatioSolution:
        """
        Solve one direction of the DRO pair

        Args:
            model: Influence model at the empirical measure
            sample: Sample the model was built from
            spec: Divergence of the ball
            q: Ball size; the constraint is Ê φ(L) <= q/(2n)
            direction: "max" or "min"

        Returns:
            LikelihoodRatioSolution
        """
        if direction not in ("max", "min"):
            raise ValueError(f"Unknown direction: {direction}")
        if not q > 0:
            raise ValueError("ball size q must be positive")

        n = model.n
        kappa2 = math.fsum(model.if1**2) / n
        if kappa2 < self.config.DEGENERATE_VARIANCE_TOL * max(sample.scale2, np.finfo(float).tiny):
            raise DegenerateVariance(f"{model.name}: all first-order influence values coincide")

        sign = 1.0 if direction == "max" else -1.0
        target = q / (2.0 * n)
        alpha0 = sign * math.sqrt(q / (n * spec.h_prime_at_0 * kappa2))

        start = None
        alpha_start = alpha0
        for _ in range(60):
            try:
                start = self._evaluate(model, spec, target, alpha_start, 0.0)
                break
            except (DomainError, _InnerStalled):
                alpha_start /= 2.0
        if start is None:
            raise InfeasibleBall(f"{spec.label}: no feasible starting multiplier for q={q:.6g}")

        method = "newton"
        try:
            state, iterations = self._newton(model, spec, target, start, sign)
        except _NewtonStalled as e:
            logger.debug(f"Newton stalled ({e}); falling back to coordinate bisection")
            method = "bisection"
            state, iterations = self._coordinate_bisection(model, spec, target, alpha0, sign)

        if not self._converged(state):
            raise NoConvergence(
                f"residuals ({state.r_div:.3g}, {state.r_mean:.3g}) above tolerance after {iterations} iterations"
            )
        if np.any(state.L < 0):
            raise InfeasibleBall("likelihood ratio left the nonnegative orthant")

        return LikelihoodRatioSolution(
            L=state.L,
            alpha_tilde=state.alpha,
            beta=state.beta,
            objective=model.truncated_value(state.L),
            residual_divergence=abs(state.r_div),
            residual_mean=abs(state.r_mean),
            iterations=iterations,
            direction=direction,
            q=q,
            method=method,
        )

    def el_profile(
        self,
        model: InfluenceModel,
        sample: Sample,
        spec: DivergenceSpec,
        psi_target: float,
        q_cap: Optional[float] = None,
        tol: Optional[float] = None,
    ) -> float:
        """
        Smallest divergence Ê φ(L) at which ψ_target becomes attainable

        Returns:
            q*/(2n) where q* is the smallest ball size with ψ_target in [ψ_min(q*), ψ_max(q*)]
        """
        q_cap = self.config.EL_Q_CAP if q_cap is None else q_cap
        tol = self.config.EL_TOL if tol is None else tol
        n = model.n

        if psi_target == model.psi_hat:
            return 0.0
        direction = "max" if psi_target > model.psi_hat else "min"
        orientation = 1.0 if direction == "max" else -1.0

        def gap(q: float) -> float:
            if q <= 0:
                return orientation * (model.psi_hat - psi_target)
            value = self.solve(model, sample, spec, q, direction).objective
            return orientation * (value - psi_target)

        cap = q_cap
        for _ in range(30):
            try:
                reach = gap(cap)
                break
            except (InfeasibleBall, NoConvergence):
                cap /= 2.0
        else:
            raise TargetUnreachable(f"no feasible ball up to q = {q_cap:g}")

        if reach < 0:
            raise TargetUnreachable(f"ψ = {psi_target:.6g} lies outside the q = {cap:g} interval")

        q_star = brentq(gap, 0.0, cap, xtol=tol * 2.0 * n, maxiter=200)
        return q_star / (2.0 * n)


default_solver = DroSolver()


def solve_dro_exact(
    model: InfluenceModel,
    sample: Sample,
    spec: DivergenceSpec,
    q: float,
    direction: Direction,
) -> LikelihoodRatioSolution:
    return default_solver.solve(model, sample, spec, q, direction)


def el_profile(
    model: InfluenceModel,
    sample: Sample,
    spec: DivergenceSpec,
    psi_target: float,
    q_cap: Optional[float] = None,
) -> float:
    return default_solver.el_profile(model, sample, spec, psi_target, q_cap=q_cap)
