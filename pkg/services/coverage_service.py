"""
Coverage Experiment Service
Monte Carlo estimation of interval coverage with deterministic seeding and a process pool
"""

import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from config.settings import settings
from models.divergence import parse_divergence
from models.influence import Sample
from models.moments import MomentSet, estimate_moments
from models.registry import KERNELS, SMOOTH_FUNCTIONS, build_model, model_dimension, parse_model_spec
from services.correction_service import (
    METHOD_ALIASES,
    BallSizeRule,
    SolverKind,
    TFactors,
    confidence_interval,
    standardize_smooth,
    t_factors,
)
from utils.errors import ConfigError, DroCiError, InputError, UnknownLaw
from utils.log_config import configure_worker_logging
from utils.seeding import oracle_seed, replication_seed, truth_seed

MethodName = Literal["el", "eb", "tb", "tb2"]
LawName = Literal["gamma(2,1)", "student-t(3)", "regression", "bivariate-standard-normal", "standard-normal"]

COVERED, MISSED, FAILED = 1, 0, -1


# ==================== DATA LAWS ====================

def _regression(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.chisquare(2, n)
    y = z + rng.standard_normal(n)
    return np.column_stack([y, z])


LAWS: Dict[str, Tuple[int, Callable[[np.random.Generator, int], np.ndarray]]] = {
    "gamma(2,1)": (1, lambda rng, n: rng.gamma(2.0, 1.0, n)),
    "student-t(3)": (1, lambda rng, n: rng.standard_t(3, n)),
    # columns (Y, Z) with Z ~ χ²₂ and Y = Z + N(0, 1)
    "regression": (2, _regression),
    "bivariate-standard-normal": (2, lambda rng, n: rng.standard_normal((n, 2))),
    "standard-normal": (1, lambda rng, n: rng.standard_normal(n)),
}


def sample_law(law: str, n: int, seed: int) -> Sample:
    """
    Draw n observations from a registered law

    Args:
        law: Law name
        n: Number of draws
        seed: 64-bit seed; equal seeds give equal samples

    Returns:
        Sample
    """
    if law not in LAWS:
        raise UnknownLaw(f"Unknown data law: {law}")
    rng = np.random.default_rng(seed)
    return Sample(LAWS[law][1](rng, n))


# ==================== SCHEMAS ====================

class MonteCarloTruth(BaseModel):
    kind: Literal["monte-carlo"] = "monte-carlo"
    pairs: int = Field(default=settings.TRUTH_PAIRS, ge=2)


class TruthEstimate(BaseModel):
    value: float
    standard_error: float = 0.0
    method: Literal["analytic", "monte-carlo"]


class ScenarioConfig(BaseModel):
    """One coverage experiment"""

    name: str = "scenario"
    model: str = Field(..., description="smooth:<name> | vstat:<name> | optim:<name>")
    divergence: str = Field(..., description="kl | reverse-kl | chi2 | cressie-read:<λ>")
    data_law: LawName
    n: int = Field(..., ge=5)
    nominal_levels: List[float] = Field(..., min_length=1)
    methods: List[MethodName] = Field(..., min_length=1)
    reps: int = Field(default=settings.DEFAULT_REPS, ge=100)
    base_seed: int = Field(..., ge=0, lt=2**64)
    oracle_reps: int = Field(default=settings.ORACLE_REPS, ge=5)
    truth: Union[float, MonteCarloTruth] = Field(default_factory=MonteCarloTruth)
    solver: SolverKind = "exact"
    workers: Optional[int] = Field(default=None, ge=1, description="worker count hint")

    @field_validator("nominal_levels")
    @classmethod
    def levels_in_unit_interval(cls, levels):
        for level in levels:
            if not 0.0 < level < 1.0:
                raise ValueError(f"nominal level {level} outside (0, 1)")
        return levels

    @field_validator("model")
    @classmethod
    def registered_model(cls, text):
        try:
            parse_model_spec(text)
        except InputError as e:
            raise ValueError(str(e))
        return text

    @field_validator("divergence")
    @classmethod
    def registered_divergence(cls, text):
        try:
            parse_divergence(text)
        except InputError as e:
            raise ValueError(str(e))
        return text

    @model_validator(mode="after")
    def consistent(self):
        if model_dimension(self.model) != LAWS[self.data_law][0]:
            raise ValueError(f"{self.model} does not match the dimension of {self.data_law}")
        if "tb2" in self.methods:
            if not self.model.startswith("smooth:"):
                raise ValueError("tb2 applies to smooth function models only")
            if parse_divergence(self.divergence).name != "reverse-kl":
                raise ValueError("tb2 is defined for the reverse-kl divergence only")
        return self


class CoverageCell(BaseModel):
    method: MethodName
    level: float
    coverage: float = Field(..., ge=0, le=1)
    half_width: float
    failures: int
    mean_width: Optional[float] = None
    reps_completed: int


class CoverageReport(BaseModel):
    scenario: ScenarioConfig
    truth: TruthEstimate
    cells: List[CoverageCell]
    failure_rate: float
    flagged: bool
    oracle_moments: Optional[MomentSet] = None
    oracle_factor: Optional[TFactors] = None

    def cell(self, method: str, level: float) -> CoverageCell:
        for cell in self.cells:
            if cell.method == method and math.isclose(cell.level, level):
                return cell
        raise KeyError(f"no cell for {method} at {level}")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a JSON scenario file"""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario {path}: {e}")


# ==================== REPLICATIONS ====================

def _run_chunk(
    config: ScenarioConfig,
    truth: float,
    rules: List[Optional[BallSizeRule]],
    start: int,
    stop: int,
) -> Tuple[int, np.ndarray, np.ndarray]:
    """Replications [start, stop); rows of status and width per (method, level) cell"""
    spec = parse_divergence(config.divergence)
    needs_moments = config.solver == "expansion" or any(
        rule is not None and rule.kind == "bartlett-estimated" for rule in rules
    )
    status = np.full((stop - start, len(rules)), FAILED, dtype=np.int8)
    widths = np.full((stop - start, len(rules)), np.nan)

    for offset, index in enumerate(range(start, stop)):
        sample = sample_law(config.data_law, config.n, replication_seed(config.base_seed, index))
        try:
            model = build_model(config.model, sample)
            moments = estimate_moments(model, sample) if needs_moments else None
        except (DroCiError, ArithmeticError, np.linalg.LinAlgError) as e:
            logger.debug(f"replication {index}: model failed ({e})")
            continue

        for column, rule in enumerate(rules):
            if rule is None:
                continue
            try:
                ci = confidence_interval(model, sample, spec, rule, solver=config.solver, moments=moments)
            except (DroCiError, ArithmeticError, np.linalg.LinAlgError) as e:
                logger.debug(f"replication {index}, {rule.kind}@{rule.nominal}: {e}")
                continue
            status[offset, column] = COVERED if ci.lower <= truth <= ci.upper else MISSED
            widths[offset, column] = ci.upper - ci.lower

    return start, status, widths


@contextmanager
def _single_threaded_blas():
    """Children inherit one BLAS thread each so results do not depend on pool size"""
    names = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
    saved = {name: os.environ.get(name) for name in names}
    os.environ.update({name: "1" for name in names})
    try:
        yield
    finally:
        for name, value in saved.items():
            if value is None:
                os.environ.pop(name, None)
            else:
                os.environ[name] = value


def resolve_workers(requested: Optional[int] = None) -> int:
    """Requested count (or hardware parallelism) capped by DRO_CI_THREADS"""
    workers = requested or os.cpu_count() or 1
    if settings.DRO_CI_THREADS:
        workers = min(workers, settings.DRO_CI_THREADS)
    return max(1, workers)


# ==================== SERVICE ====================

class CoverageService:
    """Runs coverage experiments described by ScenarioConfig"""

    def __init__(self):
        logger.info("CoverageService initialized")

    def estimate_truth(self, config: ScenarioConfig) -> TruthEstimate:
        """
        True functional value for a scenario

        Returns:
            The analytic value when the config gives one, otherwise a Monte
            Carlo estimate with its standard error
        """
        if not isinstance(config.truth, MonteCarloTruth):
            return TruthEstimate(value=float(config.truth), method="analytic")

        pairs = config.truth.pairs
        kind, name = parse_model_spec(config.model)
        seed = truth_seed(config.base_seed)
        logger.info(f"Estimating truth for {config.model} under {config.data_law} from {pairs} draws")

        if kind == "vstat":
            draws = sample_law(config.data_law, 2 * pairs, seed).rows
            values = KERNELS[name].fn(draws[:pairs], draws[pairs:])
            value = float(np.mean(values))
            error = float(np.std(values) / math.sqrt(pairs))
        else:
            sample = sample_law(config.data_law, pairs, seed)
            model = build_model(config.model, sample)
            value = model.psi_hat
            error = float(math.sqrt(np.mean(model.if1**2) / pairs))

        return TruthEstimate(value=value, standard_error=error, method="monte-carlo")

    def _oracle(self, config: ScenarioConfig) -> Tuple[Optional[MomentSet], Optional[TFactors]]:
        moments, factor = None, None
        if not {"tb", "tb2"} & set(config.methods):
            return moments, factor

        sample = sample_law(config.data_law, config.oracle_reps, oracle_seed(config.base_seed))
        if "tb" in config.methods:
            try:
                model = build_model(config.model, sample)
                moments = estimate_moments(model, sample)
            except (DroCiError, ArithmeticError) as e:
                logger.error(f"Oracle moments failed: {e}")
        if "tb2" in config.methods:
            _, name = parse_model_spec(config.model)
            try:
                std = standardize_smooth(sample, SMOOTH_FUNCTIONS[name])
                factor = t_factors(std.gradient, std.hessian, std.alpha3, std.alpha4, prior_sign=True)
            except (DroCiError, ArithmeticError) as e:
                logger.error(f"Oracle t-factors failed: {e}")
        return moments, factor

    def _rules(self, config, moments, factor) -> Tuple[List[Tuple[str, float]], List[Optional[BallSizeRule]]]:
        cells, rules = [], []
        for method in config.methods:
            for level in config.nominal_levels:
                kind = METHOD_ALIASES[method]
                if kind == "bartlett-theoretical":
                    rule = BallSizeRule(kind=kind, nominal=level, oracle_moments=moments) if moments else None
                elif kind == "bartlett-dicc":
                    rule = BallSizeRule(kind=kind, nominal=level, oracle_factor=factor) if factor else None
                else:
                    rule = BallSizeRule(kind=kind, nominal=level)
                cells.append((method, level))
                rules.append(rule)
        return cells, rules

    def run(self, config: ScenarioConfig, workers: Optional[int] = None) -> CoverageReport:
        """
        Estimate coverage for every (method, level) pair of a scenario

        Args:
            config: Scenario
            workers: Worker processes; defaults to the config hint or hardware parallelism

        Returns:
            CoverageReport; identical for any worker count
        """
        started = time.perf_counter()
        truth = self.estimate_truth(config)
        moments, factor = self._oracle(config)
        cells, rules = self._rules(config, moments, factor)

        workers = resolve_workers(workers or config.workers)
        reps = config.reps
        chunk = max(1, math.ceil(reps / (workers * 4)))
        bounds = [(start, min(start + chunk, reps)) for start in range(0, reps, chunk)]
        status = np.empty((reps, len(rules)), dtype=np.int8)
        widths = np.empty((reps, len(rules)))

        logger.info(f"Running {config.name}: {reps} replications x {len(rules)} cells on {workers} worker(s)")
        if workers == 1:
            for start, stop in bounds:
                _, block_status, block_widths = _run_chunk(config, truth.value, rules, start, stop)
                status[start:stop], widths[start:stop] = block_status, block_widths
        else:
            with _single_threaded_blas():
                context = multiprocessing.get_context("spawn")
                with ProcessPoolExecutor(
                    max_workers=workers, mp_context=context, initializer=configure_worker_logging
                ) as pool:
                    futures = [pool.submit(_run_chunk, config, truth.value, rules, a, b) for a, b in bounds]
                    for done, future in enumerate(as_completed(futures), start=1):
                        start, block_status, block_widths = future.result()
                        stop = start + block_status.shape[0]
                        status[start:stop], widths[start:stop] = block_status, block_widths
                        logger.debug(f"{done}/{len(futures)} chunks finished")

        report = self._aggregate(config, truth, cells, status, widths, moments, factor)
        logger.success(f"{config.name} finished in {time.perf_counter() - started:.1f}s")
        return report

    def _aggregate(self, config, truth, cells, status, widths, moments, factor) -> CoverageReport:
        results = []
        for column, (method, level) in enumerate(cells):
            valid = status[:, column] >= 0
            completed = int(np.count_nonzero(valid))
            if completed:
                p = float(np.count_nonzero(status[:, column] == COVERED)) / completed
                half_width = 1.96 * math.sqrt(p * (1.0 - p) / completed)
                mean_width = math.fsum(widths[valid, column]) / completed
            else:
                p, half_width, mean_width = 0.0, 0.0, None
            results.append(
                CoverageCell(
                    method=method,
                    level=level,
                    coverage=p,
                    half_width=half_width,
                    failures=config.reps - completed,
                    mean_width=mean_width,
                    reps_completed=completed,
                )
            )

        failures = sum(cell.failures for cell in results)
        failure_rate = failures / (config.reps * len(results))
        flagged = failure_rate > settings.FAILURE_RATE_FLAG or any(cell.reps_completed == 0 for cell in results)
        if flagged:
            logger.warning(f"{config.name}: failure rate {failure_rate:.4%} exceeds the flag threshold")

        return CoverageReport(
            scenario=config,
            truth=truth,
            cells=results,
            failure_rate=failure_rate,
            flagged=flagged,
            oracle_moments=moments,
            oracle_factor=factor,
        )


coverage_service = CoverageService()


def estimate_truth(config: ScenarioConfig) -> TruthEstimate:
    return coverage_service.estimate_truth(config)


def run_coverage(config: ScenarioConfig, workers: Optional[int] = None) -> CoverageReport:
    return coverage_service.run(config, workers)
