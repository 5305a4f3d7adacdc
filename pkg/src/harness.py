"""
Replication engine and single-dataset fitting

run_replications generates independent instances, fits every requested method
and aggregates the four benchmark metrics: absolute error, interval size,
coverage of the truth and Type II error (fraction of intervals containing 0).
fit_single runs one method on a user CSV and exports the posterior.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src import config
from src import report as report_io
from src.data_model import ColumnSchema, ObservationalDataset, load_dataset
from src.errors import ConfigurationError, DebiasATEError, ReplicationFailureError
from src.gp_engine import OptimizerConfig
from src.propensity import fit_propensity
from src.simgen import (HET, HOM, IHDP_B, SimulatedInstance, gen_ihdp_outcomes, gen_synthetic,
                        load_ihdp_covariates)
from src.treatment_effect import DebiasedGPEstimator, interval_contains, ipw_ate, ols_ate

logger = logging.getLogger(__name__)

FILE = "file"
GENERATORS = (HOM, HET, IHDP_B, FILE)
TARGETS = ("ATE", "CATE")


@dataclass(frozen=True)
class MethodSpec:
    label: str
    kind: str
    debiased: bool = False
    randomized: bool = True


METHODS = {
    "gp": MethodSpec("GP", "gp", debiased=False, randomized=True),
    "gp-norand": MethodSpec("GP (noRand)", "gp", debiased=False, randomized=False),
    "gp-ps": MethodSpec("GP PS", "gp", debiased=True, randomized=True),
    "gp-ps-norand": MethodSpec("GP PS (noRand)", "gp", debiased=True, randomized=False),
    "ols": MethodSpec("OLS", "baseline"),
    "ipw": MethodSpec("IPW", "baseline"),
}
DEFAULT_METHODS = tuple(METHODS)

# Expected share of control units in the HOM/HET designs
SYNTHETIC_CONTROL_SHARE = 0.1

PRESETS = {
    "het1000": {"generator": HET, "n": 1000, "d": 100},
    "het500": {"generator": HET, "n": 500, "d": 100},
    "hom500": {"generator": HOM, "n": 500, "d": 100},
    "hom1000": {"generator": HOM, "n": 1000, "d": 100},
    "ihdp": {"generator": IHDP_B},
}


def default_methods(generator: str, n: int, d: int) -> Tuple[str, ...]:
    """
    Methods run when none are named

    OLS fits d+1 coefficients per arm, so for the synthetic designs it is only
    included when the expected control arm holds at least twice that many units.
    """
    if generator in (HOM, HET) and SYNTHETIC_CONTROL_SHARE * n < 2 * (d + 1):
        return tuple(m for m in DEFAULT_METHODS if m != "ols")
    return DEFAULT_METHODS


@dataclass(frozen=True)
class BenchConfig:
    generator: str = HET
    n: int = 500
    d: int = 100
    replications: int = field(default_factory=lambda: config.REPS)
    methods: Optional[Tuple[str, ...]] = None
    target: Optional[str] = None
    draws: int = field(default_factory=lambda: config.DRAWS)
    alpha: float = field(default_factory=lambda: config.ALPHA)
    seed: int = field(default_factory=lambda: config.SEED)
    nu_override: Optional[float] = None
    trunc_lo: float = field(default_factory=lambda: config.TRUNC_LO)
    trunc_hi: float = field(default_factory=lambda: config.TRUNC_HI)
    out_dir: Optional[str] = None
    ihdp_covariates: Optional[str] = None
    data_path: Optional[str] = None
    data_schema: ColumnSchema = field(default_factory=ColumnSchema)
    truth: Optional[float] = None
    restarts: int = field(default_factory=lambda: config.RESTARTS)
    workers: int = field(default_factory=lambda: config.THREADS)

    def __post_init__(self):
        if self.methods is None:
            object.__setattr__(self, "methods", default_methods(self.generator, self.n, self.d))
        object.__setattr__(self, "methods", tuple(self.methods))
        problems = []
        if self.generator not in GENERATORS:
            problems.append(f"generator must be one of {', '.join(GENERATORS)}")
        if self.replications < 1:
            problems.append("replications must be >= 1")
        if not self.methods:
            problems.append("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            problems.append(f"unknown methods: {', '.join(unknown)} (choose from {', '.join(METHODS)})")
        if self.target is not None and self.target not in TARGETS:
            problems.append(f"target must be ATE or CATE, got {self.target}")
        if self.draws < 2:
            problems.append("draws must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            problems.append("alpha must lie in (0, 1)")
        if not 0.0 < self.trunc_lo < 0.5 < self.trunc_hi < 1.0:
            problems.append("truncation bounds must satisfy 0 < lo < 0.5 < hi < 1")
        if self.nu_override is not None and self.nu_override < 0:
            problems.append("nu override must be nonnegative")
        if self.generator in (HOM, HET) and (self.n < 2 or self.d < 5):
            problems.append("synthetic generators need n >= 2 and d >= 5")
        if self.generator == IHDP_B:
            if not self.ihdp_covariates:
                problems.append("IHDP-B needs an IHDP covariate CSV (--ihdp-covariates)")
            if self.target == "ATE":
                problems.append("IHDP-B has no population ATE; use target CATE")
        if self.generator == FILE and (not self.data_path or self.truth is None):
            problems.append("generator 'file' needs a dataset path and a known truth")
        if self.restarts < 1 or self.workers < 1:
            problems.append("restarts and workers must be >= 1")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def resolved_target(self) -> str:
        if self.target is not None:
            return self.target
        return "CATE" if self.generator == IHDP_B else "ATE"

    def echo(self) -> dict:
        echoed = asdict(self)
        echoed["methods"] = list(self.methods)
        echoed["target"] = self.resolved_target
        echoed.pop("workers")
        echoed.pop("out_dir")
        return echoed


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    seed: int
    method: str
    truth: float
    estimate: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def covered(self) -> bool:
        return interval_contains(self.ci_low, self.ci_high, self.truth)

    @property
    def zero_in_interval(self) -> bool:
        return interval_contains(self.ci_low, self.ci_high, 0.0)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    label: str
    abs_error_mean: float
    abs_error_sd: float
    ci_size_mean: float
    ci_size_sd: float
    coverage: float
    type2_error: float
    completed: int
    failed: int


@dataclass
class BenchmarkReport:
    config: BenchConfig
    summaries: List[MethodSummary]
    outcomes: List[ReplicationOutcome]
    wall_clock: float = 0.0
    n: Optional[int] = None
    d: Optional[int] = None

    def __post_init__(self):
        if self.n is None:
            self.n = self.config.n
        if self.d is None:
            self.d = self.config.d

    def summary(self, method: str) -> MethodSummary:
        for row in self.summaries:
            if row.method == method:
                return row
        raise KeyError(method)


def replication_seed(master_seed: int, replication: int) -> int:
    """Seed of one replication, a hash of (master seed, replication index)"""
    return int(np.random.SeedSequence([int(master_seed), int(replication)]).generate_state(1)[0])


class InstanceFactory:
    """Picklable seed -> SimulatedInstance callable for a benchmark configuration"""

    def __init__(self, bench: BenchConfig):
        self.generator = bench.generator
        self.n = bench.n
        self.d = bench.d
        self.features = None
        self.R = None
        self.dataset = None
        self.truth = bench.truth
        if bench.generator == IHDP_B:
            self.features, self.R, _ = load_ihdp_covariates(bench.ihdp_covariates)
            self.n, self.d = self.features.shape
        elif bench.generator == FILE:
            self.dataset = load_dataset(bench.data_path, bench.data_schema)
            self.n, self.d = self.dataset.n, self.dataset.d

    def __call__(self, seed: int) -> SimulatedInstance:
        if self.generator in (HOM, HET):
            return gen_synthetic(self.n, self.d, self.generator, seed)
        if self.generator == IHDP_B:
            return gen_ihdp_outcomes(self.features, self.R, seed)
        return SimulatedInstance(data=self.dataset, true_ate=self.truth, true_cate=self.truth,
                                 generator=FILE, seed=seed)


def _method_rng(seed: int, method: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), list(METHODS).index(method)]))


def _fit_baseline(method: str, data: ObservationalDataset, bench: BenchConfig):
    if method == "ols":
        return ols_ate(data, bench.alpha)
    model = fit_propensity(data, lower=bench.trunc_lo, upper=bench.trunc_hi)
    return ipw_ate(data, model.predict(data.X), bench.alpha)


def _run_replication(task) -> List[ReplicationOutcome]:
    bench, factory, replication, seed = task
    target = bench.resolved_target
    try:
        instance = factory(seed)
        truth = instance.truth(target)
    except (DebiasATEError, ValueError) as e:
        logger.debug("Replication %d could not be generated: %s", replication, e)
        return [ReplicationOutcome(replication, seed, method, float("nan"), error=str(e))
                for method in bench.methods]
    data = instance.data

    outcomes = []
    estimator = None
    fit_error = None
    for method in bench.methods:
        spec = METHODS[method]
        try:
            if spec.kind == "gp":
                if fit_error is not None:
                    raise fit_error
                if estimator is None:
                    try:
                        estimator = DebiasedGPEstimator(
                            draws=bench.draws, alpha=bench.alpha, trunc_lo=bench.trunc_lo,
                            trunc_hi=bench.trunc_hi, nu_override=bench.nu_override,
                            opt_config=OptimizerConfig(restarts=bench.restarts, seed=seed),
                        ).fit(data)
                    except (DebiasATEError, ValueError, np.linalg.LinAlgError) as e:
                        fit_error = e
                        raise
                result = estimator.effect_posterior(spec.debiased, spec.randomized,
                                                    rng=_method_rng(seed, method))
            else:
                result = _fit_baseline(method, data, bench)
        except (DebiasATEError, ValueError, np.linalg.LinAlgError) as e:
            logger.debug("Replication %d, %s failed: %s", replication, method, e)
            outcomes.append(ReplicationOutcome(replication, seed, method, truth, error=str(e)))
            continue
        outcomes.append(ReplicationOutcome(replication, seed, method, truth, estimate=result.estimate,
                                           ci_low=result.ci_low, ci_high=result.ci_high))
    return outcomes


def _sd(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(bench: BenchConfig, outcomes: List[ReplicationOutcome]) -> List[MethodSummary]:
    summaries = []
    for method in bench.methods:
        rows = [o for o in outcomes if o.method == method]
        done = [o for o in rows if o.ok]
        if done:
            abs_errors = [abs(o.estimate - o.truth) for o in done]
            sizes = [o.ci_high - o.ci_low for o in done]
            summaries.append(MethodSummary(
                method=method, label=METHODS[method].label,
                abs_error_mean=float(np.mean(abs_errors)), abs_error_sd=_sd(abs_errors),
                ci_size_mean=float(np.mean(sizes)), ci_size_sd=_sd(sizes),
                coverage=float(np.mean([o.covered for o in done])),
                type2_error=float(np.mean([o.zero_in_interval for o in done])),
                completed=len(done), failed=len(rows) - len(done),
            ))
        else:
            nan = float("nan")
            summaries.append(MethodSummary(method, METHODS[method].label, nan, nan, nan, nan,
                                           nan, nan, completed=0, failed=len(rows)))
    return summaries


def run_replications(bench: BenchConfig,
                     instance_factory: Callable[[int], SimulatedInstance] = None) -> BenchmarkReport:
    """
    Run the replication study described by ``bench``

    Replication r uses seed replication_seed(bench.seed, r), so results do not
    depend on the number of workers. Failed method fits are excluded from the
    metrics; ReplicationFailureError is raised (after the report files are
    written) when any method fails in more than the configured share of
    replications.

    Args:
        bench (BenchConfig): study configuration
        instance_factory (callable): optional seed -> SimulatedInstance override

    Returns:
        BenchmarkReport: per-method metrics, raw outcomes and wall-clock time
    """
    started = time.perf_counter()
    factory = instance_factory or InstanceFactory(bench)
    tasks = [(bench, factory, r, replication_seed(bench.seed, r)) for r in range(bench.replications)]
    workers = min(bench.workers, config.THREADS, len(tasks))
    if instance_factory is not None:
        # custom factories may not be picklable
        workers = 1
    n = getattr(factory, "n", bench.n)
    d = getattr(factory, "d", bench.d)
    logger.info("Running %d replications of %s (n=%d, d=%d) with %d worker(s): %s",
                len(tasks), bench.generator, n, d, workers, ", ".join(bench.methods))

    outcomes = []
    if workers > 1 and instance_factory is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for replication_outcomes in pool.map(_run_replication, tasks):
                outcomes.extend(replication_outcomes)
    else:
        for task in tasks:
            outcomes.extend(_run_replication(task))

    summaries = summarize(bench, outcomes)
    result = BenchmarkReport(config=bench, summaries=summaries, outcomes=outcomes,
                             wall_clock=time.perf_counter() - started, n=n, d=d)
    logger.info("Benchmark finished in %.1f s", result.wall_clock)

    if bench.out_dir:
        report_io.write_benchmark(result, bench.out_dir)

    failures = {s.method: s.failed for s in summaries if s.failed}
    for method, count in failures.items():
        logger.warning("%s failed in %d of %d replications", method, count, bench.replications)
    too_many = {m: c for m, c in failures.items() if c / bench.replications > config.FAILURE_LIMIT}
    if too_many:
        raise ReplicationFailureError(
            "too many failed replications: "
            + ", ".join(f"{m} {c}/{bench.replications}" for m, c in too_many.items()),
            failures=too_many,
        )
    return result


def fit_single(path: str, schema: ColumnSchema, method: str, bench: BenchConfig,
               randomized: Optional[bool] = None, plot: bool = False, truth: Optional[float] = None):
    """
    Fit one method to a CSV dataset and export the result

    GP methods write draws.csv, interval.csv, summary.json and optionally
    posterior.png to bench.out_dir; baselines write estimate.csv. ``randomized``
    overrides the method's feature-randomization setting.

    Returns:
        EffectPosterior or BaselineEstimate
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
    spec = METHODS[method]
    data = load_dataset(path, schema)
    logger.info("Fitting %s to %s (n=%d, d=%d)", spec.label, path, data.n, data.d)

    if spec.kind == "baseline":
        result = _fit_baseline(method, data, bench)
        if bench.out_dir:
            report_io.write_baseline(result, bench.out_dir)
        return result

    randomized = spec.randomized if randomized is None else randomized
    estimator = DebiasedGPEstimator(
        draws=bench.draws, alpha=bench.alpha, trunc_lo=bench.trunc_lo, trunc_hi=bench.trunc_hi,
        nu_override=bench.nu_override, opt_config=OptimizerConfig(restarts=bench.restarts, seed=bench.seed),
    ).fit(data)
    result = estimator.effect_posterior(spec.debiased, randomized, rng=_method_rng(bench.seed, method))

    if bench.out_dir:
        details = {
            "method": method,
            "nu": estimator.nu if spec.debiased else 0.0,
            "log_marginal_likelihood": estimator.fit_report.log_ml,
            "hyperparameters": estimator.fit_report.params.describe(),
        }
        report_io.write_posterior(result, bench.out_dir, details)
        if plot:
            report_io.plot_posterior(result, os.path.join(bench.out_dir, "posterior.png"),
                                     title=spec.label, truth=truth)
    return result
