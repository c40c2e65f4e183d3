"""Monte-Carlo experiments: LAN limit, efficiency of the MLE, ergodic averages.

Replication r always uses ``RngStream(seed, r)``, and results are reduced in
replication order, so reports do not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from jumpou.core import (
    LocalAlternative,
    ModelParams,
    SamplingScheme,
    fisher_matrix,
    invariant_moments,
    lan_limit_moments,
    rate_matrix,
)
from jumpou.density import MixtureConfig
from jumpou.inference import FitConfig, fit_mle, log_likelihood_ratio
from jumpou.simulate import RNG_ALGORITHM, RngStream, simulate_path

KS_LEVEL = 1e-3
MAX_FAILURE_FRACTION = 0.05


class ReplicationError(RuntimeError):
    def __init__(self, index: int, cause: object):
        super().__init__(f"replication {index} failed: {cause}")
        self.index = index


def _run_indexed(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(frozen=True)
class LanExperimentConfig:
    params0: ModelParams
    z: LocalAlternative
    scheme: SamplingScheme
    reps: int = 400
    seed: int = 42
    mixture: MixtureConfig = field(default_factory=MixtureConfig)

    def __post_init__(self):
        if self.reps < 100:
            raise ValueError("reps must be >= 100")
        self.z.perturb(self.params0, self.scheme)

    @property
    def perturbed(self) -> ModelParams:
        return self.z.perturb(self.params0, self.scheme)

    def to_dict(self) -> dict:
        return {
            "params0": self.params0.to_dict(),
            "z": self.z.to_dict(),
            "scheme": self.scheme.to_dict(),
            "reps": self.reps,
            "seed": self.seed,
            "mixture": self.mixture.to_dict(),
        }


@dataclass(frozen=True)
class LanReport:
    sample: np.ndarray
    empirical_mean: float
    empirical_var: float
    predicted_mean: float
    predicted_var: float
    ks_statistic: Optional[float]
    ks_pvalue: Optional[float]
    ks_critical: float
    degenerate: bool
    standard_errors: dict
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "sample": self.sample.tolist(),
            "empirical_mean": self.empirical_mean,
            "empirical_var": self.empirical_var,
            "predicted_mean": self.predicted_mean,
            "predicted_var": self.predicted_var,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "ks_critical": self.ks_critical,
            "degenerate": self.degenerate,
            "standard_errors": self.standard_errors,
            "metadata": self.metadata,
        }


def _variance_se(x: np.ndarray) -> float:
    c = x - x.mean()
    m2, m4 = np.mean(c**2), np.mean(c**4)
    return math.sqrt(max(m4 - m2**2, 0.0) / x.size)


def _lan_rep(task) -> float:
    config, alt, r = task
    try:
        path = simulate_path(config.params0, config.scheme, RngStream(config.seed, r))
        return log_likelihood_ratio(path, config.params0, alt, config.mixture)
    except Exception as exc:  # noqa: BLE001 - reported with the replication index
        raise ReplicationError(r, exc) from exc


def run_lan(config: LanExperimentConfig, workers: int = 1) -> LanReport:
    """Sample the log-likelihood ratio at the local alternative over replications."""
    alt = config.perturbed
    pred_mean, pred_var = lan_limit_moments(config.params0, config.z)
    if config.z.is_zero():
        sample = np.zeros(config.reps)
    else:
        sample = np.array(_run_indexed(_lan_rep, [(config, alt, r) for r in range(config.reps)], workers))
    mean, var = float(sample.mean()), float(sample.var(ddof=1))
    degenerate = pred_var == 0.0 or var == 0.0
    if degenerate:
        ks_stat = ks_p = None
    else:
        ks = stats.kstest(sample, "norm", args=(pred_mean, math.sqrt(pred_var)))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    ks_crit = float(stats.kstwobign.isf(KS_LEVEL) / math.sqrt(config.reps))
    return LanReport(
        sample=sample,
        empirical_mean=mean,
        empirical_var=var,
        predicted_mean=pred_mean,
        predicted_var=pred_var,
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        ks_critical=ks_crit,
        degenerate=degenerate,
        standard_errors={
            "mean": math.sqrt(var / config.reps),
            "var": _variance_se(sample),
            "ks": ks_crit,
        },
        metadata={
            "config": config.to_dict(),
            "perturbed": alt.to_dict(),
            "rng": RNG_ALGORITHM,
            "ks_level": KS_LEVEL,
            "ks_rejects": None if ks_stat is None else bool(ks_stat > ks_crit),
        },
    )


@dataclass(frozen=True)
class EfficiencyReport:
    normalized_errors: np.ndarray
    empirical_cov: np.ndarray
    bound: np.ndarray
    diag_ratio: np.ndarray
    mean_error: np.ndarray
    z_scores: np.ndarray
    reps_used: int
    failures: int
    failed_indices: list
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "normalized_errors": self.normalized_errors.tolist(),
            "empirical_cov": self.empirical_cov.tolist(),
            "bound": self.bound.tolist(),
            "diag_ratio": self.diag_ratio.tolist(),
            "mean_error": self.mean_error.tolist(),
            "z_scores": self.z_scores.tolist(),
            "reps_used": self.reps_used,
            "failures": self.failures,
            "failed_indices": self.failed_indices,
            "metadata": self.metadata,
        }


def _efficiency_rep(task):
    params0, scheme, seed, fit_config, r = task
    try:
        path = simulate_path(params0, scheme, RngStream(seed, r))
        report = fit_mle(path, fit_config)
    except Exception as exc:  # noqa: BLE001
        raise ReplicationError(r, exc) from exc
    return report.estimate.as_array(), report.converged, report.iterations


def run_efficiency(
    params0: ModelParams,
    scheme: SamplingScheme,
    reps: int,
    seed: int,
    config: FitConfig = FitConfig(),
    workers: int = 1,
) -> EfficiencyReport:
    """Compare the spread of phi_n (MLE - truth) with Gamma^{-1}."""
    if reps < 100:
        raise ValueError("reps must be >= 100")
    results = _run_indexed(
        _efficiency_rep, [(params0, scheme, seed, config, r) for r in range(reps)], workers
    )
    failed = [r for r, (_, ok, _) in enumerate(results) if not ok]
    if len(failed) > MAX_FAILURE_FRACTION * reps:
        raise ReplicationError(failed[0], f"{len(failed)} of {reps} fits did not converge")
    rate = rate_matrix(scheme)
    est = np.array([e for e, ok, _ in results if ok])
    errors = (est - params0.as_array()) * rate
    cov = np.cov(errors, rowvar=False)
    bound = np.linalg.inv(fisher_matrix(params0))
    mean_err = errors.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = mean_err / np.sqrt(np.diag(cov) / errors.shape[0])
    return EfficiencyReport(
        normalized_errors=errors,
        empirical_cov=cov,
        bound=bound,
        diag_ratio=np.diag(cov) / np.diag(bound),
        mean_error=mean_err,
        z_scores=z,
        reps_used=int(errors.shape[0]),
        failures=len(failed),
        failed_indices=failed,
        metadata={
            "params0": params0.to_dict(),
            "scheme": scheme.to_dict(),
            "reps": reps,
            "seed": seed,
            "fit": config.to_dict(),
            "rng": RNG_ALGORITHM,
            "mean_iterations": float(np.mean([it for _, _, it in results])),
        },
    )


TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "square": np.square,
    "abs": np.abs,
    "cube": lambda x: x**3,
}


@dataclass(frozen=True)
class ErgodicReport:
    g: str
    average: float
    predicted: Optional[float]
    metadata: dict

    def to_dict(self) -> dict:
        return {"g": self.g, "average": self.average, "predicted": self.predicted, "metadata": self.metadata}


def run_ergodic(params0: ModelParams, scheme: SamplingScheme, g: str, seed: int) -> ErgodicReport:
    """(1/n) sum_{k<n} g(X_{t_k}) along one simulated path."""
    if g not in TEST_FUNCTIONS:
        raise KeyError(f"unknown test function {g!r}; choose from {sorted(TEST_FUNCTIONS)}")
    path = simulate_path(params0, scheme, RngStream(seed, 0))
    average = float(np.mean(TEST_FUNCTIONS[g](path.values[:-1])))
    first, second = invariant_moments(params0)
    predicted = {"identity": first, "square": second}.get(g)
    return ErgodicReport(
        g=g,
        average=average,
        predicted=predicted,
        metadata={"params0": params0.to_dict(), "scheme": scheme.to_dict(), "seed": seed, "rng": RNG_ALGORITHM},
    )
