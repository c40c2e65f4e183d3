"""Exact discrete-observation likelihood and maximum likelihood fitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from jumpou.core import DiscretePath, ModelParams, fisher_info, fisher_matrix
from jumpou.density import (
    DEFAULT_MIXTURE,
    MixtureConfig,
    _log_density_and_grad,
    jump_posterior,
    log_transition_density,
)

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 40


class LikelihoodError(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite log-density on interval {index}")
        self.index = index


def _terms(path: DiscretePath, params: ModelParams, config: MixtureConfig) -> np.ndarray:
    x = path.values
    terms = np.asarray(log_transition_density(params, path.delta, x[:-1], x[1:], config))
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise LikelihoodError(int(bad[0]))
    return terms


def log_likelihood(path: DiscretePath, params: ModelParams, config: MixtureConfig = DEFAULT_MIXTURE) -> float:
    """sum_k log p(delta, X_{t_k}, X_{t_{k+1}}); the law of X_{t_0} is not modelled."""
    return float(np.sum(_terms(path, params, config)))


def log_likelihood_ratio(
    path: DiscretePath, base: ModelParams, alt: ModelParams, config: MixtureConfig = DEFAULT_MIXTURE
) -> float:
    """log p_n(X; alt) - log p_n(X; base), differenced interval by interval."""
    if alt == base:
        return 0.0
    return float(np.sum(_terms(path, alt, config) - _terms(path, base, config)))


def _loglik_and_score(path, params, config):
    x = path.values
    logp, grad = _log_density_and_grad(params, path.delta, x[:-1], x[1:], config)
    bad = np.flatnonzero(~np.isfinite(logp) | ~np.all(np.isfinite(grad), axis=-1))
    if bad.size:
        raise LikelihoodError(int(bad[0]))
    return float(np.sum(logp)), grad.sum(axis=0)


def score(path: DiscretePath, params: ModelParams, config: MixtureConfig = DEFAULT_MIXTURE) -> np.ndarray:
    """Gradient of the log-likelihood in (theta, sigma, lambda)."""
    return _loglik_and_score(path, params, config)[1]


def observed_information(
    path: DiscretePath, params: ModelParams, config: MixtureConfig = DEFAULT_MIXTURE
) -> np.ndarray:
    """Numeric Hessian of -log_likelihood by central second differences.

    Step sizes are 1e-4 * (1 + |param|).  Differences are formed interval by
    interval before summing to limit cancellation.
    """
    p0 = params.as_array()
    h = 1e-4 * (1.0 + np.abs(p0))
    base = _terms(path, params, config)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def shifted(steps: tuple[int, ...]) -> np.ndarray:
        if steps not in cache:
            p = p0 + np.array(steps) * h
            try:
                cache[steps] = _terms(path, ModelParams.from_array(p), config) - base
            except ValueError as exc:
                raise FloatingPointError(f"finite-difference point left the parameter space: {exc}")
        return cache[steps]

    H = np.empty((3, 3))
    for i in range(3):
        e = [0, 0, 0]
        e[i] = 1
        plus = shifted(tuple(e))
        e[i] = -1
        minus = shifted(tuple(e))
        H[i, i] = -float(np.sum(plus + minus)) / h[i] ** 2
        for j in range(i):
            acc = np.zeros_like(base)
            for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                e = [0, 0, 0]
                e[i], e[j] = si, sj
                acc += sign * shifted(tuple(e))
            H[i, j] = H[j, i] = -float(np.sum(acc)) / (4.0 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite second differences")
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    grad_tol: float = 1e-8
    init: Optional[ModelParams] = None
    bounds: Optional[tuple[tuple[float, float], tuple[float, float], tuple[float, float]]] = None
    mixture: MixtureConfig = field(default_factory=MixtureConfig)

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.bounds is not None:
            for lo, hi in self.bounds:
                if not 0.0 < lo < hi:
                    raise ValueError("bounds must satisfy 0 < lower < upper")

    def to_dict(self) -> dict:
        return {
            "max_iter": self.max_iter,
            "grad_tol": self.grad_tol,
            "init": "AUTO" if self.init is None else self.init.to_dict(),
            "bounds": None if self.bounds is None else [list(b) for b in self.bounds],
            "mixture": self.mixture.to_dict(),
        }


@dataclass(frozen=True)
class FitReport:
    estimate: ModelParams
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    asymptotic_cov: np.ndarray
    stderr: np.ndarray
    init: ModelParams
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_dict(),
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "asymptotic_cov": self.asymptotic_cov.tolist(),
            "stderr": self.stderr.tolist(),
            "init": self.init.to_dict(),
            "message": self.message,
        }


def initial_guess(path: DiscretePath, config: MixtureConfig = DEFAULT_MIXTURE) -> ModelParams:
    """Deterministic method-of-moments starting point.

    theta from the lag-1 autocorrelation, sigma^2 from the realised quadratic
    variation minus one unit per detected jump (increments beyond a robust
    threshold), lambda from the posterior expected jump count under those two.
    """
    x = path.values
    delta, horizon = path.delta, path.scheme.horizon
    xc = x - x.mean()
    rho = float(xc[:-1] @ xc[1:] / (xc[:-1] @ xc[:-1]))
    theta = float(np.clip(-math.log(rho) / delta if rho > 0 else 1e3, 1e-3, 1e3))

    dx = np.diff(x)
    qv = float(dx @ dx)
    # the scaled MAD tolerates a jump fraction that bipower variation does not when lambda*delta is large
    centred = dx - np.median(dx)
    robust_sd = max(1.4826 * float(np.median(np.abs(centred))), 1e-12)
    threshold = max(0.5, 4.0 * robust_sd)
    jumps = int(np.count_nonzero(np.abs(centred) > threshold))
    sigma2 = max(qv - jumps, 0.1 * qv) / horizon
    lam0 = max(jumps, 1) / horizon

    trial = ModelParams(theta, math.sqrt(sigma2), lam0)
    expected = float(np.sum(jump_posterior(trial, delta, x[:-1], x[1:], config).mean()))
    lam = max(expected, 0.5) / horizon
    return ModelParams(theta, math.sqrt(sigma2), lam)


def _project(eta: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return eta
    lo = np.log([b[0] for b in bounds])
    hi = np.log([b[1] for b in bounds])
    return np.clip(eta, lo, hi)


def fit_mle(path: DiscretePath, config: FitConfig = FitConfig()) -> FitReport:
    """Maximise the exact log-likelihood over (log theta, log sigma, log lambda).

    BFGS on the negative mean log-likelihood per interval with an Armijo
    backtracking line search (c = 1e-4, step halving).  Convergence is
    declared when the Euclidean norm of the score in the natural parameters
    is at most ``grad_tol``.
    """
    if path.n < 10:
        raise ValueError("fit_mle needs a path with n >= 10")
    if np.ptp(path.values) == 0.0:
        raise ValueError("degenerate path: all observed values are equal")
    mix = config.mixture
    start = config.init if config.init is not None else initial_guess(path, mix)
    n = path.n

    def evaluate(eta):
        params = ModelParams.from_array(np.exp(eta))
        ll, sc = _loglik_and_score(path, params, mix)
        # objective and gradient in log coordinates
        return -ll / n, -(sc * params.as_array()) / n, ll, sc

    eta = _project(np.log(start.as_array()), config.bounds)
    f, g, ll, sc = evaluate(eta)
    Hinv = np.eye(3)
    iterations = 0
    converged = bool(np.linalg.norm(sc) <= config.grad_tol)
    message = "initial point satisfies the gradient tolerance" if converged else ""
    while not converged and iterations < config.max_iter:
        direction = -Hinv @ g
        slope = float(g @ direction)
        if slope >= 0.0:
            Hinv = np.eye(3)
            direction, slope = -g, -float(g @ g)
        step = 1.0
        accepted = None
        # Near the optimum f is flat to rounding and Armijo is decided by noise;
        # a step that keeps f within rounding and shrinks the score is taken instead.
        noise = 64.0 * np.finfo(float).eps * max(abs(f), 1.0)
        score_norm = np.linalg.norm(sc)
        for _ in range(MAX_HALVINGS):
            trial = _project(eta + step * direction, config.bounds)
            try:
                cand = evaluate(trial)
            except (ValueError, FloatingPointError):
                step *= 0.5
                continue
            flat = cand[0] <= f + noise and np.linalg.norm(cand[3]) < score_norm
            if flat or cand[0] <= f + ARMIJO_C * step * slope:
                accepted = (trial, cand)
                break
            step *= 0.5
        if accepted is None:
            message = "line search failed"
            break
        trial, (f_new, g_new, ll_new, sc_new) = accepted
        s = trial - eta
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if iterations == 0:
                Hinv = np.eye(3) * sy / float(yv @ yv)
            rho = 1.0 / sy
            V = np.eye(3) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        eta, f, g, ll, sc = trial, f_new, g_new, ll_new, sc_new
        iterations += 1
        converged = bool(np.linalg.norm(sc) <= config.grad_tol)
    if not converged and not message:
        message = f"no convergence after {config.max_iter} iterations"
    estimate = ModelParams.from_array(np.exp(eta))
    cov = fisher_info(estimate, path.scheme).normalized_covariance()
    log.debug("fit_mle: %s after %d iterations, |score|=%.3g", estimate, iterations, np.linalg.norm(sc))
    return FitReport(
        estimate=estimate,
        loglik=ll,
        grad_norm=float(np.linalg.norm(sc)),
        iterations=iterations,
        converged=converged,
        asymptotic_cov=cov,
        stderr=np.sqrt(np.diag(cov)),
        init=start,
        message=message or "converged",
    )


def expected_information(params: ModelParams, path: DiscretePath) -> np.ndarray:
    """phi_n Gamma phi_n, the information scale implied by the asymptotic theory."""
    info = fisher_info(params, path.scheme)
    return fisher_matrix(params) * np.outer(info.rate, info.rate)
