"""Poisson mixture transition density and its parameter derivatives.

    p(delta, x, y) = sum_j q_j(delta, x, y) e^{-lambda delta} (lambda delta)^j / j!

q_0 is Gaussian; q_j averages a Gaussian with mean shifted by the jump-shift
sum S over j iid uniform offsets (see :mod:`jumpou.quadrature`).  All mixture
work is done in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr
from scipy.stats import poisson

from jumpou.core import ModelParams
from jumpou.quadrature import MAX_REDUCED_WIDTH, shift_rule
from jumpou.simulate import RngStream, _check_offsets, jump_shift, sample_transitions, step_coefficients

ArrayLike = Union[float, np.ndarray]

J_CAP = 64
CHUNK_ELEMENTS = 1 << 21
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixtureConfig:
    """Truncation and quadrature settings for the jump mixture.

    ``j_max=None`` selects the truncation automatically: the smallest J whose
    Poisson tail beyond J, times the Gaussian peak height, is below
    ``tail_epsilon``.  ``reduce_to`` is the size of the Gauss rule the cube
    rule of each j-term is reduced to (0 disables the reduction).
    """

    j_max: Optional[int] = None
    tail_epsilon: float = 1e-12
    quadrature_order: int = 32
    mc_nodes: int = 4096
    reduce_to: int = 32

    def __post_init__(self):
        if self.j_max is not None and (int(self.j_max) != self.j_max or self.j_max < 0):
            raise ValueError(f"j_max must be a non-negative integer or None, got {self.j_max!r}")
        if not 0.0 < self.tail_epsilon < 1e-6:
            raise ValueError("tail_epsilon must lie in (0, 1e-6)")
        if self.quadrature_order < 8:
            raise ValueError("quadrature_order must be >= 8")
        if self.mc_nodes < 16:
            raise ValueError("mc_nodes must be >= 16")
        if self.reduce_to < 0:
            raise ValueError("reduce_to must be >= 0")

    def to_dict(self) -> dict:
        return {
            "j_max": "AUTO" if self.j_max is None else int(self.j_max),
            "tail_epsilon": self.tail_epsilon,
            "quadrature_order": self.quadrature_order,
            "mc_nodes": self.mc_nodes,
            "reduce_to": self.reduce_to,
        }


DEFAULT_MIXTURE = MixtureConfig()


@dataclass(frozen=True)
class JumpPosterior:
    probabilities: np.ndarray

    def mode(self) -> np.ndarray:
        # argmax returns the first maximum, i.e. ties go to the smaller j
        return np.argmax(self.probabilities, axis=-1)

    def mean(self) -> np.ndarray:
        j = np.arange(self.probabilities.shape[-1])
        return self.probabilities @ j


def truncation_level(params: ModelParams, delta: float, config: MixtureConfig = DEFAULT_MIXTURE) -> int:
    if config.j_max is not None:
        return int(config.j_max)
    _, _, var = step_coefficients(params, delta)
    peak = 1.0 / math.sqrt(2.0 * math.pi * var)
    mean = params.lam * delta
    for J in range(J_CAP + 1):
        if poisson.sf(J, mean) * peak < config.tail_epsilon:
            return J
    warnings.warn(
        f"Poisson truncation capped at J={J_CAP} (lambda*delta={mean:.4g}); "
        "tail bound not met",
        RuntimeWarning,
        stacklevel=3,
    )
    return J_CAP


@dataclass(frozen=True)
class _Mixture:
    """Flattened mixture: one entry per (j, quadrature node)."""

    shifts: np.ndarray
    log_weights: np.ndarray
    dshift: np.ndarray
    jumps: np.ndarray
    J: int


def _node_rule(params: ModelParams, delta: float, j: int, var: float, config: MixtureConfig):
    kappa = params.theta * delta
    reduce_to = config.reduce_to
    if reduce_to and j * (-math.expm1(-kappa)) > MAX_REDUCED_WIDTH * math.sqrt(var):
        reduce_to = 0
    return shift_rule(kappa, j, config.quadrature_order, config.mc_nodes, reduce_to)


def _mixture(params: ModelParams, delta: float, config: MixtureConfig, var: float) -> _Mixture:
    J = truncation_level(params, delta, config)
    lam_delta = params.lam * delta
    shifts, logw, dshift, jumps = [], [], [], []
    for j in range(J + 1):
        rule = _node_rule(params, delta, j, var, config)
        log_pois = -lam_delta + j * math.log(lam_delta) - gammaln(j + 1)
        shifts.append(rule.nodes)
        logw.append(log_pois + np.log(rule.weights))
        dshift.append(rule.dshift)
        jumps.append(np.full(rule.size, j))
    return _Mixture(
        np.concatenate(shifts), np.concatenate(logw), np.concatenate(dshift), np.concatenate(jumps), J
    )


def _over_chunks(fn, x, y, nodes: int):
    """Evaluate fn on flattened, broadcast (x, y) in slices.

    fn maps 1-D x, y of equal length to a tuple of arrays whose first axis
    runs over the points; each slice keeps the points-by-nodes temporaries
    near CHUNK_ELEMENTS entries.
    """
    xb, yb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    xf, yf = xb.ravel(), yb.ravel()
    step = max(1, CHUNK_ELEMENTS // max(nodes, 1))
    if xf.size <= step:
        parts = [fn(xf, yf)]
    else:
        parts = [fn(xf[i : i + step], yf[i : i + step]) for i in range(0, xf.size, step)]
    return tuple(
        np.concatenate(pieces).reshape(xb.shape + pieces[0].shape[1:]) for pieces in zip(*parts)
    )


def _log_terms(mix: _Mixture, coeffs, x, y):
    """Log of every mixture term for 1-D x, y; shape (len(y), K), plus the residuals."""
    a, drift, var = coeffs
    err = (y - (x * a + drift))[:, None] - mix.shifts
    logt = mix.log_weights - 0.5 * (LOG_2PI + math.log(var)) - 0.5 * err**2 / var
    return logt, err


def _setup(params, delta, config):
    coeffs = step_coefficients(params, delta)
    return _mixture(params, delta, config, coeffs[2]), coeffs


def _gaussian_logpdf(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - mean) ** 2 / var


def _scalar_or_array(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def q0(params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike) -> ArrayLike:
    """No-jump transition density: Gaussian with the compensated drift."""
    a, drift, var = step_coefficients(params, delta)
    return _scalar_or_array(np.exp(_gaussian_logpdf(np.asarray(y, float), np.asarray(x, float) * a + drift, var)))


def qj_given_times(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, offsets: Sequence[float]
) -> ArrayLike:
    """Transition density given the jump offsets (0 < u_i < delta) in the step."""
    offsets = _check_offsets(offsets, delta)
    a, drift, var = step_coefficients(params, delta)
    mean = np.asarray(x, float) * a + drift + jump_shift(params.theta, delta, offsets)
    return _scalar_or_array(np.exp(_gaussian_logpdf(np.asarray(y, float), mean, var)))


def qj_marginal(
    params: ModelParams,
    delta: float,
    x: ArrayLike,
    y: ArrayLike,
    j: int,
    config: MixtureConfig = DEFAULT_MIXTURE,
) -> ArrayLike:
    """Transition density given exactly j >= 1 jumps.

    Averages ``qj_given_times`` over iid uniform offsets on (0, delta)^j;
    equal to the ordered-offset integral with prefactor j!/delta^j.
    """
    if int(j) != j or j < 1:
        raise ValueError(f"j must be an integer >= 1, got {j!r}")
    a, drift, var = step_coefficients(params, delta)
    rule = _node_rule(params, delta, int(j), var, config)
    log_w = np.log(rule.weights)

    def chunk(xs, ys):
        logt = log_w + _gaussian_logpdf((ys - (xs * a + drift))[:, None], rule.nodes, var)
        return (np.exp(logsumexp(logt, axis=-1)),)

    return _scalar_or_array(_over_chunks(chunk, x, y, rule.size)[0])


def log_transition_density(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, config: MixtureConfig = DEFAULT_MIXTURE
) -> ArrayLike:
    mix, coeffs = _setup(params, delta, config)

    def chunk(xs, ys):
        return (logsumexp(_log_terms(mix, coeffs, xs, ys)[0], axis=-1),)

    return _scalar_or_array(_over_chunks(chunk, x, y, mix.shifts.size)[0])


def transition_density(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, config: MixtureConfig = DEFAULT_MIXTURE
) -> ArrayLike:
    return _scalar_or_array(np.exp(log_transition_density(params, delta, x, y, config)))


def transition_cdf(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, config: MixtureConfig = DEFAULT_MIXTURE
) -> ArrayLike:
    """P(X_{t+delta} <= y | X_t = x) under the truncated mixture."""
    mix, (a, drift, var) = _setup(params, delta, config)
    weights = np.exp(mix.log_weights)

    def chunk(xs, ys):
        z = ((ys - (xs * a + drift))[:, None] - mix.shifts) / math.sqrt(var)
        return (ndtr(z) @ weights,)

    return _scalar_or_array(_over_chunks(chunk, x, y, mix.shifts.size)[0])


def _log_density_and_grad(params, delta, x, y, config):
    """log p and its (theta, sigma, lambda) gradient, with the gradient in the last axis."""
    th, sig, lam = params.theta, params.sigma, params.lam
    mix, coeffs = _setup(params, delta, config)
    a, drift, var = coeffs
    one_minus_a = -math.expm1(-th * delta)
    # derivatives of the no-jump mean x a + drift and of the variance
    dmean_dlam = -one_minus_a / th
    dvar_dth = sig**2 * (delta * a * a / th - (-math.expm1(-2.0 * th * delta)) / (2.0 * th**2))
    dshift_dth = -delta * mix.dshift
    dlam_jumps = mix.jumps / lam - delta

    def chunk(xs, ys):
        logt, err = _log_terms(mix, coeffs, xs, ys)
        logp = logsumexp(logt, axis=-1)
        resp = np.exp(logt - logp[:, None])
        dmean_dth = (-xs * delta * a + lam * one_minus_a / th**2 - lam * delta * a / th)[:, None]
        ev = err / var
        sq = err**2 / var - 1.0
        g_th = ev * (dmean_dth + dshift_dth) + (0.5 * sq / var) * dvar_dth
        g_sig = sq / sig
        g_lam = ev * dmean_dlam + dlam_jumps
        grad = np.stack([(resp * g).sum(axis=-1) for g in (g_th, g_sig, g_lam)], axis=-1)
        return logp, grad

    return _over_chunks(chunk, x, y, mix.shifts.size)


def log_density_grad(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, config: MixtureConfig = DEFAULT_MIXTURE
) -> np.ndarray:
    """Gradient of log p(delta, x, y) in (theta, sigma, lambda); shape (..., 3)."""
    return _log_density_and_grad(params, delta, x, y, config)[1]


def jump_posterior(
    params: ModelParams, delta: float, x: ArrayLike, y: ArrayLike, config: MixtureConfig = DEFAULT_MIXTURE
) -> JumpPosterior:
    """Posterior probabilities of j = 0..J jumps in the step given (x, y)."""
    mix, coeffs = _setup(params, delta, config)

    def chunk(xs, ys):
        logt = _log_terms(mix, coeffs, xs, ys)[0]
        resp = np.exp(logt - logsumexp(logt, axis=-1)[:, None])
        probs = np.stack([resp[:, mix.jumps == j].sum(axis=-1) for j in range(mix.J + 1)], axis=-1)
        # summing many node responsibilities can overshoot 1 by a few ulps
        probs = np.clip(probs, 0.0, 1.0)
        return (probs / probs.sum(axis=-1, keepdims=True),)

    probs = _over_chunks(chunk, x, y, mix.shifts.size)[0]
    return JumpPosterior(probs)


@dataclass(frozen=True)
class MisclassificationRates:
    delta: float
    reps: int
    zero_as_jump: float
    one_misread: float
    two_or_more: float
    mismatch: float

    def standard_error(self, rate: float) -> float:
        return math.sqrt(max(rate * (1.0 - rate), 1.0 / self.reps) / self.reps)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "reps": self.reps,
            "zero_as_jump": self.zero_as_jump,
            "one_misread": self.one_misread,
            "two_or_more": self.two_or_more,
            "mismatch": self.mismatch,
        }


def misclassification_scan(
    params: ModelParams,
    deltas: Sequence[float],
    reps: int,
    rng: RngStream,
    x: float = 0.0,
    config: MixtureConfig = DEFAULT_MIXTURE,
) -> list[MisclassificationRates]:
    """Frequencies with which the posterior-mode jump count misreads the true count.

    For each delta, ``reps`` transitions from ``x`` are simulated with their
    true counts J; reported are the joint frequencies of {J = 0, mode >= 1},
    {J = 1, mode != 1}, {J >= 2} and the overall {mode != J}.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    out = []
    for delta in deltas:
        y, counts = sample_transitions(params, delta, x, reps, rng)
        mode = jump_posterior(params, delta, x, y, config).mode()
        out.append(
            MisclassificationRates(
                delta=float(delta),
                reps=reps,
                zero_as_jump=float(np.mean((counts == 0) & (mode >= 1))),
                one_misread=float(np.mean((counts == 1) & (mode != 1))),
                two_or_more=float(np.mean(counts >= 2)),
                mismatch=float(np.mean(mode != counts)),
            )
        )
    return out
