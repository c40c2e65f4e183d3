"""Domain types and closed-form asymptotic quantities.

The model is

    dX_t = -theta X_t dt + sigma dB_t + d(N_t - lambda t),

with N a unit-jump Poisson process of intensity lambda.  Observations are
taken on the grid t_k = k * delta, k = 0..n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ParameterError(ValueError):
    """Invalid value for a named field."""

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ParameterError(name, f"must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True)
class ModelParams:
    theta: float
    sigma: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _check_positive("theta", self.theta))
        object.__setattr__(self, "sigma", _check_positive("sigma", self.sigma))
        object.__setattr__(self, "lam", _check_positive("lambda", self.lam))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ModelParams":
        theta, sigma, lam = (float(v) for v in values)
        return cls(theta, sigma, lam)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.sigma, self.lam])

    def to_dict(self) -> dict:
        return {"theta": self.theta, "sigma": self.sigma, "lambda": self.lam}


@dataclass(frozen=True)
class SamplingScheme:
    n: int
    delta: float
    x0: float = 0.0

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ParameterError("n", f"must be an integer >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        delta = _check_positive("delta", self.delta)
        if delta > 1.0:
            raise ParameterError("delta", f"must satisfy 0 < delta <= 1, got {delta!r}")
        object.__setattr__(self, "delta", delta)
        x0 = float(self.x0)
        if not math.isfinite(x0):
            raise ParameterError("x0", "must be finite")
        object.__setattr__(self, "x0", x0)

    @classmethod
    def from_rule(cls, n: int, exponent: float = 0.6, x0: float = 0.0) -> "SamplingScheme":
        """Scheme with delta = n ** -exponent."""
        return cls(n, float(n) ** (-exponent), x0)

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.delta

    def to_dict(self) -> dict:
        return {"n": self.n, "delta": self.delta, "x0": self.x0}


@dataclass(frozen=True)
class LocalAlternative:
    """Local perturbation directions (u, v, w) for (theta, sigma, lambda)."""

    u: float = 0.0
    v: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        for name in ("u", "v", "w"):
            if not math.isfinite(float(getattr(self, name))):
                raise ParameterError(name, "must be finite")
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w])

    def is_zero(self) -> bool:
        return self.u == 0.0 and self.v == 0.0 and self.w == 0.0

    def perturb(self, params: ModelParams, scheme: SamplingScheme) -> ModelParams:
        """theta + u/sqrt(n delta), sigma + v/sqrt(n), lambda + w/sqrt(n delta)."""
        rate = rate_matrix(scheme)
        shifted = params.as_array() + self.as_array() / rate
        names = ("theta", "sigma", "lambda")
        for name, value in zip(names, shifted):
            if value <= 0.0:
                raise ParameterError(name, f"perturbed value {value!r} is not positive")
        return ModelParams.from_array(shifted)

    def to_dict(self) -> dict:
        return {"u": self.u, "v": self.v, "w": self.w}


@dataclass(frozen=True)
class JumpRecord:
    """Latent jump structure: per-interval counts and offsets from t_k.

    ``offsets`` is flat; the jumps of interval k are
    ``offsets[starts[k]:starts[k] + counts[k]]``.
    """

    counts: np.ndarray
    offsets: np.ndarray
    delta: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=float)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError("counts must be a 1-d array of non-negative integers")
        if offsets.shape != (int(counts.sum()),):
            raise ValueError("offsets length must equal the total jump count")
        if offsets.size and (offsets.min() <= 0.0 or offsets.max() >= self.delta):
            raise ValueError("jump offsets must lie strictly inside (0, delta)")
        starts = self.starts_from(counts)
        for k in np.flatnonzero(counts > 1):
            seg = offsets[starts[k]:starts[k] + counts[k]]
            if np.any(np.diff(seg) <= 0.0):
                raise ValueError(f"jump offsets in interval {k} are not strictly increasing")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "offsets", offsets)

    @staticmethod
    def starts_from(counts: np.ndarray) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)

    def interval(self, k: int) -> np.ndarray:
        start = int(self.counts[:k].sum())
        return self.offsets[start:start + int(self.counts[k])]

    def jump_times(self) -> tuple[np.ndarray, np.ndarray]:
        """(interval index, absolute time) for every jump."""
        k = np.repeat(np.arange(self.counts.size), self.counts)
        return k, k * self.delta + self.offsets


@dataclass(frozen=True)
class DiscretePath:
    scheme: SamplingScheme
    values: np.ndarray
    latent: Optional[JumpRecord] = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.scheme.n + 1,):
            raise ValueError(
                f"expected {self.scheme.n + 1} values for n={self.scheme.n}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.latent is not None and self.latent.counts.size != self.scheme.n:
            raise ValueError("latent jump record must have one entry per interval")

    @property
    def n(self) -> int:
        return self.scheme.n

    @property
    def delta(self) -> float:
        return self.scheme.delta

    def times(self) -> np.ndarray:
        return self.scheme.times()


@dataclass(frozen=True)
class FisherInfo:
    gamma: np.ndarray
    rate: np.ndarray

    def normalized_covariance(self) -> np.ndarray:
        """phi_n^-1 Gamma^-1 phi_n^-1: the plug-in covariance of an efficient estimator."""
        inv_rate = 1.0 / self.rate
        return np.linalg.inv(self.gamma) * np.outer(inv_rate, inv_rate)


def fisher_matrix(params: ModelParams) -> np.ndarray:
    """Asymptotic Fisher information Gamma(theta, sigma, lambda).

    ``(1/sigma^2) diag((sigma^2 + 1) / (2 theta), 2, 1 + sigma^2 / lambda)``
    """
    th, s2, lam = params.theta, params.sigma**2, params.lam
    return np.diag([(s2 + 1.0) / (2.0 * th), 2.0, 1.0 + s2 / lam]) / s2


def rate_matrix(scheme: SamplingScheme) -> np.ndarray:
    """Diagonal of phi_n = diag(sqrt(n delta), sqrt(n), sqrt(n delta))."""
    slow = math.sqrt(scheme.n * scheme.delta)
    return np.array([slow, math.sqrt(scheme.n), slow])


def fisher_info(params: ModelParams, scheme: SamplingScheme) -> FisherInfo:
    return FisherInfo(fisher_matrix(params), rate_matrix(scheme))


def lan_limit_moments(params: ModelParams, z: LocalAlternative) -> tuple[float, float]:
    """Mean and variance of the Gaussian limit of the log-likelihood ratio."""
    zv = z.as_array()
    quad = float(zv @ fisher_matrix(params) @ zv)
    return -0.5 * quad, quad


def invariant_moments(params: ModelParams) -> tuple[float, float]:
    """First and second moment of the invariant law, (0, (sigma^2 + 1) / (2 theta)).

    The second moment is the value entering Gamma[0, 0]; it coincides with
    the stationary variance (sigma^2 + lambda) / (2 theta) of the simulated
    process when lambda = 1.
    """
    return 0.0, (params.sigma**2 + 1.0) / (2.0 * params.theta)


def stationary_variance(params: ModelParams) -> float:
    """Stationary variance of the process, (sigma^2 + lambda) / (2 theta)."""
    return (params.sigma**2 + params.lam) / (2.0 * params.theta)
