"""Exact simulation from the explicit solution.

Over one step of length delta started at x,

    X = x e^{-theta delta} - (lambda/theta)(1 - e^{-theta delta})
        + sum_i e^{-theta (delta - u_i)} + sqrt(v) Z,

with u_i the jump offsets of a Poisson(lambda delta) number of jumps placed
as sorted uniforms on (0, delta) and v = sigma^2 (1 - e^{-2 theta delta}) / (2 theta).
No time discretisation is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from jumpou.core import DiscretePath, JumpRecord, ModelParams, SamplingScheme

RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(stream_id,))"


@dataclass
class RngStream:
    """Seeded random stream; distinct ``stream_id`` values are independent.

    A fresh ``RngStream(seed, stream_id)`` always replays the same draws.
    The stream is stateful: one owner at a time.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or not 0 <= value < 2**64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {value!r}")
        self.seed = int(self.seed)
        self.stream_id = int(self.stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def metadata(self) -> dict:
        return {"seed": self.seed, "stream_id": self.stream_id, "algorithm": RNG_ALGORITHM}


@dataclass(frozen=True)
class TransitionDraw:
    x_next: float
    jump_count: int
    jump_offsets: np.ndarray


def step_coefficients(params: ModelParams, delta: float) -> tuple[float, float, float]:
    """(e^{-theta delta}, -(lambda/theta)(1 - e^{-theta delta}), conditional variance)."""
    th = params.theta
    a = np.exp(-th * delta)
    drift = -(params.lam / th) * (-np.expm1(-th * delta))
    var = params.sigma**2 * (-np.expm1(-2.0 * th * delta)) / (2.0 * th)
    return float(a), float(drift), float(var)


def _check_offsets(offsets: np.ndarray, delta: float) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=float).ravel()
    if offsets.size and (offsets.min() <= 0.0 or offsets.max() >= delta):
        raise ValueError(f"jump offsets must lie strictly inside (0, {delta})")
    return offsets


def jump_shift(theta: float, delta: float, offsets: Sequence[float]) -> float:
    """sum_i exp(-theta (delta - u_i))."""
    offsets = np.asarray(offsets, dtype=float)
    return float(np.exp(-theta * (delta - offsets)).sum())


def conditional_mean_var(
    params: ModelParams, delta: float, x: float, jump_offsets: Sequence[float] = ()
) -> tuple[float, float]:
    """Mean and variance of X_{t+delta} given X_t = x and the jump offsets in the step.

    The variance does not depend on x or on the jumps.
    """
    offsets = _check_offsets(jump_offsets, delta)
    a, drift, var = step_coefficients(params, delta)
    return x * a + drift + jump_shift(params.theta, delta, offsets), var


def sample_transition(params: ModelParams, delta: float, x: float, rng: RngStream) -> TransitionDraw:
    gen = rng.generator
    count = int(gen.poisson(params.lam * delta))
    offsets = np.sort(_uniform_offsets(gen, count, delta))
    mean, var = conditional_mean_var(params, delta, x, offsets)
    return TransitionDraw(mean + np.sqrt(var) * gen.standard_normal(), count, offsets)


def _uniform_offsets(gen: np.random.Generator, size: int, delta: float) -> np.ndarray:
    u = gen.random(size) * delta
    # keep strictly inside (0, delta)
    return np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(delta, 0.0))


def sample_transitions(
    params: ModelParams, delta: float, x: np.ndarray | float, size: int, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """``size`` independent one-step draws from x (scalar or array); returns (x_next, counts)."""
    gen = rng.generator
    x = np.broadcast_to(np.asarray(x, dtype=float), (size,))
    counts = gen.poisson(params.lam * delta, size)
    shifts = _interval_shifts(gen, params.theta, delta, counts)[0]
    a, drift, var = step_coefficients(params, delta)
    z = gen.standard_normal(size)
    return x * a + drift + shifts + np.sqrt(var) * z, counts


def _interval_shifts(gen: np.random.Generator, theta: float, delta: float, counts: np.ndarray):
    total = int(counts.sum())
    idx = np.repeat(np.arange(counts.size), counts)
    u = _uniform_offsets(gen, total, delta)
    order = np.lexsort((u, idx))
    u = u[order]
    shifts = np.bincount(idx, weights=np.exp(-theta * (delta - u)), minlength=counts.size)
    return shifts, u


def simulate_path(
    params: ModelParams, scheme: SamplingScheme, rng: RngStream, keep_latent: bool = False
) -> DiscretePath:
    """Exact path on t_k = k delta, k = 0..n, started at scheme.x0."""
    gen = rng.generator
    n, delta = scheme.n, scheme.delta
    counts = gen.poisson(params.lam * delta, n)
    shifts, offsets = _interval_shifts(gen, params.theta, delta, counts)
    a, drift, var = step_coefficients(params, delta)
    innovations = drift + shifts + np.sqrt(var) * gen.standard_normal(n)
    # x_{k+1} = a x_k + innovation_k
    tail, _ = lfilter([1.0], [1.0, -a], innovations, zi=[a * scheme.x0])
    values = np.concatenate(([scheme.x0], tail))
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(f"non-finite path value at index {bad}")
    latent = JumpRecord(counts, offsets, delta) if keep_latent else None
    return DiscretePath(scheme, values, latent)
