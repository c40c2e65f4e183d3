"""Quadrature rules for the jump-shift sum.

Given j jumps in an interval of length delta at offsets u_i, the conditional
mean of X_{t+delta} is shifted by

    S = sum_i exp(-theta (delta - u_i)) = sum_i exp(-kappa V_i),   kappa = theta delta,

with V_i = (delta - u_i) / delta iid uniform on (0, 1).  Every j-jump term of
the transition density is an expectation over S alone, so a rule on the
cube (0, 1)^j is pushed forward to a discrete measure on S and, when it has
many atoms, reduced to a small Gauss rule of that measure.

The theta-derivative of S is -delta * sum_i V_i exp(-kappa V_i).  The rule
carries a per-node value ``dshift`` such that sum_k w_k dshift_k f(s_k)
approximates E[f(S) sum_i V_i exp(-kappa V_i)].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.stats import qmc

SOBOL_SEED = 0x5EED_0F_0D
TENSOR_MAX_J = 3
# Reduction is only applied while the support of S spans at most this many
# conditional standard deviations; beyond it a 32-point rule loses accuracy.
MAX_REDUCED_WIDTH = 16.0


@dataclass(frozen=True)
class ShiftRule:
    nodes: np.ndarray
    weights: np.ndarray
    dshift: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size


@lru_cache(maxsize=64)
def _legendre_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=128)
def _sobol_points(j: int, m: int) -> np.ndarray:
    sampler = qmc.Sobol(d=j, scramble=True, seed=np.random.default_rng([SOBOL_SEED, j]))
    if m & (m - 1) == 0:
        return sampler.random_base2(int(np.log2(m)))
    return sampler.random(m)


@lru_cache(maxsize=64)
def cube_rule(j: int, order: int, mc_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Points V of shape (N, j) on the unit cube and weights summing to one.

    Tensor Gauss-Legendre for j <= 3, scrambled Sobol points otherwise.
    The arrays are cached and returned read-only.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    if j <= TENSOR_MAX_J:
        x, w = _legendre_unit(order)
        grids = np.meshgrid(*([x] * j), indexing="ij")
        wgrids = np.meshgrid(*([w] * j), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    else:
        points = _sobol_points(j, mc_nodes)
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def _lanczos(x: np.ndarray, w: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lanczos with full reorthogonalisation on diag(x) started at sqrt(w).

    Returns recurrence coefficients (alpha, beta) and the Lanczos vectors Q of
    shape (k, N); Q[i] / sqrt(w) are the orthonormal polynomials of the
    discrete measure evaluated at x.  Stops early if the measure has fewer
    than m numerically distinct atoms.
    """
    Q = np.empty((m, x.size))
    Q[0] = np.sqrt(w)
    alpha, beta = [], []
    scale = max(np.max(np.abs(x)), 1.0)
    k = 1
    for i in range(m):
        r = x * Q[i]
        a = float(Q[i] @ r)
        alpha.append(a)
        if i == m - 1:
            break
        r -= a * Q[i]
        if i > 0:
            r -= beta[-1] * Q[i - 1]
        basis = Q[: i + 1]
        for _ in range(2):
            r -= basis.T @ (basis @ r)
        b = float(np.linalg.norm(r))
        if b <= 1e-13 * scale:
            break
        beta.append(b)
        Q[i + 1] = r / b
        k = i + 2
    return np.array(alpha), np.array(beta), Q[:k]


def reduce_rule(nodes: np.ndarray, weights: np.ndarray, dshift: np.ndarray, m: int) -> ShiftRule:
    """m-point Gauss rule of the discrete measure sum_n weights_n delta(nodes_n).

    ``dshift`` is replaced by its projection on polynomials of degree < m,
    evaluated at the new nodes.
    """
    centre = float(weights @ nodes)
    spread = float(np.sqrt(max(weights @ (nodes - centre) ** 2, 0.0)))
    if spread <= 1e-14 * max(abs(centre), 1.0):
        # All atoms coincide to rounding.
        return ShiftRule(np.array([centre]), np.array([1.0]), np.array([float(weights @ dshift)]))
    xs = (nodes - centre) / spread
    alpha, beta, Q = _lanczos(xs, weights, m)
    k = alpha.size
    if k == 1:
        theta, vec = alpha.copy(), np.ones((1, 1))
    else:
        theta, vec = eigh_tridiagonal(alpha, beta[: k - 1])
    first = vec[0]
    new_w = first**2
    # c_i = sum_n w_n dshift_n p_i(x_n) with p_i(x_n) = Q[i, n] / sqrt(w_n)
    coeffs = Q[:k] @ (np.sqrt(weights) * dshift)
    new_d = (vec.T @ coeffs) / first
    return ShiftRule(centre + spread * theta, new_w / new_w.sum(), new_d)


@lru_cache(maxsize=512)
def shift_rule(kappa: float, j: int, order: int, mc_nodes: int, reduce_to: int) -> ShiftRule:
    """Rule for S = sum_{i<=j} exp(-kappa V_i); j = 0 gives the point mass at 0.

    ``reduce_to = 0`` keeps the full cube rule.
    """
    if j == 0:
        return ShiftRule(np.zeros(1), np.ones(1), np.zeros(1))
    points, weights = cube_rule(j, order, mc_nodes)
    decay = np.exp(-kappa * points)
    nodes = decay.sum(axis=1)
    dshift = (points * decay).sum(axis=1)
    if reduce_to and nodes.size > reduce_to:
        return reduce_rule(nodes, weights, dshift, reduce_to)
    return ShiftRule(nodes, weights, dshift)
