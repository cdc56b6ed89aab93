"""Comparison schemes: ideal error-free broadcast and two surrogate-objective
beamformers driven by fixed-step projected (sub)gradient methods.

The surrogate replaces the worst-case estimation-error leak with its power
bound, giving per-(device, segment) ratios
``r_k (sum_{j != i} |h_k^H w_j|^2 + eps_k^2 P + sigma^2) / |h_k^H w_i|^2``;
the sum-minimizing scheme descends their total, the max-minimizing scheme
the largest of them.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .beamforming import RobustParams, mrt_initializer, project_power
from .errors import DegenerateBeamError
from .linalg import SeededRng, as_generator, standard_complex_normal
from .segments import SegmentPlan

_DEGENERATE_REL = 1e-12


class Scheme(str, Enum):
    """Closed set of downlink schemes; the declaration order fixes legend order."""

    SEGAB = "SegAB"
    IDEAL_SEG = "IdealSeg"
    IDEAL_FM = "IdealFM"
    MIN_SUM = "MinSum"
    MIN_MAX = "MinMax"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


def ideal_broadcast(theta: np.ndarray, plan: SegmentPlan) -> np.ndarray:
    """Error-free broadcast: every device recovers the model bit-exactly.

    The channel-use cost of a round is still ``plan.half_len`` (the segmented
    schedule), which is what makes the segmented ideal scheme cheaper per
    round than the full-model one.
    """
    del plan
    return np.array(theta, dtype=np.float64, copy=True)


def surrogate_ratios(
    w: np.ndarray,
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    params: RobustParams,
) -> np.ndarray:
    """The (K, S) surrogate ratio matrix shared by both baseline objectives."""
    w = np.asarray(w, dtype=np.complex128)
    b = np.abs(h_hat.conj() @ w.T) ** 2
    interference = b.sum(axis=1, keepdims=True) - b
    num = params.weights[:, None] * (
        interference + (epsilons[:, None] ** 2) * params.power + params.sigma2
    )
    return num / b


def surrogate_sum(w, h_hat, epsilons, params) -> float:
    return float(surrogate_ratios(w, h_hat, epsilons, params).sum())


def surrogate_max(w, h_hat, epsilons, params) -> float:
    return float(surrogate_ratios(w, h_hat, epsilons, params).max())


def surrogate_sum_grad(w, h_hat, epsilons, params) -> np.ndarray:
    """Gradient of the ratio total over the real parametrization of the beams,
    arranged as a complex (S, N) array (entries d/dRe + i d/dIm)."""
    w = np.asarray(w, dtype=np.complex128)
    gains = h_hat.conj() @ w.T                      # (K, S)
    b = np.abs(gains) ** 2
    interference = b.sum(axis=1, keepdims=True) - b
    num = params.weights[:, None] * (
        interference + (epsilons[:, None] ** 2) * params.power + params.sigma2
    )
    inv_b = 1.0 / b
    # w_j appears in every other ratio's numerator and in its own denominator.
    coef = params.weights[:, None] * (inv_b.sum(axis=1, keepdims=True) - inv_b) \
        - num * inv_b ** 2
    return 2.0 * ((coef * gains).T @ h_hat)


def surrogate_max_subgrad(w, h_hat, epsilons, params) -> np.ndarray:
    """Subgradient of the largest ratio (gradient of the active term)."""
    w = np.asarray(w, dtype=np.complex128)
    gains = h_hat.conj() @ w.T
    b = np.abs(gains) ** 2
    interference = b.sum(axis=1, keepdims=True) - b
    num = params.weights[:, None] * (
        interference + (epsilons[:, None] ** 2) * params.power + params.sigma2
    )
    ratios = num / b
    k, i = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    grad = np.zeros_like(w)
    hk = h_hat[k]
    r_k = params.weights[k]
    for j in range(w.shape[0]):
        if j == i:
            grad[j] = -(num[k, i] / b[k, i] ** 2) * gains[k, i] * hk
        else:
            grad[j] = (r_k / b[k, i]) * gains[k, j] * hk
    return 2.0 * grad


def _descend(value_fn, grad_fn, h_hat, epsilons, params, n_segments,
             step, max_iter, rng):
    """Fixed-step projected descent with best-iterate tracking.

    Fixed-step subgradient methods do not descend monotonically, so the best
    iterate by surrogate value is returned.  A degenerate beam-channel pair
    triggers one restart from a perturbed initializer, then an error.
    """
    init = mrt_initializer(h_hat, params.weights, params.power, n_segments)
    h_norm2 = np.linalg.norm(h_hat, axis=1)[:, None] ** 2
    restarted = False
    w = init.copy()
    while True:
        best_w = None
        best_val = np.inf
        failed = False
        for _ in range(max_iter):
            b = np.abs(h_hat.conj() @ w.T) ** 2
            floor = _DEGENERATE_REL ** 2 * h_norm2 * np.linalg.norm(w, axis=1)[None, :] ** 2
            # The absolute guard catches gains so small that their square
            # underflows even though the relative test still passes.
            if np.any(b <= floor) or float(b.min()) < 1e-150:
                failed = True
                break
            val = value_fn(w, h_hat, epsilons, params)
            if val < best_val:
                best_val = val
                best_w = w.copy()
            w = project_power(w - step * grad_fn(w, h_hat, epsilons, params),
                              params.power)
        if best_w is not None:
            # A later degenerate iterate does not invalidate the best visited
            # point; fixed-step subgradient methods are expected to wander.
            return best_w
        if restarted:
            raise DegenerateBeamError(
                "projected descent could not keep the beams away from the "
                "estimated channels' null spaces"
            )
        restarted = True
        gen = as_generator(rng) if rng is not None else SeededRng(0xBA5E, 7).generator()
        scale = 0.01 * np.linalg.norm(init) / np.sqrt(init.size)
        w = project_power(init + scale * standard_complex_normal(gen, init.shape),
                          params.power)


def minsum_beamformer(
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    n_segments: int,
    params: RobustParams,
    step: float = 0.01,
    max_iter: int = 2000,
    rng=None,
) -> np.ndarray:
    """Minimize the total surrogate ratio by projected gradient descent."""
    if params.power <= 0:
        raise ValueError("power must be positive")
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    epsilons = np.asarray(epsilons, dtype=np.float64)
    return _descend(surrogate_sum, surrogate_sum_grad, h_hat, epsilons,
                    params, n_segments, step, max_iter, rng)


def minmax_beamformer(
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    n_segments: int,
    params: RobustParams,
    step: float = 0.01,
    max_iter: int = 2000,
    rng=None,
) -> np.ndarray:
    """Minimize the largest surrogate ratio by the projected subgradient method."""
    if params.power <= 0:
        raise ValueError("power must be positive")
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    epsilons = np.asarray(epsilons, dtype=np.float64)
    return _descend(surrogate_max, surrogate_max_subgrad, h_hat, epsilons,
                    params, n_segments, step, max_iter, rng)
