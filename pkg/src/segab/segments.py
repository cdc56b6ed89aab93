"""Segmented analog broadcast: packing, beamformed transmission, receiver
post-processing, and transmission-error accounting.

The model vector is split into equal-length segments (zero-padded at the
tail), each segment packed into a complex vector whose real part holds the
first half of the entries and imaginary part the second half.  All segments
are transmitted simultaneously through per-segment beams; each device
recovers each segment from the same received block by a scalar scaling
factor signalled error-free by the base station.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRound
from .errors import DegenerateBeamError
from .linalg import as_generator, standard_complex_normal

_DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class SegmentPlan:
    """Partition of a D-dimensional model into equal complex-packable segments."""

    model_dim: int
    n_segments: int
    seg_len: int   # real entries per segment, always even
    pad_len: int   # trailing zeros appended to the model vector

    @property
    def half_len(self) -> int:
        """Complex entries per segment; also channel uses per round."""
        return self.seg_len // 2

    @property
    def padded_dim(self) -> int:
        return self.n_segments * self.seg_len


def make_plan(model_dim: int, n_segments: int) -> SegmentPlan:
    """Choose the segment length ceil(D/S), bumped by one if odd so each
    complex segment has integer length."""
    if model_dim < 1:
        raise ValueError("model_dim must be >= 1")
    if not (1 <= n_segments <= model_dim):
        raise ValueError(
            f"n_segments must lie in [1, {model_dim}], got {n_segments}"
        )
    seg_len = math.ceil(model_dim / n_segments)
    if seg_len % 2:
        seg_len += 1
    return SegmentPlan(
        model_dim=model_dim,
        n_segments=n_segments,
        seg_len=seg_len,
        pad_len=n_segments * seg_len - model_dim,
    )


@dataclass(frozen=True)
class PackedSegments:
    """Complex-packed model segments plus their normalization factors.

    ``norms[i] = ||segments[i]|| / sqrt(half_len)``; the transmitted signal
    for segment i is ``segments[i] / norms[i]`` (zero when the segment is
    all-zero, which only happens for an all-zero model or pure padding).
    """

    segments: np.ndarray  # (S, half_len) complex
    norms: np.ndarray     # (S,)

    @property
    def n_segments(self) -> int:
        return self.segments.shape[0]


def segment_and_pack(theta: np.ndarray, n_segments: int):
    """Split ``theta`` into segments and pack each into a complex vector.

    Returns the plan and the packed segments.  Segment i holds entries
    ``[i*seg_len, (i+1)*seg_len)`` of the zero-padded model; its real part is
    the first half of those entries and its imaginary part the second half.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("theta must be a vector")
    plan = make_plan(theta.shape[0], n_segments)
    padded = np.zeros(plan.padded_dim)
    padded[: plan.model_dim] = theta
    real_segs = padded.reshape(plan.n_segments, plan.seg_len)
    half = plan.half_len
    segments = real_segs[:, :half] + 1j * real_segs[:, half:]
    norms = np.linalg.norm(segments, axis=1) / np.sqrt(half)
    return plan, PackedSegments(segments=segments, norms=norms)


def unpack(plan: SegmentPlan, est_segments: np.ndarray) -> np.ndarray:
    """Invert the packing: real halves then imaginary halves per segment,
    concatenated, padding stripped."""
    est = np.asarray(est_segments, dtype=np.complex128)
    if est.shape != (plan.n_segments, plan.half_len):
        raise ValueError(
            f"segment block of shape {est.shape} does not match plan "
            f"({plan.n_segments}, {plan.half_len})"
        )
    stacked = np.concatenate([est.real, est.imag], axis=1).reshape(-1)
    return stacked[: plan.model_dim].copy()


def draw_noise(rng, n_devices: int, plan: SegmentPlan, noise_std: float) -> np.ndarray:
    """Receiver AWGN: one (half_len,) complex block per device, total variance
    ``noise_std**2`` per complex sample (``noise_std/sqrt(2)`` per real part)."""
    return noise_std * standard_complex_normal(as_generator(rng), (n_devices, plan.half_len))


def _beam_gains(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Inner products h_k^H w_i as a (K, S) array."""
    return h.conj() @ w.T


def _check_beams(h_hat: np.ndarray, w: np.ndarray, gains: np.ndarray) -> None:
    floor = (
        _DEGENERATE_REL
        * np.linalg.norm(h_hat, axis=1)[:, None]
        * np.linalg.norm(w, axis=1)[None, :]
    )
    bad = np.abs(gains) <= floor
    if np.any(bad):
        k, i = np.argwhere(bad)[0]
        raise DegenerateBeamError(
            f"beam {i} is numerically orthogonal to estimated channel {k}; "
            "receiver scaling is undefined"
        )


def broadcast_receive(
    packed: PackedSegments,
    w: np.ndarray,
    channel: ChannelRound,
    noise_std: float = 0.0,
    rng=None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Simulate the beamformed broadcast and per-device segment recovery.

    The physical mixing uses the true channels; the per-segment scaling at
    device k uses the estimated channel, ``norms[i] * g / |g|**2`` with
    ``g = h_hat_k^H w_i``.  Pass ``noise`` to reuse a draw (e.g. to compare
    against :func:`compute_error_vector` on shared randomness); otherwise it
    is drawn from ``rng`` with per-sample std ``noise_std``.

    Returns a (K, S, half_len) complex array of segment estimates.
    """
    w = np.asarray(w, dtype=np.complex128)
    segs, norms = packed.segments, packed.norms
    s, half = segs.shape
    k = channel.n_devices
    if w.shape != (s, channel.n_antennas):
        raise ValueError(f"beamformer shape {w.shape} does not match "
                         f"({s}, {channel.n_antennas})")
    if noise is None:
        if noise_std > 0.0:
            if rng is None:
                raise ValueError("rng is required when noise_std > 0")
            noise = noise_std * standard_complex_normal(as_generator(rng), (k, half))
        else:
            noise = np.zeros((k, half), dtype=np.complex128)
    noise = np.asarray(noise, dtype=np.complex128)
    if noise.shape != (k, half):
        raise ValueError(f"noise shape {noise.shape} does not match ({k}, {half})")

    # Transmitted normalized segments; all-zero segments transmit nothing.
    tx = np.zeros_like(segs)
    live = norms > 0.0
    tx[live] = segs[live] / norms[live, None]

    gains_true = _beam_gains(channel.h_true, w)   # w_i^H h_k arrives conjugated
    # z_k = sum_i (w_i^H h_k) tx_i + n_k ; h^H w conj-transposes to w^H h.
    z = gains_true.conj() @ tx + noise            # (K, half)

    gains_hat = _beam_gains(channel.h_hat, w)     # h_hat_k^H w_i
    _check_beams(channel.h_hat, w, gains_hat)
    scaling = norms[None, :] * gains_hat / np.abs(gains_hat) ** 2  # (K, S)
    return scaling[:, :, None] * z[:, None, :]


def compute_error_vector(
    packed: PackedSegments,
    w: np.ndarray,
    channel: ChannelRound,
    noise_draws: np.ndarray,
) -> np.ndarray:
    """Stacked real transmission error per device for a shared noise draw.

    Evaluates, term by term, the decomposition of estimate-minus-truth into
    the estimation-error leak on the own segment, inter-segment interference,
    and post-processed receiver noise.  The result has one row per device of
    length ``S * seg_len`` in padded model coordinates, so the recovered
    model satisfies ``theta_hat = theta + error`` entrywise.
    """
    w = np.asarray(w, dtype=np.complex128)
    segs, norms = packed.segments, packed.norms
    s, half = segs.shape
    k = channel.n_devices
    noise_draws = np.asarray(noise_draws, dtype=np.complex128)
    if noise_draws.shape != (k, half):
        raise ValueError(f"noise shape {noise_draws.shape} does not match ({k}, {half})")

    delta_h = channel.h_true - channel.h_hat
    gains_hat = _beam_gains(channel.h_hat, w)                 # (K, S): h_hat^H w_i
    _check_beams(channel.h_hat, w, gains_hat)
    gains_err = _beam_gains(delta_h, w)                       # (K, S): dh^H w_j
    denom = np.abs(gains_hat) ** 2                            # (K, S)
    seg_norm = norms * np.sqrt(half)                          # ||segments[i]||

    err = np.empty((k, s, half), dtype=np.complex128)
    for i in range(s):
        own = (gains_hat[:, i] * gains_err[:, i].conj() / denom[:, i])[:, None] * segs[i]
        cross = np.zeros((k, half), dtype=np.complex128)
        for j in range(s):
            if j == i or seg_norm[j] == 0.0:
                continue
            # w_j^H (h_hat + dh) = conj(h_hat^H w_j) + conj(dh^H w_j)
            chan_j = gains_hat[:, j].conj() + gains_err[:, j].conj()
            coef = gains_hat[:, i] * chan_j / denom[:, i] * (seg_norm[i] / seg_norm[j])
            cross += coef[:, None] * segs[j]
        post_noise = (norms[i] * gains_hat[:, i] / denom[:, i])[:, None] * noise_draws
        err[:, i, :] = own + cross + post_noise

    return np.concatenate([err.real, err.imag], axis=2).reshape(k, s * 2 * half)


def eval_H(
    w: np.ndarray,
    h_hat: np.ndarray,
    delta_h: np.ndarray,
    weights: np.ndarray,
    nu: float,
    sigma2: float,
) -> float:
    """Per-round bound on the aggregated transmission-error power.

    ``16 * S * nu * sum_{i,k} r_k * (leak_k + interference_{k,i} + sigma2)
    / |h_hat_k^H w_i|^2`` where ``leak_k = sum_j |delta_h_k^H w_j|^2`` and
    the interference sums the estimated-channel gains of the other segments.
    ``nu`` is the caller's maximum squared segment norm; it scales the value
    but never changes which beamformer minimizes it.
    """
    w = np.asarray(w, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    delta_h = np.asarray(delta_h, dtype=np.complex128)
    weights = np.asarray(weights, dtype=np.float64)
    s = w.shape[0]
    gains_hat = _beam_gains(h_hat, w)
    _check_beams(h_hat, w, gains_hat)
    b = np.abs(gains_hat) ** 2                                  # (K, S)
    leak = np.sum(np.abs(_beam_gains(delta_h, w)) ** 2, axis=1)  # (K,)
    interference = b.sum(axis=1, keepdims=True) - b
    ratios = (leak[:, None] + interference + sigma2) / b
    return float(16.0 * s * nu * np.sum(weights[:, None] * ratios))
