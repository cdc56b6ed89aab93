"""Federated training loop, convergence-bound evaluation, and the empirical
estimation of the smoothness / gradient-deviation constants.

One communication round: broadcast the global model to all devices over the
selected downlink scheme, run J local mini-batch SGD steps per device from
the (possibly corrupted) received model, and aggregate the local results by
data-size weights.  The per-round transmission-error bound recorded along
the way feeds the optimality-gap bound evaluator.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import Scheme, ideal_broadcast, minmax_beamformer, minsum_beamformer
from .beamforming import RobustParams, eval_worst_case_H, solve_round
from .channel import gen_channel_round
from .errors import UnsupportedTaskError
from .linalg import SeededRng, as_generator
from .segments import (
    broadcast_receive,
    compute_error_vector,
    draw_noise,
    eval_H,
    make_plan,
    segment_and_pack,
    unpack,
)
from .tasks import Dataset, LogisticTask, MlpTask, QuadraticTask, global_loss_grad


def local_sgd(
    theta0: np.ndarray,
    features,
    labels,
    task,
    eta: float,
    n_iters: int,
    batch_size: int,
    rng,
):
    """J steps of mini-batch SGD on one device's local loss.

    Batches are drawn without replacement from a per-epoch shuffle that is
    reshuffled once exhausted.  Returns the final iterate and the cumulative
    change from the start.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if n_iters < 1:
        raise ValueError("need at least one local iteration")
    theta = np.array(theta0, dtype=np.float64, copy=True)
    if features is None:
        for _ in range(n_iters):
            theta -= eta * task.grad(theta, None, None)
        return theta, theta - theta0
    n = features.shape[0]
    if n < 1:
        raise ValueError("device dataset is empty")
    if not (1 <= batch_size <= n):
        raise ValueError(f"batch_size must lie in [1, {n}]")
    gen = as_generator(rng)
    order = gen.permutation(n)
    pos = 0
    for _ in range(n_iters):
        if pos + batch_size > n:
            order = gen.permutation(n)
            pos = 0
        idx = order[pos: pos + batch_size]
        pos += batch_size
        theta -= eta * task.grad(theta, features[idx], labels[idx])
    return theta, theta - theta0


def aggregate(thetas, weights) -> np.ndarray:
    """Data-size-weighted model average."""
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to one, got {weights.sum()!r}")
    thetas = [np.asarray(t, dtype=np.float64) for t in thetas]
    dim = thetas[0].shape
    if any(t.shape != dim for t in thetas):
        raise ValueError("local models have mismatched dimensions")
    out = np.zeros(dim)
    for r, t in zip(weights, thetas):
        out += r * t
    return out


@dataclass(frozen=True)
class BoundParams:
    """Constants of the optimality-gap bound.

    phi and zeta are per-segment bounds on the centralized-vs-federated
    gradient deviation and the mini-batch gradient noise; Gamma is the
    squared distance of the initial model from the optimum; nu the largest
    squared segment norm.
    """

    L_smooth: float
    lambda_sc: float
    eta: float
    J: int
    phi: np.ndarray
    zeta: np.ndarray
    Gamma: float
    nu: float

    def __post_init__(self):
        if self.lambda_sc > self.L_smooth + 1e-12:
            raise ValueError("strong convexity cannot exceed smoothness")


def eval_bound(bound: BoundParams, h_values) -> float:
    """Optimality-gap upper bound after T rounds.

    ``sum_t Gbar_t (H_t + C) + Gamma * G^T`` with ``G = 4 (1 - eta *
    lambda)^(2J)``, ``C = 4 eta^2 J^2 sum(phi + zeta)``, and ``Gbar_t`` the
    product of G over the later rounds.  Requires ``eta < 1 / L``.
    """
    if bound.eta >= 1.0 / bound.L_smooth:
        raise ValueError(
            f"step size {bound.eta} is not below 1/L = {1.0 / bound.L_smooth:.6g}"
        )
    h_values = np.asarray(h_values, dtype=np.float64)
    t_rounds = h_values.shape[0]
    g = 4.0 * (1.0 - bound.eta * bound.lambda_sc) ** (2 * bound.J)
    c = 4.0 * bound.eta ** 2 * bound.J ** 2 * float(np.sum(bound.phi + bound.zeta))
    total = 0.0
    for t in range(t_rounds):
        total += g ** (t_rounds - 1 - t) * (h_values[t] + c)
    return total + bound.Gamma * g ** t_rounds


@dataclass
class AssumptionConstants:
    L_smooth: float
    lambda_sc: float
    phi: np.ndarray
    zeta: np.ndarray
    nu: float


def estimate_assumption_constants(
    task,
    dataset: Dataset,
    n_segments: int,
    eta: float,
    n_iters: int,
    batch_size: int,
    rng,
    n_probes: int = 8,
) -> AssumptionConstants:
    """Empirical constants for the bound on a strongly convex task.

    Smoothness is the analytic Hessian bound (worst device); the deviation
    constants are empirical maxima over probe rounds that advance an
    error-free federated trajectory: at every local step the per-segment
    deviation between the centralized full-gradient trajectory and the
    weighted local gradients (phi), and between full and mini-batch local
    gradients (zeta), is recorded.
    """
    if isinstance(task, MlpTask):
        raise UnsupportedTaskError("assumption constants need a strongly convex task")
    if isinstance(task, LogisticTask):
        l_smooth = max(task.smoothness_bound(x) for x in dataset.features)
    elif isinstance(task, QuadraticTask):
        l_smooth = task.smoothness_bound()
    else:
        raise UnsupportedTaskError(f"unknown task type {type(task).__name__}")
    lambda_sc = task.strong_convexity

    gen = as_generator(rng)
    weights = dataset.weights
    plan = make_plan(task.dim, n_segments)
    half = plan.seg_len

    def seg_norms_sq(vec):
        padded = np.zeros(plan.padded_dim)
        padded[: task.dim] = vec
        return (padded.reshape(plan.n_segments, half) ** 2).sum(axis=1)

    phi = np.zeros(plan.n_segments)
    zeta = np.zeros(plan.n_segments)
    nu = 0.0
    theta = np.zeros(task.dim)
    for _ in range(n_probes):
        nu = max(nu, float(seg_norms_sq(theta).max()))
        v = theta.copy()
        locals_ = [theta.copy() for _ in range(dataset.n_devices)]
        orders = [gen.permutation(x.shape[0]) for x in dataset.features]
        pos = [0] * dataset.n_devices
        for _ in range(n_iters):
            agg_local_grad = np.zeros(task.dim)
            for k in range(dataset.n_devices):
                x, y = dataset.features[k], dataset.labels[k]
                full_g = task.grad(locals_[k], x, y)
                if pos[k] + batch_size > x.shape[0]:
                    orders[k] = gen.permutation(x.shape[0])
                    pos[k] = 0
                # Sorted so a full batch reproduces the full gradient exactly.
                idx = np.sort(orders[k][pos[k]: pos[k] + batch_size])
                pos[k] += batch_size
                batch_g = task.grad(locals_[k], x[idx], y[idx])
                zeta = np.maximum(zeta, seg_norms_sq(full_g - batch_g))
                agg_local_grad += weights[k] * full_g
                locals_[k] -= eta * batch_g
            _, central_g = global_loss_grad(task, dataset, v)
            phi = np.maximum(phi, seg_norms_sq(central_g - agg_local_grad))
            v -= eta * central_g
        theta = aggregate(locals_, weights)
    return AssumptionConstants(
        L_smooth=float(l_smooth),
        lambda_sc=float(lambda_sc),
        phi=phi,
        zeta=zeta,
        nu=float(nu),
    )


@dataclass(frozen=True)
class SeedBundle:
    """Derives every random stream of one training run from a single root.

    Physical-layer noise streams are scheme-specific; channel and local SGD
    streams are not, so schemes sharing a seed bundle face identical
    channels and batch sequences and their trajectories differ only through
    the broadcast errors.
    """

    seed: int
    drop: int = 0
    realization: int = 0
    scheme_tag: str = ""

    def channel(self, round_idx: int) -> SeededRng:
        return SeededRng(self.seed).split("chan", self.drop, self.realization, round_idx)

    def noise(self, round_idx: int) -> SeededRng:
        return SeededRng(self.seed).split(
            "noise", self.drop, self.realization, self.scheme_tag, round_idx
        )

    def sgd(self, round_idx: int, device: int) -> SeededRng:
        return SeededRng(self.seed).split(
            "sgd", self.drop, self.realization, round_idx, device
        )


@dataclass
class RoundMetrics:
    """Quantities recorded after each communication round."""

    round_index: int
    channel_uses: int          # cumulative downlink payload symbols
    gap: float                 # squared distance of the updated model from optimum
    accuracy: float
    worst_h: float
    objective_trace_len: int
    wall_time_ms: float
    realized_h: float = 0.0    # error bound at the realized estimation errors
    seg_norm_sq_max: float = 0.0


@dataclass
class RoundDebug:
    w: np.ndarray | None
    h_hat: np.ndarray | None
    h_true: np.ndarray | None
    epsilon: np.ndarray | None
    agg_update: np.ndarray
    agg_error: np.ndarray
    theta_before: np.ndarray
    theta_after: np.ndarray
    realized_h_unit: float     # realized-error bound evaluated at nu = 1
    seg_norm_sq_max: float


@dataclass
class RunConfig:
    """One training run: a scheme, a task, a dataset, and channel geometry."""

    scheme: Scheme
    task: object
    dataset: Dataset
    geoms: list
    n_antennas: int
    n_segments: int
    gamma: float
    power_w: float
    noise_w: float
    rounds: int
    local_iters: int = 5
    batch_size: int = 40
    eta: float | None = None
    rho: float = 0.2
    theta_star: np.ndarray | None = None
    seeds: SeedBundle = field(default_factory=lambda: SeedBundle(0))
    record_debug: bool = False


@dataclass
class RunResult:
    metrics: list
    theta: np.ndarray
    eta: float
    debug: list | None = None


def resolve_eta(task, dataset: Dataset, eta=None) -> float:
    """Default step size 0.1, clipped to 0.9/L when 0.1 is not below 1/L."""
    if eta is not None:
        return float(eta)
    if isinstance(task, LogisticTask):
        l_smooth = max(task.smoothness_bound(x) for x in dataset.features)
    elif isinstance(task, QuadraticTask):
        l_smooth = task.smoothness_bound()
    else:
        return 0.1
    return min(0.1, 0.9 / l_smooth)


def _beams_for(cfg: RunConfig, chan, params: RobustParams):
    if cfg.scheme == Scheme.SEGAB:
        sol = solve_round(chan.h_hat, chan.epsilon, cfg.n_segments, params)
        return sol.w, len(sol.objective_trace)
    if cfg.scheme == Scheme.MIN_SUM:
        return minsum_beamformer(chan.h_hat, chan.epsilon, cfg.n_segments, params), 0
    if cfg.scheme == Scheme.MIN_MAX:
        return minmax_beamformer(chan.h_hat, chan.epsilon, cfg.n_segments, params), 0
    raise ValueError(f"scheme {cfg.scheme} does not use beamforming")


def run_training(cfg: RunConfig) -> RunResult:
    """Run the federated loop for one scheme and return per-round metrics.

    The model starts from zero.  The gap recorded for round t is the squared
    distance of the post-aggregation model from the precomputed optimum, so
    the last row carries the final-model gap.  A beamforming failure aborts
    the run with the round index attached.
    """
    task, ds = cfg.task, cfg.dataset
    ideal = cfg.scheme in (Scheme.IDEAL_SEG, Scheme.IDEAL_FM)
    n_seg = 1 if cfg.scheme == Scheme.IDEAL_FM else cfg.n_segments
    plan = make_plan(task.dim, n_seg)
    uses_per_round = plan.half_len
    weights = ds.weights
    eta = resolve_eta(task, ds, cfg.eta)
    noise_std = float(np.sqrt(cfg.noise_w))

    theta = np.zeros(task.dim)
    theta_star = cfg.theta_star
    metrics: list[RoundMetrics] = []
    debug: list[RoundDebug] | None = [] if cfg.record_debug else None
    cum_uses = 0
    for t in range(cfg.rounds):
        t0 = time.perf_counter()
        plan, packed = segment_and_pack(theta, n_seg)
        seg_sq = (packed.norms ** 2) * plan.half_len
        seg_max = float(seg_sq.max())

        trace_len = 0
        worst_h = realized_h = realized_h_unit = 0.0
        w = chan = noise = None
        if ideal:
            received = [ideal_broadcast(theta, plan) for _ in range(ds.n_devices)]
        else:
            chan = gen_channel_round(
                cfg.geoms, cfg.n_antennas, cfg.gamma, cfg.seeds.channel(t)
            )
            params = RobustParams(
                weights=weights, sigma2=cfg.noise_w, power=cfg.power_w,
                rho=cfg.rho, nu=seg_max,
            )
            try:
                w, trace_len = _beams_for(cfg, chan, params)
            except Exception as exc:
                raise RuntimeError(
                    f"beamforming failed at round {t} for scheme {cfg.scheme}"
                ) from exc
            noise = draw_noise(cfg.seeds.noise(t), ds.n_devices, plan, noise_std)
            est = broadcast_receive(packed, w, chan, noise=noise)
            received = [unpack(plan, est[k]) for k in range(ds.n_devices)]
            worst_h = eval_worst_case_H(w, chan.h_hat, chan.epsilon, params)
            realized_h_unit = eval_H(
                w, chan.h_hat, chan.h_true - chan.h_hat, weights, 1.0, cfg.noise_w
            )
            realized_h = realized_h_unit * seg_max

        local_models = []
        agg_update = np.zeros(task.dim)
        for k in range(ds.n_devices):
            theta_k, delta_k = local_sgd(
                received[k], ds.features[k], ds.labels[k], task,
                eta, cfg.local_iters, cfg.batch_size, cfg.seeds.sgd(t, k),
            )
            local_models.append(theta_k)
            agg_update += weights[k] * delta_k
        theta_next = aggregate(local_models, weights)

        if debug is not None:
            agg_err = np.zeros(task.dim)
            if not ideal:
                err = compute_error_vector(packed, w, chan, noise)
                agg_err = (weights[:, None] * err[:, : task.dim]).sum(axis=0)
            debug.append(RoundDebug(
                w=w, h_hat=None if ideal else chan.h_hat,
                h_true=None if ideal else chan.h_true,
                epsilon=None if ideal else chan.epsilon,
                agg_update=agg_update, agg_error=agg_err,
                theta_before=theta.copy(), theta_after=theta_next.copy(),
                realized_h_unit=realized_h_unit, seg_norm_sq_max=seg_max,
            ))

        cum_uses += uses_per_round
        gap = float(np.sum((theta_next - theta_star) ** 2)) \
            if theta_star is not None else float("nan")
        acc = task.accuracy(theta_next, ds.test_features, ds.test_labels) \
            if hasattr(task, "accuracy") else float("nan")
        metrics.append(RoundMetrics(
            round_index=t,
            channel_uses=cum_uses,
            gap=gap,
            accuracy=acc,
            worst_h=worst_h,
            objective_trace_len=trace_len,
            wall_time_ms=1e3 * (time.perf_counter() - t0),
            realized_h=realized_h,
            seg_norm_sq_max=seg_max,
        ))
        theta = theta_next
    return RunResult(metrics=metrics, theta=theta, eta=eta, debug=debug)
