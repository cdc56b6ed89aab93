"""Robust per-round downlink beamforming.

Minimizes the worst case, over norm-bounded channel-estimation errors, of the
per-round transmission-error bound.  The worst-case error direction has a
closed form (dominant eigenvector of the summed beam outer products); the
outer problem is handled with an epigraph variable that alternates with a
feasibility step, which is convexified by linearizing the useful-signal
power around an anchor and solved by ADMM with closed-form updates:

* a per-device coupled quadratic subproblem, solved exactly by eliminating
  the slack through constraint activity,
* a radial projection onto the power ball,
* a regularized least-squares beam update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateBeamError
from .linalg import RidgeNormalSolver, dominant_eigvec
from .segments import eval_H

_DEGENERATE_REL = 1e-12
# Dynamic-range cap for the inverse-gain slack weights used inside the
# per-round alternation; wider ranges stall the fixed-penalty ADMM.
_SLACK_WEIGHT_CLIP = 100.0


@dataclass(frozen=True)
class RobustParams:
    """Per-round constants of the robust beamforming problem.

    weights: aggregation weights r_k (one per device, summing to one).
    sigma2:  receiver noise power per complex sample.
    power:   transmit power budget for the stacked beamformer.
    rho:     ADMM penalty parameter.
    nu:      squared-segment-norm scale used when reporting the error bound;
             a pure scale factor that never changes the optimizing beams.
    """

    weights: np.ndarray
    sigma2: float
    power: float
    rho: float = 0.2
    nu: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "weights", np.asarray(self.weights, dtype=np.float64)
        )
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def sigma_k2(self) -> np.ndarray:
        """Per-device noise constant r_k * sigma2 used in the epigraph constraints."""
        return self.weights * self.sigma2


@dataclass
class AdmmState:
    """Primal and dual iterates of the inner ADMM."""

    x: np.ndarray        # (K, S) complex, per-device beam gains
    y: np.ndarray        # (S, N) complex, ball-constrained beam copy
    delta: np.ndarray    # (K, S) slack
    w: np.ndarray        # (S, N) complex beams
    lam: np.ndarray      # (K, S) complex dual for x = h_hat^H w
    m: np.ndarray        # (S, N) complex dual for y = w
    rho: float = 0.2


@dataclass
class AdmmResult:
    w: np.ndarray
    delta: np.ndarray
    converged: bool
    iterations: int
    residual_x: float
    residual_y: float
    state: AdmmState

    @property
    def objective(self) -> float:
        """Value of the convexified feasibility objective (-sum of slacks)."""
        return float(-np.sum(self.delta))


@dataclass
class BeamSolution:
    """Output of the per-round robust beamforming solve."""

    w: np.ndarray                 # (S, N)
    mu: np.ndarray                # (K, S) epigraph variables
    objective_trace: list[float]  # sum of mu after init and each outer pass
    worst_case_H: float
    converged: bool = True
    n_outer: int = 0
    admm_iterations: list[int] = field(default_factory=list)
    final_delta: np.ndarray | None = None


def _gains(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    return h.conj() @ w.T


def worst_case_direction(w: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Unit direction inside the error ball that maximizes the total power
    leaked into all beams, i.e. the dominant eigenvector of sum_i w_i w_i^H."""
    w = np.asarray(w, dtype=np.complex128)
    if w.ndim != 2:
        raise ValueError("w must be a stacked (S, N) beamformer")
    if not np.any(w):
        raise ValueError("beamformer is identically zero")
    m = w.T @ w.conj()
    return dominant_eigvec(m, tol=tol, max_iter=max_iter)


def worst_case_error(w: np.ndarray, epsilon: float) -> np.ndarray:
    """Channel-estimation error of norm ``epsilon`` maximizing
    ``sum_i |dh^H w_i|^2`` over the epsilon-ball."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return epsilon * worst_case_direction(np.asarray(w, dtype=np.complex128))


def mu_update(
    w: np.ndarray,
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    params: RobustParams,
    denom_floor: float = 0.0,
) -> np.ndarray:
    """Optimal epigraph variables for fixed beams.

    ``mu[k, i] = (r_k eps_k^2 * leak(w) + r_k * interference_{k,i}
    + r_k sigma2) / |h_hat_k^H w_i|^2`` with ``leak`` evaluated at the true
    worst-case error direction.  ``denom_floor`` is added to the denominators
    only while iterating inside :func:`solve_round`, never for reported
    metrics.
    """
    w = np.asarray(w, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    epsilons = np.asarray(epsilons, dtype=np.float64)
    phi = worst_case_direction(w)
    leak = float(np.sum(np.abs(w @ phi.conj()) ** 2))
    b = np.abs(_gains(h_hat, w)) ** 2
    scale2 = (
        np.linalg.norm(h_hat, axis=1)[:, None]
        * np.linalg.norm(w, axis=1)[None, :]
    ) ** 2
    if denom_floor == 0.0 and np.any(b <= _DEGENERATE_REL ** 2 * scale2):
        raise DegenerateBeamError("beam orthogonal to an estimated channel")
    r = params.weights
    interference = b.sum(axis=1, keepdims=True) - b
    numerator = r[:, None] * (epsilons[:, None] ** 2 * leak + interference) \
        + params.sigma_k2[:, None]
    # The guard is relative to the natural gain scale so it behaves the same
    # for unit-variance and path-loss-scaled channels.
    return numerator / (b + denom_floor * scale2)


def qcqp_xdsub(
    e1: np.ndarray,
    e2: np.ndarray,
    e3: np.ndarray,
    mu_k: np.ndarray,
    r_k: float,
    rho: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution of the per-device coupled quadratic subproblem.

    Minimizes ``sum_j |x_j - e1_j|^2 - (2/rho) delta_j`` subject to, for each
    i, ``r_k sum_{j != i} |x_j|^2 - 2 mu_i Re(e2_i x_i) + delta_i + e3_i <= 0``.
    Each slack has a strictly positive objective reward and appears in exactly
    one constraint, so every constraint is active at the optimum; eliminating
    the slacks leaves a separable strongly convex quadratic with the
    closed-form minimizer ``x_j = (e1_j + (2 mu_j / rho) conj(e2_j)) / a``
    where ``a = 1 + 2 r_k (S - 1) / rho``.
    """
    e1 = np.asarray(e1, dtype=np.complex128)
    e2 = np.asarray(e2, dtype=np.complex128)
    e3 = np.asarray(e3, dtype=np.float64)
    mu_k = np.asarray(mu_k, dtype=np.float64)
    if rho <= 0:
        raise ValueError("rho must be positive")
    if np.any(mu_k <= 0):
        raise ValueError("mu entries must be positive")
    s = e1.shape[0]
    a = 1.0 + 2.0 * r_k * (s - 1) / rho
    x = (e1 + (2.0 / rho) * mu_k * e2.conj()) / a
    xsq = np.abs(x) ** 2
    delta = 2.0 * mu_k * np.real(e2 * x) - r_k * (xsq.sum() - xsq) - e3
    return x, delta


def project_power(w: np.ndarray, power: float) -> np.ndarray:
    """Euclidean projection of the stacked beamformer onto the power ball."""
    norm = float(np.linalg.norm(w))
    if norm ** 2 <= power:
        return w
    return w * (np.sqrt(power) / norm)


def admm_solve(
    mu: np.ndarray,
    v: np.ndarray,
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    params: RobustParams,
    tol: float = 1e-6,
    max_iter: int = 1000,
    lam0: np.ndarray | None = None,
    m0: np.ndarray | None = None,
    slack_weights: np.ndarray | None = None,
) -> AdmmResult:
    """Solve the convexified feasibility subproblem anchored at ``v`` by ADMM.

    Splits the beams from their per-device gains (x) and from a
    ball-constrained copy (y); each iteration runs the exact per-device
    subproblem, the radial projection, a regularized least-squares beam
    update, and the dual ascent steps.  Stops when both relative primal
    residuals drop below ``tol``; raises ``ConvergenceError`` (carrying the
    residuals) if ``max_iter`` is exhausted.  The returned beams are
    projected onto the power ball, which is within the solver tolerance of
    the unprojected iterate.

    ``slack_weights`` (positive, constant within the subproblem) reward the
    slacks unevenly, ``max sum c * delta``; the default is the plain sum.
    """
    mu = np.asarray(mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    epsilons = np.asarray(epsilons, dtype=np.float64)

    # Internal channel normalization: scaling (h, eps, sigma2) by (c, c, c^2)
    # leaves the feasible beams, the epigraph variables, and the error bound
    # unchanged but balances the beam-gain and beam-copy splitting blocks.
    # Without it, path-loss-scaled channels (entries ~1e-5) make the gain
    # block's influence on the beam update vanish and the duals would need
    # ~1/||h||^2 iterations to compensate.
    chan_scale = float(np.sqrt(np.mean(np.abs(h_hat) ** 2) * h_hat.shape[1]))
    if chan_scale <= 0 or not np.isfinite(chan_scale):
        raise ValueError("estimated channels are all zero or not finite")
    c = 1.0 / chan_scale
    h_hat = c * h_hat
    epsilons = c * epsilons
    sigma_k2 = c * c * params.sigma_k2
    if lam0 is not None:
        lam0 = np.asarray(lam0) * c

    r = params.weights
    rho = params.rho
    p = params.power
    sqrt_p = np.sqrt(p)

    e2 = _gains(h_hat, v).conj()                 # (K, S): v_i^H h_hat_k
    e3 = mu * np.abs(e2) ** 2 \
        + (r * epsilons ** 2 * p + sigma_k2)[:, None]
    ridge = RidgeNormalSolver(list(h_hat), dim=h_hat.shape[1])

    w = v.copy()
    # Dual warm starts only change the solve path, not the optimum; zeros
    # reproduce the cold start of the per-round algorithm.
    lam = np.zeros_like(mu, dtype=np.complex128) if lam0 is None \
        else np.array(lam0, dtype=np.complex128)
    m = np.zeros_like(w) if m0 is None else np.array(m0, dtype=np.complex128)
    hconj = h_hat.conj()
    hw = hconj @ w.T

    # Constants of the per-device subproblem's closed form; the slack itself
    # is only needed once at exit.
    s_count = mu.shape[1]
    if slack_weights is None:
        a_coef = 1.0 + 2.0 * r[:, None] * (s_count - 1) / rho
        lin = (2.0 / rho) * mu * e2.conj()
    else:
        c_others = slack_weights.sum(axis=1, keepdims=True) - slack_weights
        a_coef = 1.0 + (2.0 / rho) * r[:, None] * c_others
        lin = (2.0 / rho) * slack_weights * mu * e2.conj()

    def _n2(arr) -> float:
        return float(np.vdot(arr, arr).real)

    x = np.zeros_like(lam)
    y = w.copy()
    rx2 = ry2 = np.inf
    tol2 = tol * tol
    n_done = 0
    converged = False
    for n in range(max_iter):
        x = (hw - lam + lin) / a_coef
        wm = w - m
        wm_n2 = _n2(wm)
        y = wm if wm_n2 <= p else (sqrt_p / np.sqrt(wm_n2)) * wm
        rhs = (x + lam).T @ h_hat + y + m
        w = ridge.solve(rhs)
        hw = hconj @ w.T
        diff_x = x - hw
        diff_y = y - w
        lam += diff_x
        m += diff_y
        n_done = n + 1
        if n_done % 4 == 0 or n_done == max_iter:
            rx2 = _n2(diff_x)
            ry2 = _n2(diff_y)
            sx2 = max(_n2(x), _n2(hw), 1e-60)
            sy2 = max(_n2(y), _n2(w), 1e-60)
            if rx2 <= tol2 * sx2 and ry2 <= tol2 * sy2:
                converged = True
                break
    if not converged:
        raise ConvergenceError(
            f"ADMM did not reach tol={tol:g} in {max_iter} iterations",
            residual_x=float(np.sqrt(rx2)),
            residual_y=float(np.sqrt(ry2)),
        )
    res_x = float(np.sqrt(rx2))
    res_y = float(np.sqrt(ry2))
    xsq = x.real ** 2 + x.imag ** 2
    delta = 2.0 * mu * np.real(e2 * x) \
        - r[:, None] * (xsq.sum(axis=1, keepdims=True) - xsq) - e3

    w = project_power(w, p)
    # Undo the channel normalization on the gain-block quantities.
    state = AdmmState(x=x / c, y=y, delta=delta / c ** 2, w=w, lam=lam / c,
                      m=m, rho=rho)
    return AdmmResult(
        w=w,
        delta=delta / c ** 2,
        converged=True,
        iterations=n_done,
        residual_x=res_x / c,
        residual_y=res_y,
        state=state,
    )


def mrt_initializer(
    h_hat: np.ndarray,
    weights: np.ndarray,
    power: float,
    n_segments: int,
) -> np.ndarray:
    """Equal-power maximum-ratio beams toward the weighted channel centroid."""
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    centroid = np.asarray(weights, dtype=np.float64) @ h_hat
    norm = float(np.linalg.norm(centroid))
    if norm == 0.0:
        raise DegenerateBeamError("weighted channel centroid is zero")
    beam = np.sqrt(power / n_segments) * centroid / norm
    return np.tile(beam, (n_segments, 1))


def solve_round(
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    n_segments: int,
    params: RobustParams,
    sca_tol: float = 1e-5,
    outer_tol: float = 1e-4,
    max_outer: int = 50,
    max_sca: int = 100,
    admm_tol: float = 1e-6,
    admm_max_iter: int = 2000,
    denom_floor: float = 1e-12,
) -> BeamSolution:
    """Robust per-round beamforming by epigraph alternation, convexification,
    and inner ADMM.

    Each pass convexifies the feasibility step around the current beams,
    solves it by ADMM, and refreshes the epigraph variables at the new
    beams.  Two measures keep the refreshed objective (the epigraph-variable
    sum) strictly nonincreasing, which the plain slack maximization does not
    guarantee on its own:

    * the slack rewards are weighted by the anchor's inverse squared beam
      gains (normalized by their geometric mean), which aligns the slack sum
      with the epigraph objective to first order -- the plain sum weights
      every slack by its beam gain, so with realistic path-loss spreads it
      trades the weak devices' epigraph components away;
    * a merit gate accepts a pass only if the refreshed sum decreases, and
      the alternation stops at the first non-improving pass.

    The middle loop runs passes until the per-pass improvement drops below
    ``sca_tol``; the outer loop stops when a whole middle pass improves the
    objective by less than ``outer_tol`` relatively.
    """
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    epsilons = np.asarray(epsilons, dtype=np.float64)
    if h_hat.ndim != 2 or h_hat.shape[0] < 1:
        raise ValueError("h_hat must be a (K, N) array with K >= 1")

    w = mrt_initializer(h_hat, params.weights, params.power, n_segments)
    gains = _gains(h_hat, w)
    scale = (
        np.linalg.norm(h_hat, axis=1)[:, None]
        * np.linalg.norm(w, axis=1)[None, :]
    )
    if np.any(np.abs(gains) <= _DEGENERATE_REL * scale):
        raise DegenerateBeamError(
            "initialization failed: maximum-ratio beams are orthogonal to an "
            "estimated channel"
        )

    mu = mu_update(w, h_hat, epsilons, params, denom_floor=denom_floor)
    trace = [float(mu.sum())]
    admm_iters: list[int] = []
    last_delta = None
    converged = False
    n_outer = 0
    warm_lam = warm_m = None
    stopped = False
    for _ in range(max_outer):
        if stopped:
            break
        n_outer += 1
        outer_start = trace[-1]
        any_commit = False
        for _ in range(max_sca):
            b_anchor = np.abs(_gains(h_hat, w)) ** 2
            slack_w = np.clip(
                np.exp(np.mean(np.log(b_anchor))) / b_anchor,
                1.0 / _SLACK_WEIGHT_CLIP, _SLACK_WEIGHT_CLIP,
            )
            # The cold first pass has no dual warm start and can need several
            # times more iterations than the warm-started ones.
            budget = admm_max_iter if warm_lam is not None else 4 * admm_max_iter
            try:
                res = admm_solve(
                    mu, w, h_hat, epsilons, params,
                    tol=admm_tol, max_iter=budget,
                    lam0=warm_lam, m0=warm_m,
                    slack_weights=slack_w,
                )
            except ConvergenceError:
                res = None
                if not trace[1:]:
                    # Hard cold start: the plain subproblem conditions much
                    # better than the weighted one; use it to get moving.
                    try:
                        res = admm_solve(
                            mu, w, h_hat, epsilons, params,
                            tol=admm_tol, max_iter=4 * admm_max_iter,
                        )
                    except ConvergenceError:
                        res = None
                if res is None:
                    stopped = True
                    break
            warm_lam, warm_m = res.state.lam, res.state.m
            admm_iters.append(res.iterations)
            # Merit gate with a short backtracking line search: the full
            # subproblem jump can overshoot the region where the refreshed
            # epigraph sum improves; convex combinations with the anchor
            # stay inside the power ball.
            accepted = False
            for t in (1.0, 0.5, 0.25, 0.125):
                w_cand = res.w if t == 1.0 else w + t * (res.w - w)
                mu_cand = mu_update(w_cand, h_hat, epsilons, params,
                                    denom_floor=denom_floor)
                total_cand = float(mu_cand.sum())
                if total_cand <= trace[-1]:
                    accepted = True
                    break
            if not accepted:
                converged = True
                stopped = True
                break
            w = w_cand
            mu = mu_cand
            if t == 1.0:
                last_delta = res.delta
            trace.append(total_cand)
            any_commit = True
            if abs(trace[-1] - trace[-2]) <= sca_tol * max(trace[-2], 1e-30):
                break
        if not any_commit:
            converged = converged or not stopped
            break
        if abs(trace[-1] - outer_start) <= outer_tol * max(outer_start, 1e-30):
            converged = True
            break

    return BeamSolution(
        w=w,
        mu=mu,
        objective_trace=trace,
        worst_case_H=eval_worst_case_H(w, h_hat, epsilons, params),
        converged=converged,
        n_outer=n_outer,
        admm_iterations=admm_iters,
        final_delta=last_delta,
    )


def eval_worst_case_H(
    w: np.ndarray,
    h_hat: np.ndarray,
    epsilons: np.ndarray,
    params: RobustParams,
) -> float:
    """Transmission-error bound at the worst in-ball estimation errors.

    Substitutes the closed-form worst-case error (epsilon times the dominant
    leak direction, identical for every device up to its radius) into
    :func:`segab.segments.eval_H`.
    """
    epsilons = np.asarray(epsilons, dtype=np.float64)
    phi = worst_case_direction(np.asarray(w, dtype=np.complex128))
    delta = epsilons[:, None] * phi[None, :]
    return eval_H(w, h_hat, delta, params.weights, params.nu, params.sigma2)
