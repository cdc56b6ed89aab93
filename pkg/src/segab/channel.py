"""Per-round wireless channel generation.

Large-scale gain combines distance path loss with log-normal shadowing; the
small-scale part is i.i.d. Rayleigh fading.  Channel estimates at the base
station carry a norm-bounded error: the true channel is drawn first, then an
error vector uniform in the ball of radius ``gamma * ||h_true||`` is
subtracted to form the estimate, so the bound always references the physical
channel that drives the received signal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_generator, standard_complex_normal

DEFAULT_POWER_DBM = 47.0
DEFAULT_NOISE_DBM = -96.0
SHADOWING_STD_DB = 8.0
_MIN_DISTANCE_KM = 0.02
_MAX_DISTANCE_KM = 0.5


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class DeviceGeometry:
    """Placement of one device relative to the base station."""

    distance_km: float
    shadowing_db: float = 0.0

    def __post_init__(self):
        if not (_MIN_DISTANCE_KM < self.distance_km < _MAX_DISTANCE_KM):
            raise ValueError(
                f"distance_km must lie in ({_MIN_DISTANCE_KM}, {_MAX_DISTANCE_KM}), "
                f"got {self.distance_km}"
            )
        if not np.isfinite(self.shadowing_db):
            raise ValueError("shadowing_db must be finite")


def path_gain_db(geom: DeviceGeometry) -> float:
    """Distance-dependent gain in dB: -136.3 - 35 log10(d_km) - shadowing."""
    return -136.3 - 35.0 * np.log10(geom.distance_km) - geom.shadowing_db


def draw_geometries(n_devices: int, rng, shadow_std_db: float = SHADOWING_STD_DB):
    """One drop of device locations with fresh shadowing values.

    Shadowing is redrawn per drop, not per communication round.
    """
    gen = as_generator(rng)
    geoms = []
    for _ in range(n_devices):
        d = _MIN_DISTANCE_KM + (_MAX_DISTANCE_KM - _MIN_DISTANCE_KM) * gen.random()
        while d <= _MIN_DISTANCE_KM:  # open interval; random() can return 0.0
            d = _MIN_DISTANCE_KM + (_MAX_DISTANCE_KM - _MIN_DISTANCE_KM) * gen.random()
        geoms.append(DeviceGeometry(d, float(gen.normal(0.0, shadow_std_db))))
    return geoms


@dataclass(frozen=True)
class ChannelRound:
    """True channels, base-station estimates, and error radii for one round."""

    h_true: np.ndarray   # (K, N) complex
    h_hat: np.ndarray    # (K, N) complex
    epsilon: np.ndarray  # (K,) nonnegative

    def __post_init__(self):
        h_true = np.asarray(self.h_true, dtype=np.complex128)
        h_hat = np.asarray(self.h_hat, dtype=np.complex128)
        eps = np.asarray(self.epsilon, dtype=np.float64)
        object.__setattr__(self, "h_true", h_true)
        object.__setattr__(self, "h_hat", h_hat)
        object.__setattr__(self, "epsilon", eps)
        if h_true.shape != h_hat.shape or h_true.ndim != 2:
            raise ValueError("h_true and h_hat must both have shape (K, N)")
        if eps.shape != (h_true.shape[0],):
            raise ValueError("epsilon must have one entry per device")
        if not (np.all(np.isfinite(h_true.view(np.float64)))
                and np.all(np.isfinite(h_hat.view(np.float64)))):
            raise ValueError("channel entries must be finite")
        err = np.linalg.norm(h_true - h_hat, axis=1)
        slack = 1e-12 * np.maximum(1.0, np.linalg.norm(h_true, axis=1))
        if np.any(err > eps + slack):
            worst = int(np.argmax(err - eps))
            raise ValueError(
                f"estimation error exceeds its bound for device {worst}: "
                f"{err[worst]:.6e} > {eps[worst]:.6e}"
            )

    @property
    def n_devices(self) -> int:
        return self.h_true.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.h_true.shape[1]


def sample_in_complex_ball(rng, dim: int, radius: float) -> np.ndarray:
    """Uniform draw from the closed complex ball of the given radius.

    Direction uniform on the complex sphere; radius scaled by U^(1/(2*dim))
    so the law is uniform on the underlying 2*dim-real-dimensional ball.
    """
    gen = as_generator(rng)
    g = standard_complex_normal(gen, dim)
    norm = np.linalg.norm(g)
    while norm == 0.0:
        g = standard_complex_normal(gen, dim)
        norm = np.linalg.norm(g)
    r = radius * gen.random() ** (1.0 / (2 * dim))
    return (r / norm) * g


def gen_channel_round(
    geoms,
    n_antennas: int,
    gamma: float,
    rng,
) -> ChannelRound:
    """Draw one round of channels with norm-bounded estimation error.

    ``h_true[k] = sqrt(G_k) * hbar`` with ``hbar ~ CN(0, I)``;
    ``epsilon[k] = gamma * ||h_true[k]||``; the estimate is the true channel
    minus an error drawn uniformly in the epsilon-ball.
    """
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    if not geoms:
        raise ValueError("need at least one device geometry")
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    gen = as_generator(rng)
    k = len(geoms)
    h_true = np.empty((k, n_antennas), dtype=np.complex128)
    h_hat = np.empty_like(h_true)
    eps = np.empty(k)
    for i, geom in enumerate(geoms):
        gain = 10.0 ** (path_gain_db(geom) / 10.0)
        h_true[i] = np.sqrt(gain) * standard_complex_normal(gen, n_antennas)
        eps[i] = gamma * np.linalg.norm(h_true[i])
        if eps[i] > 0.0:
            delta = sample_in_complex_ball(gen, n_antennas, eps[i])
        else:
            delta = np.zeros(n_antennas, dtype=np.complex128)
        h_hat[i] = h_true[i] - delta
    return ChannelRound(h_true=h_true, h_hat=h_hat, epsilon=eps)
