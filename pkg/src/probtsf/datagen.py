"""Seeded synthetic benchmarks and lookback/future windowing.

Every generator returns an ``(n_traj, length)`` float array whose row ``n`` is
trajectory ``n``.  Randomness for row ``n`` comes from its own PCG64 stream,
``SeedSequence(seed).spawn(n_traj)[n]``, so a trajectory depends only on
``(seed, n)`` and never on how many siblings were generated alongside it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def trajectory_streams(seed: int, n_traj: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_traj)]


def _check_counts(n_traj, length):
    if n_traj < 1 or length < 1:
        raise ValueError(f"n_traj and length must be >= 1, got {n_traj}, {length}")


@dataclass(frozen=True)
class SinesConfig:
    omega1: float = TWO_PI / 24
    omega2_mean: float = TWO_PI / 12
    amplitudes: tuple[float, float] = (4.0, 1.0)
    noise_std: float = 1.0
    # Pin the per-trajectory draws (used for exact checks); None samples them.
    phase: float | None = None
    omega2: float | None = None


@dataclass(frozen=True)
class VdpConfig:
    omega1: float = TWO_PI / 24
    lambda_mean: float = 5.0
    y0: float = 0.0
    v0: float = 1.0
    dt_int: float = 0.05
    noise_std: float = 1.0
    form: str = "standard"  # "standard" self-excited form or "literal" as printed
    lam: float | None = None
    max_retries: int = 20

    def __post_init__(self):
        if self.dt_int <= 0:
            raise ValueError("dt_int must be positive")
        steps = round(1.0 / self.dt_int)
        if abs(steps * self.dt_int - 1.0) > 1e-9:
            raise ValueError(f"dt_int={self.dt_int} does not divide 1 evenly")
        if self.form not in ("standard", "literal"):
            raise ValueError(f"unknown van der Pol form {self.form!r}")


@dataclass(frozen=True)
class BrownianConfig:
    x0_low: float = 0.0
    x0_high: float = 1.0
    increment_std: float = 1.0


def gen_sines(n_traj: int, length: int, seed: int, cfg: SinesConfig = SinesConfig()) -> np.ndarray:
    """``x_t = A1 sin(w1 t + phi) + A2 sin(w2 t) + noise`` for ``t = 1..length``."""
    _check_counts(n_traj, length)
    t = np.arange(1, length + 1, dtype=float)
    out = np.empty((n_traj, length))
    amp1, amp2 = cfg.amplitudes
    for n, rng in enumerate(trajectory_streams(seed, n_traj)):
        phase = rng.uniform(0.0, TWO_PI)
        omega2 = rng.exponential(cfg.omega2_mean)
        noise = rng.standard_normal(length)
        if cfg.phase is not None:
            phase = cfg.phase
        if cfg.omega2 is not None:
            omega2 = cfg.omega2
        out[n] = amp1 * np.sin(cfg.omega1 * t + phase) + amp2 * np.sin(omega2 * t) + cfg.noise_std * noise
    return out


def _vdp_rhs(y, v, lam, omega_sq, form):
    if form == "standard":
        return v, omega_sq * (lam * (1.0 - y * y) * v - y)
    return v, omega_sq * (lam * (1.0 - y * y) * v + y)


def integrate_vdp(lam, length: int, cfg: VdpConfig) -> np.ndarray:
    """RK4 solution ``y(t)`` at ``t = 1..length`` for each damping value in ``lam``."""
    lam = np.asarray(lam, dtype=float)
    omega_sq = cfg.omega1**2
    h = cfg.dt_int
    sub = round(1.0 / h)
    y = np.full(lam.shape, cfg.y0, dtype=float)
    v = np.full(lam.shape, cfg.v0, dtype=float)
    out = np.empty(lam.shape + (length,))
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(length):
            for _ in range(sub):
                k1y, k1v = _vdp_rhs(y, v, lam, omega_sq, cfg.form)
                k2y, k2v = _vdp_rhs(y + 0.5 * h * k1y, v + 0.5 * h * k1v, lam, omega_sq, cfg.form)
                k3y, k3v = _vdp_rhs(y + 0.5 * h * k2y, v + 0.5 * h * k2v, lam, omega_sq, cfg.form)
                k4y, k4v = _vdp_rhs(y + h * k3y, v + h * k3v, lam, omega_sq, cfg.form)
                y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
                v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            out[..., step] = y
    return out


def gen_vdp(n_traj: int, length: int, seed: int, cfg: VdpConfig = VdpConfig()) -> np.ndarray:
    """Noisy van der Pol observations ``x_t = y(t) + noise`` at integer times.

    Trajectories whose integration leaves the finite range are redrawn with a
    fresh damping value from the same stream, at most ``cfg.max_retries`` times.
    """
    _check_counts(n_traj, length)
    streams = trajectory_streams(seed, n_traj)
    lam = np.empty(n_traj)
    noise = np.empty((n_traj, length))
    for n, rng in enumerate(streams):
        lam[n] = rng.exponential(cfg.lambda_mean)
        noise[n] = rng.standard_normal(length)
    if cfg.lam is not None:
        lam[:] = cfg.lam
    y = integrate_vdp(lam, length, cfg)
    for attempt in range(cfg.max_retries + 1):
        bad = np.flatnonzero(~np.all(np.isfinite(y), axis=1))
        if bad.size == 0:
            break
        if attempt == cfg.max_retries or cfg.lam is not None:
            raise RuntimeError(f"van der Pol integration diverged for trajectories {bad[:10].tolist()}")
        log.warning("van der Pol diverged for %d trajectories; redrawing damping", bad.size)
        for n in bad:
            lam[n] = streams[n].exponential(cfg.lambda_mean)
        y[bad] = integrate_vdp(lam[bad], length, cfg)
    return y + cfg.noise_std * noise


def gen_brownian(n_traj: int, length: int, seed: int, cfg: BrownianConfig = BrownianConfig()) -> np.ndarray:
    """Random walks; column 0 is the uniform start ``x_0``, then ``x_t = x_{t-1} + noise``."""
    _check_counts(n_traj, length)
    out = np.empty((n_traj, length))
    for n, rng in enumerate(trajectory_streams(seed, n_traj)):
        x0 = rng.uniform(cfg.x0_low, cfg.x0_high)
        steps = cfg.increment_std * rng.standard_normal(length - 1)
        out[n, 0] = x0
        out[n, 1:] = x0 + np.cumsum(steps)
    return out


def brownian_oracle(x_last, tau):
    """Exact conditional (mean, std) of a unit random walk ``tau`` steps ahead.

    Array arguments broadcast against each other.
    """
    tau = np.asarray(tau)
    if np.any(tau < 1):
        raise ValueError("tau must be >= 1")
    mu, sigma = np.broadcast_arrays(np.asarray(x_last, dtype=float), np.sqrt(tau.astype(float)))
    if mu.ndim == 0:
        return float(mu), float(sigma)
    return mu.copy(), sigma.copy()


@dataclass(frozen=True)
class WindowedDataset:
    lookbacks: np.ndarray
    futures: np.ndarray
    ids: np.ndarray
    split: str = "train"

    @property
    def n(self) -> int:
        return self.lookbacks.shape[0]

    @property
    def lookback(self) -> int:
        return self.lookbacks.shape[1]

    @property
    def horizon(self) -> int:
        return self.futures.shape[1]

    def subset(self, index) -> "WindowedDataset":
        return WindowedDataset(self.lookbacks[index], self.futures[index], self.ids[index], self.split)


def window(trajectories, P: int, T: int, train_fraction: float = 0.8, seed: int = 0):
    """One ``(lookback, future)`` pair per trajectory, split by shuffled trajectory id."""
    data = np.asarray(trajectories, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"trajectories must be 2-D (n_traj, length), got shape {data.shape}")
    if P < 1 or T < 1:
        raise ValueError("P and T must be >= 1")
    if data.shape[1] < P + T:
        raise ValueError(f"trajectory length {data.shape[1]} is shorter than P + T = {P + T}")
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction must lie in [0, 1], got {train_fraction}")
    n = data.shape[0]
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    parts = []
    for ids, split in ((order[:n_train], "train"), (order[n_train:], "test")):
        rows = data[ids, : P + T]
        parts.append(WindowedDataset(rows[:, :P].copy(), rows[:, P:].copy(), ids, split))
    return parts[0], parts[1]


__all__ = [
    "SinesConfig",
    "VdpConfig",
    "BrownianConfig",
    "WindowedDataset",
    "gen_sines",
    "gen_vdp",
    "gen_brownian",
    "integrate_vdp",
    "brownian_oracle",
    "trajectory_streams",
    "window",
]
