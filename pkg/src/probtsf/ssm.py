"""Diagonal linear state-space forecaster for the mean trajectory.

The continuous system dh/dt = A h + B u is discretized with a zero-order hold
and scanned over the (standardized) lookback window.  The final latent state,
weighted elementwise by the read map C, is mapped to the T-step forecast by a
dense readout layer.

Every function here accepts either a single window of shape ``(P,)`` or a
batch of shape ``(N, P)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SERIES_THRESHOLD = 1e-8
MIN_SCALE = 1e-12


def softplus(x):
    """ln(1 + e^x) without overflow; returns a float for scalar input."""
    x = np.asarray(x, dtype=float)
    safe = np.minimum(x, 30.0)
    out = np.where(x > 30.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(safe)))
    return out[()] if out.ndim == 0 else out


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    out = np.where(y > 30.0, y + np.log(-np.expm1(-np.minimum(y, 700.0))), np.log(np.expm1(np.maximum(y, 1e-300))))
    return out[()] if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class SsmParams:
    a_raw: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta_raw: np.ndarray
    readout_w: np.ndarray
    readout_b: np.ndarray
    normalize: bool = field(default=True, compare=False)

    ARRAYS = ("a_raw", "b", "c", "delta_raw", "readout_w", "readout_b")

    @property
    def latent_dim(self) -> int:
        return self.a_raw.shape[0]

    @property
    def horizon(self) -> int:
        return self.readout_w.shape[0]

    @property
    def a(self) -> np.ndarray:
        """Effective continuous diagonal, strictly negative."""
        return -softplus(self.a_raw)

    @property
    def dt(self) -> float:
        """Effective discretization step, strictly positive."""
        return float(softplus(self.delta_raw[0]))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.ARRAYS}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "SsmParams":
        return replace(self, **{k: np.array(v, dtype=float) for k, v in arrays.items()})

    def zeros_like(self) -> "SsmParams":
        return self.with_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})

    def __eq__(self, other):
        if not isinstance(other, SsmParams):
            return NotImplemented
        return self.normalize == other.normalize and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in self.ARRAYS
        )


def init_ssm(latent_dim: int, horizon: int, rng: np.random.Generator, normalize: bool = True) -> SsmParams:
    """Decay rates log-spaced over two decades, unit step, Glorot-uniform readout."""
    rates = np.logspace(-2, 0.5, latent_dim)
    limit = np.sqrt(6.0 / (latent_dim + horizon))
    return SsmParams(
        a_raw=softplus_inverse(rates),
        b=np.ones(latent_dim),
        c=np.ones(latent_dim),
        delta_raw=np.array([softplus_inverse(1.0)]),
        readout_w=rng.uniform(-limit, limit, size=(horizon, latent_dim)),
        readout_b=np.zeros(horizon),
        normalize=normalize,
    )


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} contains non-finite values")


def discretize(a_diag, b, dt):
    """Zero-order hold for a diagonal system.

    Returns ``a_bar = exp(dt*a)`` and ``b_bar = (exp(dt*a) - 1)/a * b``; the
    second-order series ``dt*(1 + dt*a/2)*b`` replaces the quotient when
    ``|dt*a| < 1e-8``.
    """
    a_diag = np.asarray(a_diag, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_finite("a_diag", a_diag)
    _check_finite("b", b)
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be finite and positive, got {dt!r}")
    if np.any(a_diag >= 0):
        raise ValueError("a_diag entries must be strictly negative")
    x = dt * a_diag
    a_bar = np.exp(x)
    small = np.abs(x) < SERIES_THRESHOLD
    safe_a = np.where(small, -1.0, a_diag)
    b_bar = np.where(small, dt * (1.0 + 0.5 * x) * b, np.expm1(x) / safe_a * b)
    return a_bar, b_bar


def _discretize_grads(a_diag, dt, b, a_bar):
    """Partials of (a_bar, b_bar) with respect to a, dt and b."""
    x = dt * a_diag
    small = np.abs(x) < SERIES_THRESHOLD
    safe_a = np.where(small, -1.0, a_diag)
    em1 = np.expm1(x)
    dabar_da = dt * a_bar
    dabar_ddt = a_diag * a_bar
    dbbar_db = np.where(small, dt * (1.0 + 0.5 * x), em1 / safe_a)
    dbbar_da = np.where(small, 0.5 * dt * dt * b, b * (x * a_bar - em1) / safe_a**2)
    dbbar_ddt = np.where(small, (1.0 + x) * b, b * a_bar)
    return dabar_da, dabar_ddt, dbbar_da, dbbar_ddt, dbbar_db


def _scan_states(a_bar, b_bar, inputs, h0):
    """All latent states ``h_0 .. h_L``; inputs ``(..., L)``, states ``(L+1, ..., D)``."""
    L = inputs.shape[-1]
    states = np.empty((L + 1,) + h0.shape)
    states[0] = h0
    for t in range(L):
        states[t + 1] = a_bar * states[t] + b_bar * inputs[..., t, None]
    return states


def scan(a_bar, b_bar, c, inputs, h0):
    """Run ``h_t = a_bar*h_{t-1} + b_bar*u_t`` and read ``y_t = c.h_t``.

    ``inputs`` has shape ``(L,)`` or ``(N, L)``; ``h0`` matches with a
    trailing latent axis.  Returns ``(outputs, h_final)``.
    """
    inputs = np.asarray(inputs, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    a_bar, b_bar, c = (np.asarray(v, dtype=float) for v in (a_bar, b_bar, c))
    if h0.shape[-1] != a_bar.shape[0] or b_bar.shape != a_bar.shape or c.shape != a_bar.shape:
        raise ValueError("latent dimensions of a_bar, b_bar, c and h0 disagree")
    if h0.shape[:-1] != inputs.shape[:-1]:
        raise ValueError("batch shapes of inputs and h0 disagree")
    states = _scan_states(a_bar, b_bar, inputs, h0)
    outputs = np.moveaxis(states[1:] @ c, 0, -1)
    return outputs, states[-1]


def standardize(lookback, enabled=True):
    """Per-window (loc, scale, standardized window); scale falls back to 1 for flat windows."""
    lookback = np.asarray(lookback, dtype=float)
    if not enabled:
        shape = lookback.shape[:-1] + (1,)
        return np.zeros(shape), np.ones(shape), lookback
    loc = lookback.mean(axis=-1, keepdims=True)
    scale = lookback.std(axis=-1, keepdims=True)
    scale = np.where(scale < MIN_SCALE, 1.0, scale)
    return loc, scale, (lookback - loc) / scale


def _as_batch(lookback):
    lookback = np.asarray(lookback, dtype=float)
    if lookback.ndim not in (1, 2):
        raise ValueError(f"lookback must be 1-D or 2-D, got shape {lookback.shape}")
    _check_finite("lookback", lookback)
    return lookback.reshape(-1, lookback.shape[-1]), lookback.ndim == 1


def latent_forward(params: SsmParams, inputs: np.ndarray):
    """Standardized-space forecast ``(N, T)`` and the cache for ``latent_backward``."""
    a = params.a
    dt = params.dt
    a_bar, b_bar = discretize(a, params.b, dt)
    h0 = np.zeros((inputs.shape[0], params.latent_dim))
    states = _scan_states(a_bar, b_bar, inputs, h0)
    read = params.c * states[-1]
    out = read @ params.readout_w.T + params.readout_b
    return out, (inputs, a, dt, a_bar, b_bar, states, read)


def latent_backward(params: SsmParams, cache, upstream: np.ndarray) -> SsmParams:
    """Gradient of ``sum(upstream * out)`` for ``latent_forward`` output."""
    inputs, a, dt, a_bar, b_bar, states, read = cache
    d_w = upstream.T @ read
    d_bias = upstream.sum(axis=0)
    d_read = upstream @ params.readout_w
    d_c = np.sum(d_read * states[-1], axis=0)
    g = d_read * params.c
    d_abar = np.zeros_like(a_bar)
    d_bbar = np.zeros_like(b_bar)
    for t in range(inputs.shape[1], 0, -1):
        d_abar += np.sum(g * states[t - 1], axis=0)
        d_bbar += inputs[:, t - 1] @ g
        g = g * a_bar
    dabar_da, dabar_ddt, dbbar_da, dbbar_ddt, dbbar_db = _discretize_grads(a, dt, params.b, a_bar)
    d_a = d_abar * dabar_da + d_bbar * dbbar_da
    d_dt = np.sum(d_abar * dabar_ddt + d_bbar * dbbar_ddt)
    return params.with_arrays(
        {
            "a_raw": -d_a * sigmoid(params.a_raw),
            "b": d_bbar * dbbar_db,
            "c": d_c,
            "delta_raw": np.array([d_dt * float(sigmoid(params.delta_raw[0]))]),
            "readout_w": d_w,
            "readout_b": d_bias,
        }
    )


def _forward(params: SsmParams, batch: np.ndarray):
    loc, scale, inputs = standardize(batch, params.normalize)
    out, cache = latent_forward(params, inputs)
    return loc + scale * out, (scale, cache)


def forecast_mean(params: SsmParams, lookback) -> np.ndarray:
    """Mean forecast of length T for one window, or ``(N, T)`` for a batch."""
    batch, single = _as_batch(lookback)
    mu, _ = _forward(params, batch)
    return mu[0] if single else mu


def backward_mean(params: SsmParams, lookback, upstream) -> SsmParams:
    """Gradient of ``sum(upstream * forecast_mean(params, lookback))`` as an SsmParams."""
    batch, _ = _as_batch(lookback)
    upstream = np.asarray(upstream, dtype=float).reshape(batch.shape[0], -1)
    _, (scale, cache) = _forward(params, batch)
    return latent_backward(params, cache, upstream * scale)


__all__ = [
    "SsmParams",
    "init_ssm",
    "discretize",
    "scan",
    "standardize",
    "forecast_mean",
    "backward_mean",
    "softplus",
    "softplus_inverse",
    "sigmoid",
]
