"""Positive-output network for the forecast standard deviation.

Two architectures share one output contract (length T, strictly positive):

* ``fully_connected`` -- ReLU MLP ``P -> H -> H -> T`` with a softplus output.
* ``ssm_backed`` -- the diagonal state-space pipeline from :mod:`probtsf.ssm`,
  its readout passed through softplus.

Both consume the standardized lookback and are rescaled by the lookback
standard deviation, so sigma carries the units of the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from probtsf.ssm import (
    SsmParams,
    init_ssm,
    latent_backward,
    latent_forward,
    sigmoid,
    softplus,
    softplus_inverse,
    standardize,
)

FULLY_CONNECTED = "fully_connected"
SSM_BACKED = "ssm_backed"
ARCH_VARIANTS = (FULLY_CONNECTED, SSM_BACKED)

UNIT_SIGMA_BIAS = float(softplus_inverse(1.0))
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class MlpParams:
    """Variance-head parameters.

    For ``fully_connected`` the weights and biases are per layer, weight
    matrices shaped ``(fan_out, fan_in)``.  For ``ssm_backed`` both lists are
    empty and ``ssm`` holds the pre-activation pipeline.
    """

    weights: tuple[np.ndarray, ...] = ()
    biases: tuple[np.ndarray, ...] = ()
    arch_variant: str = FULLY_CONNECTED
    ssm: SsmParams | None = None
    normalize: bool = field(default=True, compare=False)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        if self.arch_variant == SSM_BACKED:
            return ()
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def horizon(self) -> int:
        if self.arch_variant == SSM_BACKED:
            return self.ssm.horizon
        return self.weights[-1].shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        if self.arch_variant == SSM_BACKED:
            return {f"ssm.{k}": v for k, v in self.ssm.arrays().items()}
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "MlpParams":
        if self.arch_variant == SSM_BACKED:
            inner = {k.split(".", 1)[1]: v for k, v in arrays.items()}
            return replace(self, ssm=self.ssm.with_arrays(inner))
        n = len(self.weights)
        return replace(
            self,
            weights=tuple(np.array(arrays[f"w{i}"], dtype=float) for i in range(n)),
            biases=tuple(np.array(arrays[f"b{i}"], dtype=float) for i in range(n)),
        )

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        mine, theirs = self.arrays(), other.arrays()
        return (
            self.arch_variant == other.arch_variant
            and self.normalize == other.normalize
            and mine.keys() == theirs.keys()
            and all(np.array_equal(mine[k], theirs[k]) for k in mine)
        )


def init_mlp(layer_dims, rng: np.random.Generator, normalize: bool = True) -> MlpParams:
    """Glorot-uniform weights; final bias set so the initial sigma is 1."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    biases[-1] = np.full(layer_dims[-1], UNIT_SIGMA_BIAS)
    return MlpParams(tuple(weights), tuple(biases), FULLY_CONNECTED, None, normalize)


def init_variance_head(
    arch_variant: str,
    lookback: int,
    horizon: int,
    rng: np.random.Generator,
    hidden: int = 128,
    latent_dim: int = 32,
    normalize: bool = True,
) -> MlpParams:
    if arch_variant == FULLY_CONNECTED:
        return init_mlp((lookback, hidden, hidden, horizon), rng, normalize)
    if arch_variant == SSM_BACKED:
        ssm = init_ssm(latent_dim, horizon, rng, normalize=normalize)
        ssm = ssm.with_arrays({"readout_b": np.full(horizon, UNIT_SIGMA_BIAS)})
        return MlpParams((), (), SSM_BACKED, ssm, normalize)
    raise ValueError(f"unknown arch_variant {arch_variant!r}; expected one of {ARCH_VARIANTS}")


def _mlp_forward(params: MlpParams, inputs):
    acts = [inputs]
    pre = None
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = acts[-1] @ w.T + b
        if i < last:
            acts.append(np.maximum(pre, 0.0))
    return pre, acts


def _mlp_backward(params: MlpParams, acts, d_pre):
    grads = {}
    for i in range(len(params.weights) - 1, -1, -1):
        grads[f"w{i}"] = d_pre.T @ acts[i]
        grads[f"b{i}"] = d_pre.sum(axis=0)
        if i > 0:
            d_pre = (d_pre @ params.weights[i]) * (acts[i] > 0.0)
    return params.with_arrays(grads)


def sigma_forward(params: MlpParams, batch: np.ndarray):
    """Batched sigma ``(N, T)`` plus everything needed for :func:`sigma_backward`."""
    _, scale, inputs = standardize(batch, params.normalize)
    if params.arch_variant == SSM_BACKED:
        pre, inner = latent_forward(params.ssm, inputs)
    else:
        pre, inner = _mlp_forward(params, inputs)
    # softplus underflows to 0 below about -745; keep the output representably positive
    return np.maximum(scale * softplus(pre), TINY), (scale, pre, inner)


def sigma_backward(params: MlpParams, cache, upstream: np.ndarray) -> MlpParams:
    scale, pre, inner = cache
    d_pre = upstream * scale * sigmoid(pre)
    if params.arch_variant == SSM_BACKED:
        return replace(params, ssm=latent_backward(params.ssm, inner, d_pre))
    return _mlp_backward(params, inner, d_pre)


def _as_batch(lookback):
    lookback = np.asarray(lookback, dtype=float)
    if lookback.ndim not in (1, 2):
        raise ValueError(f"lookback must be 1-D or 2-D, got shape {lookback.shape}")
    if not np.all(np.isfinite(lookback)):
        raise ValueError("lookback contains non-finite values")
    return lookback.reshape(-1, lookback.shape[-1]), lookback.ndim == 1


def forward_sigma(params: MlpParams, lookback) -> np.ndarray:
    batch, single = _as_batch(lookback)
    sigma, _ = sigma_forward(params, batch)
    return sigma[0] if single else sigma


def backward_sigma(params: MlpParams, lookback, upstream) -> MlpParams:
    """Gradient of ``sum(upstream * forward_sigma(params, lookback))``."""
    batch, _ = _as_batch(lookback)
    upstream = np.asarray(upstream, dtype=float).reshape(batch.shape[0], -1)
    _, cache = sigma_forward(params, batch)
    return sigma_backward(params, cache, upstream)


__all__ = [
    "MlpParams",
    "ARCH_VARIANTS",
    "FULLY_CONNECTED",
    "SSM_BACKED",
    "init_mlp",
    "init_variance_head",
    "forward_sigma",
    "backward_sigma",
    "softplus",
]
