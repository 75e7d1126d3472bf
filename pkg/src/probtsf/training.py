"""Two-stage training: squared-error pretraining of the mean head, then joint
Gaussian negative log-likelihood over both heads."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from probtsf.datagen import WindowedDataset
from probtsf.optim import Adam, clip_by_global_norm
from probtsf.ssm import SsmParams, init_ssm, latent_backward, latent_forward, standardize
from probtsf.variance import (
    ARCH_VARIANTS,
    FULLY_CONNECTED,
    MlpParams,
    init_variance_head,
    sigma_backward,
    sigma_forward,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "probtsf-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the last parameters that gave a finite one."""

    def __init__(self, message, mean_params, sigma_params, history):
        super().__init__(message)
        self.mean_params = mean_params
        self.sigma_params = sigma_params
        self.history = history


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    pretrain_epochs: int = 50
    joint_epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    arch_variant: str = FULLY_CONNECTED
    latent_dim: int = 32
    hidden: int = 128
    normalize: bool = True
    # Per-window standardization for the variance head; None follows ``normalize``.
    sigma_normalize: bool | None = None
    # L2 penalty on variance-head weight matrices (biases excluded).
    sigma_weight_decay: float = 0.1
    # Test-harness mode: hold sigma at exactly 1 during the joint phase.
    fixed_unit_sigma: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.pretrain_epochs < 0 or self.joint_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.arch_variant not in ARCH_VARIANTS:
            raise ValueError(f"arch_variant must be one of {ARCH_VARIANTS}")
        if self.latent_dim < 1 or self.hidden < 1:
            raise ValueError("latent_dim and hidden must be >= 1")


@dataclass
class TrainHistory:
    """One row per optimizer step; ``point_loss`` is the batch squared-error loss."""

    phase: list[str] = field(default_factory=list)
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    point_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[tuple[str, int, float]] = field(default_factory=list)

    def record(self, phase, epoch, loss, point_loss):
        self.phase.append(phase)
        self.epoch.append(epoch)
        self.loss.append(loss)
        self.point_loss.append(point_loss)

    def losses(self, phase: str) -> np.ndarray:
        return np.array([l for p, l in zip(self.phase, self.loss) if p == phase])

    def __len__(self):
        return len(self.loss)


@dataclass
class TrainResult:
    mean: SsmParams
    sigma: MlpParams
    history: TrainHistory
    mean_pretrained: SsmParams


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {shape} vs {np.shape(a)}")


def pretrain_loss(mu_pred, futures) -> float:
    """Mean over trajectories of the summed squared error over the horizon."""
    mu_pred = np.atleast_2d(np.asarray(mu_pred, dtype=float))
    futures = np.atleast_2d(np.asarray(futures, dtype=float))
    _check_shapes(mu_pred, futures)
    return float(np.sum((futures - mu_pred) ** 2) / futures.shape[0])


def nll_loss(mu_pred, sigma_pred, futures) -> float:
    """Gaussian negative log-likelihood without the constant, averaged over trajectories."""
    mu_pred, sigma_pred, futures = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (mu_pred, sigma_pred, futures))
    _check_shapes(mu_pred, sigma_pred, futures)
    if np.any(~(sigma_pred > 0)):
        raise ValueError("sigma must be strictly positive everywhere")
    z = (futures - mu_pred) / sigma_pred
    return float(np.sum(0.5 * z * z + np.log(sigma_pred)) / futures.shape[0])


def pretrain_loss_grad(mu_pred, futures):
    """d pretrain_loss / d mu."""
    mu_pred = np.atleast_2d(np.asarray(mu_pred, dtype=float))
    futures = np.atleast_2d(np.asarray(futures, dtype=float))
    return -2.0 * (futures - mu_pred) / futures.shape[0]


def nll_loss_grad(mu_pred, sigma_pred, futures):
    """(d nll / d mu, d nll / d sigma)."""
    mu_pred, sigma_pred, futures = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (mu_pred, sigma_pred, futures))
    n = futures.shape[0]
    r = futures - mu_pred
    inv = 1.0 / sigma_pred
    return -r * inv * inv / n, (1.0 - (r * inv) ** 2) * inv / n


def _split_arrays(grads: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix) :]: v for k, v in grads.items() if k.startswith(prefix)}


def _is_weight(name: str) -> bool:
    return name.startswith("w") or name.endswith("readout_w")


def _mean_forward(params: SsmParams, lookbacks):
    loc, scale, inputs = standardize(lookbacks, params.normalize)
    out, cache = latent_forward(params, inputs)
    return loc + scale * out, (scale, cache)


def _mean_backward(params: SsmParams, cache, upstream) -> SsmParams:
    scale, inner = cache
    return latent_backward(params, inner, upstream * scale)


def init_models(P: int, T: int, cfg: TrainConfig):
    mean_seq, sigma_seq, _ = np.random.SeedSequence(cfg.seed).spawn(3)
    mean = init_ssm(cfg.latent_dim, T, np.random.default_rng(mean_seq), normalize=cfg.normalize)
    sigma = init_variance_head(
        cfg.arch_variant,
        P,
        T,
        np.random.default_rng(sigma_seq),
        hidden=cfg.hidden,
        latent_dim=cfg.latent_dim,
        normalize=cfg.normalize if cfg.sigma_normalize is None else cfg.sigma_normalize,
    )
    return mean, sigma


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(train_set: WindowedDataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Pretrain the mean head on squared error, then train both heads on the NLL."""
    if train_set.n == 0:
        raise ValueError("training set is empty")
    P, T = train_set.lookback, train_set.horizon
    mean, sigma = init_models(P, T, cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    history = TrainHistory()
    X, Y = train_set.lookbacks, train_set.futures
    good = (mean, sigma)

    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.pretrain_epochs):
        start = time.perf_counter()
        for idx in _batches(train_set.n, cfg.batch_size, shuffle_rng):
            mu, cache = _mean_forward(mean, X[idx])
            loss = pretrain_loss(mu, Y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite pretraining loss at epoch {epoch}", *good, history)
            good = (mean, sigma)
            history.record("pretrain", epoch, loss, loss)
            grads = _mean_backward(mean, cache, pretrain_loss_grad(mu, Y[idx])).arrays()
            grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
            mean = mean.with_arrays(opt.step(mean.arrays(), grads))
        history.epoch_seconds.append(("pretrain", epoch, time.perf_counter() - start))
        log.info("pretrain epoch %d loss %.6g", epoch, loss)
    mean_pretrained = mean

    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.joint_epochs):
        start = time.perf_counter()
        for idx in _batches(train_set.n, cfg.batch_size, shuffle_rng):
            mu, mcache = _mean_forward(mean, X[idx])
            if cfg.fixed_unit_sigma:
                sig = np.ones_like(mu)
            else:
                sig, scache = sigma_forward(sigma, X[idx])
            loss = nll_loss(mu, sig, Y[idx]) if np.all(sig > 0) else float("nan")
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite joint loss at epoch {epoch}", *good, history)
            good = (mean, sigma)
            history.record("joint", epoch, loss, pretrain_loss(mu, Y[idx]))
            d_mu, d_sig = nll_loss_grad(mu, sig, Y[idx])
            grads = {f"mean.{k}": v for k, v in _mean_backward(mean, mcache, d_mu).arrays().items()}
            if not cfg.fixed_unit_sigma:
                sgrads = sigma_backward(sigma, scache, d_sig).arrays()
                if cfg.sigma_weight_decay:
                    for k, w in sigma.arrays().items():
                        if _is_weight(k):
                            sgrads[k] = sgrads[k] + cfg.sigma_weight_decay * w
                grads.update({f"sigma.{k}": v for k, v in sgrads.items()})
            grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
            current = {f"mean.{k}": v for k, v in mean.arrays().items()}
            if not cfg.fixed_unit_sigma:
                current.update({f"sigma.{k}": v for k, v in sigma.arrays().items()})
            updated = opt.step(current, grads)
            mean = mean.with_arrays(_split_arrays(updated, "mean."))
            if not cfg.fixed_unit_sigma:
                sigma = sigma.with_arrays(_split_arrays(updated, "sigma."))
        history.epoch_seconds.append(("joint", epoch, time.perf_counter() - start))
        log.info("joint epoch %d loss %.6g", epoch, loss)
    return TrainResult(mean, sigma, history, mean_pretrained)


# -- checkpoints -------------------------------------------------------------


def _encode_arrays(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in arrays.items()}


def _decode_arrays(blob: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, v in blob.items():
        data = np.array(v["data"], dtype=float)
        shape = tuple(v["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"array {k!r}: {data.size} values for shape {shape}")
        out[k] = data.reshape(shape)
    return out


def _encode_ssm(p: SsmParams) -> dict:
    return {"normalize": p.normalize, "arrays": _encode_arrays(p.arrays())}


def _decode_ssm(blob: dict) -> SsmParams:
    arrays = _decode_arrays(blob["arrays"])
    missing = set(SsmParams.ARRAYS) - arrays.keys()
    if missing:
        raise CheckpointError(f"missing SSM arrays: {sorted(missing)}")
    return SsmParams(**{k: arrays[k] for k in SsmParams.ARRAYS}, normalize=bool(blob["normalize"]))


def _encode_sigma(p: MlpParams) -> dict:
    blob = {"arch_variant": p.arch_variant, "normalize": p.normalize}
    if p.ssm is not None:
        blob["ssm"] = _encode_ssm(p.ssm)
    else:
        blob["arrays"] = _encode_arrays(p.arrays())
        blob["layers"] = len(p.weights)
    return blob


def _decode_sigma(blob: dict) -> MlpParams:
    if blob["arch_variant"] not in ARCH_VARIANTS:
        raise CheckpointError(f"unknown arch_variant {blob['arch_variant']!r}")
    if "ssm" in blob:
        return MlpParams((), (), blob["arch_variant"], _decode_ssm(blob["ssm"]), bool(blob["normalize"]))
    arrays = _decode_arrays(blob["arrays"])
    n = int(blob["layers"])
    try:
        weights = tuple(arrays[f"w{i}"] for i in range(n))
        biases = tuple(arrays[f"b{i}"] for i in range(n))
    except KeyError as exc:
        raise CheckpointError(f"missing variance-head array {exc}") from None
    return MlpParams(weights, biases, blob["arch_variant"], None, bool(blob["normalize"]))


def save_checkpoint(path, mean: SsmParams, sigma: MlpParams, cfg=None, mean_pretrained=None, extra=None) -> None:
    """Write a versioned JSON checkpoint; the file appears atomically."""
    cfg_dict = asdict(cfg) if cfg is not None else {}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "train_config": cfg_dict,
        "extra": extra or {},
        "mean": _encode_ssm(mean),
        "sigma": _encode_sigma(sigma),
    }
    if mean_pretrained is not None:
        doc["mean_pretrained"] = _encode_ssm(mean_pretrained)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    mean: SsmParams
    sigma: MlpParams
    train_config: TrainConfig | None
    mean_pretrained: SsmParams | None
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = None
        if doc["train_config"]:
            known = {f.name for f in fields(TrainConfig)}
            cfg = TrainConfig(**{k: v for k, v in doc["train_config"].items() if k in known})
        pre = _decode_ssm(doc["mean_pretrained"]) if "mean_pretrained" in doc else None
        return Checkpoint(_decode_ssm(doc["mean"]), _decode_sigma(doc["sigma"]), cfg, pre, doc.get("extra", {}))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc!r})") from None


__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "TrainingDiverged",
    "Checkpoint",
    "CheckpointError",
    "pretrain_loss",
    "nll_loss",
    "pretrain_loss_grad",
    "nll_loss_grad",
    "init_models",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]
