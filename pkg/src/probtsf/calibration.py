"""Calibration metrics for Gaussian forecasts on a held-out set.

All metrics work on ``(N, T)`` arrays: N test trajectories by T horizon steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

HIST_EDGES = np.linspace(-5.0, 5.0, 41)  # bin width 0.25
COVERAGE_KS = (1.0, 2.0, 3.0)


def _as_2d(*arrays):
    out = [np.atleast_2d(np.asarray(a, dtype=float)) for a in arrays]
    for a in out[1:]:
        if a.shape != out[0].shape:
            raise ValueError(f"shape mismatch: {out[0].shape} vs {a.shape}")
    return out


def residuals(mu, sigma, futures) -> np.ndarray:
    """Standardized residuals ``z = (x - mu) / sigma``."""
    mu, sigma, futures = _as_2d(mu, sigma, futures)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be strictly positive everywhere")
    return (futures - mu) / sigma


def variance_per_tau(z) -> np.ndarray:
    """Population variance (divisor N) of each horizon column."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] < 2:
        raise ValueError(f"need at least 2 test trajectories, got {z.shape[0]}")
    return z.var(axis=0)


def kl_moment(samples) -> float:
    """KL(N(m, v) || N(0, 1)) for the sample mean m and population variance v."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    m = x.mean()
    v = x.var()
    if v == 0.0:
        return math.inf
    return float(0.5 * (v + m * m - 1.0 - math.log(v)))


def kl_binned(samples, edges=HIST_EDGES) -> float:
    """Histogram estimate of KL(empirical || N(0, 1)); tails beyond the edges form two extra bins."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    inner, _ = np.histogram(x, bins=edges)
    counts = np.concatenate([[np.sum(x < edges[0])], inner, [np.sum(x > edges[-1])]])
    cdf = ndtr(edges)
    q = np.concatenate([[cdf[0]], np.diff(cdf), [1.0 - cdf[-1]]])
    p = counts / x.size
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_to_standard_normal(samples, method: str = "moment") -> float:
    """Divergence of the samples' distribution from N(0, 1); ``inf`` for zero spread."""
    if method == "moment":
        return kl_moment(samples)
    if method == "binned":
        return kl_binned(samples)
    raise ValueError(f"unknown KL method {method!r}")


def coverage(mu, sigma, futures, k: float):
    """Fraction of points with ``|x - mu| <= k sigma``: pooled and per horizon step."""
    if k <= 0:
        raise ValueError("k must be positive")
    mu, sigma, futures = _as_2d(mu, sigma, futures)
    inside = np.abs(futures - mu) <= k * sigma
    return float(inside.mean()), inside.mean(axis=0)


def mae(mu, futures) -> float:
    mu, futures = _as_2d(mu, futures)
    return float(np.mean(np.abs(futures - mu)))


def histogram(z, edges=HIST_EDGES) -> dict:
    z = np.asarray(z, dtype=float).ravel()
    counts, _ = np.histogram(z, bins=edges)
    width = np.diff(edges)
    return {
        "edges": edges,
        "counts": counts,
        "density": counts / (z.size * width),
        "below": int(np.sum(z < edges[0])),
        "above": int(np.sum(z > edges[-1])),
    }


def histogram_taus(T: int) -> tuple[int, int, int]:
    """1-based horizon steps shown as panels: first, midpoint, last."""
    return (1, max(T // 2, 1), T)


@dataclass
class CalibrationReport:
    n_test: int
    horizon: int
    variance_per_tau: np.ndarray
    kl_per_tau: np.ndarray
    kl_pooled: float
    variance_pooled: float
    mean_pooled: float
    coverage: dict[float, float]
    coverage_per_tau: dict[float, np.ndarray]
    mae_probabilistic: float
    mae_deterministic: float | None
    histograms: dict[str, dict] = field(repr=False)
    kl_method: str = "moment"

    def summary(self) -> dict:
        out = {
            "n_test": self.n_test,
            "horizon": self.horizon,
            "kl_method": self.kl_method,
            "kl_pooled": self.kl_pooled,
            "variance_pooled": self.variance_pooled,
            "mean_pooled": self.mean_pooled,
            "variance_min": float(self.variance_per_tau.min()),
            "variance_max": float(self.variance_per_tau.max()),
            "kl_max": float(self.kl_per_tau.max()),
            "mae_probabilistic": self.mae_probabilistic,
            "mae_deterministic": self.mae_deterministic,
        }
        for k, v in self.coverage.items():
            out[f"coverage_{k:g}sigma"] = v
        return out


def report_from_forecasts(mu, sigma, futures, mu_deterministic=None, kl_method: str = "moment") -> CalibrationReport:
    """Assemble every metric from precomputed forecasts."""
    mu, sigma, futures = _as_2d(mu, sigma, futures)
    if futures.shape[0] == 0:
        raise ValueError("test set is empty")
    z = residuals(mu, sigma, futures)
    T = z.shape[1]
    var_tau = variance_per_tau(z)
    kl_tau = np.array([kl_to_standard_normal(z[:, j], kl_method) for j in range(T)])
    cov, cov_tau = {}, {}
    for k in COVERAGE_KS:
        cov[k], cov_tau[k] = coverage(mu, sigma, futures, k)
    hists = {f"tau={tau}": histogram(z[:, tau - 1]) for tau in histogram_taus(T)}
    hists["pooled"] = histogram(z)
    return CalibrationReport(
        n_test=z.shape[0],
        horizon=T,
        variance_per_tau=var_tau,
        kl_per_tau=kl_tau,
        kl_pooled=kl_to_standard_normal(z, kl_method),
        variance_pooled=float(z.var()),
        mean_pooled=float(z.mean()),
        coverage=cov,
        coverage_per_tau=cov_tau,
        mae_probabilistic=mae(mu, futures),
        mae_deterministic=None if mu_deterministic is None else mae(mu_deterministic, futures),
        histograms=hists,
        kl_method=kl_method,
    )


def build_report(mean_params, sigma_params, test_set, mean_deterministic=None, kl_method: str = "moment"):
    """Forecast every test lookback and compute the full calibration report."""
    from probtsf.ssm import forecast_mean
    from probtsf.variance import forward_sigma

    if test_set.n == 0:
        raise ValueError("test set is empty")
    mu = forecast_mean(mean_params, test_set.lookbacks)
    sigma = forward_sigma(sigma_params, test_set.lookbacks)
    mu_det = None if mean_deterministic is None else forecast_mean(mean_deterministic, test_set.lookbacks)
    return report_from_forecasts(mu, sigma, test_set.futures, mu_det, kl_method)


def oracle_forecasts(test_set):
    """Exact random-walk forecasts for every test lookback."""
    from probtsf.datagen import brownian_oracle

    taus = np.arange(1, test_set.horizon + 1)
    return brownian_oracle(test_set.lookbacks[:, -1:], taus[None, :])


__all__ = [
    "CalibrationReport",
    "residuals",
    "variance_per_tau",
    "kl_to_standard_normal",
    "kl_moment",
    "kl_binned",
    "coverage",
    "mae",
    "histogram",
    "histogram_taus",
    "report_from_forecasts",
    "build_report",
    "oracle_forecasts",
]
