"""SVG panels for calibration reports (matplotlib, Agg backend, reproducible output)."""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "probtsf"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def calibration_figure(report, path, sample=None) -> None:
    """Three rows: sample forecast, residual histograms, per-step variance and KL.

    ``sample`` is an optional ``(lookback, future, mu, sigma)`` tuple.
    """
    plt = _pyplot()
    fig = plt.figure(figsize=(12, 9))
    grid = fig.add_gridspec(3, 4)

    ax = fig.add_subplot(grid[0, :])
    if sample is not None:
        lookback, future, mu, sigma = (np.asarray(a) for a in sample)
        P, T = len(lookback), len(future)
        past = np.arange(1, P + 1)
        ahead = np.arange(P + 1, P + T + 1)
        ax.plot(past, lookback, color="k", lw=1, label="lookback")
        ax.plot(ahead, future, "k--", lw=1, label="future")
        ax.plot(ahead, mu, color="C0", lw=1.5, label="forecast")
        ax.fill_between(ahead, mu - 2 * sigma, mu + 2 * sigma, color="C0", alpha=0.2, label="2 sigma")
        ax.fill_between(ahead, mu - sigma, mu + sigma, color="C0", alpha=0.3, label="1 sigma")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("t")

    grid_z = np.linspace(-5, 5, 201)
    pdf = np.exp(-0.5 * grid_z**2) / np.sqrt(2 * np.pi)
    for j, (name, hist) in enumerate(report.histograms.items()):
        ax = fig.add_subplot(grid[1, j])
        edges = hist["edges"]
        ax.bar(edges[:-1], hist["density"], width=np.diff(edges), align="edge", color="C0", alpha=0.7)
        ax.plot(grid_z, pdf, color="C1")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("z")

    taus = np.arange(1, report.horizon + 1)
    ax = fig.add_subplot(grid[2, :2])
    ax.plot(taus, report.variance_per_tau, color="C0")
    ax.axhline(1.0, color="k", ls=":")
    ax.set_xlabel("tau")
    ax.set_ylabel("variance of z")
    ax = fig.add_subplot(grid[2, 2:])
    ax.plot(taus, report.kl_per_tau, color="C2")
    ax.set_xlabel("tau")
    ax.set_ylabel("KL to N(0,1)")
    ax.set_title(f"pooled KL = {report.kl_pooled:.3g}", fontsize=9)

    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def coverage_figure(report, path) -> None:
    """MAE comparison (left) and per-step interval coverage (right)."""
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4), gridspec_kw={"width_ratios": [1, 3]})
    labels, values = ["probabilistic"], [report.mae_probabilistic]
    if report.mae_deterministic is not None:
        labels.insert(0, "deterministic")
        values.insert(0, report.mae_deterministic)
    left.bar(labels, values, color=["C7", "C0"][-len(values) :])
    left.set_ylabel("MAE")

    taus = np.arange(1, report.horizon + 1)
    expected = {1.0: 0.683, 2.0: 0.954, 3.0: 0.997}
    for i, (k, curve) in enumerate(report.coverage_per_tau.items()):
        right.plot(taus, curve, color=f"C{i}", label=f"{k:g} sigma")
        right.axhline(expected.get(k, np.nan), color=f"C{i}", ls="--")
    right.set_xlabel("tau")
    right.set_ylabel("coverage")
    right.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
