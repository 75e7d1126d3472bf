"""Independent oracles shared by the test modules."""
import math

import numpy as np


def finite_difference(f, arrays, eps=1e-5):
    """Central differences of scalar ``f(arrays)`` with respect to every entry of every array."""
    grads = {}
    for name, value in arrays.items():
        g = np.zeros_like(value, dtype=float)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in arrays.items()}
            minus = {k: v.copy() for k, v in arrays.items()}
            plus[name][idx] += eps
            minus[name][idx] -= eps
            g[idx] = (f(plus) - f(minus)) / (2 * eps)
        grads[name] = g
    return grads


def rel_error(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def unrolled_mean_forecast(params, lookback):
    """Scalar-loop reimplementation of the mean pipeline for one window."""
    x = [float(v) for v in lookback]
    if params.normalize:
        loc = sum(x) / len(x)
        scale = math.sqrt(sum((v - loc) ** 2 for v in x) / len(x))
        if scale < 1e-12:
            scale = 1.0
    else:
        loc, scale = 0.0, 1.0
    u = [(v - loc) / scale for v in x]
    dt = math.log1p(math.exp(float(params.delta_raw[0])))
    D = params.a_raw.shape[0]
    h = [0.0] * D
    for i in range(D):
        a = -math.log1p(math.exp(float(params.a_raw[i])))
        a_bar = math.exp(dt * a)
        b_bar = (a_bar - 1.0) / a * float(params.b[i])
        for t in range(len(u)):
            h[i] = a_bar * h[i] + b_bar * u[t]
    T = params.readout_w.shape[0]
    out = []
    for tau in range(T):
        acc = float(params.readout_b[tau])
        for i in range(D):
            acc += float(params.readout_w[tau, i]) * float(params.c[i]) * h[i]
        out.append(loc + scale * acc)
    return np.array(out)
