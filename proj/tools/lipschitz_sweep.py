#!/usr/bin/env python3
"""Slope sweep for the activation Lipschitz constants embedded in core/include/bip/activation.hpp.

Evaluates the analytic derivative on a dense grid, refines around the argmax,
and rounds the maximum up at the 6th decimal.
"""
import math

import numpy as np
from scipy.optimize import minimize_scalar

K = math.sqrt(2.0 / math.pi)


def gelu_grad(x):
    u = K * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * K * (1 + 3 * 0.044715 * x * x)


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1 + x * (1 - s))


def sweep(grad):
    xs = np.arange(-10.0, 10.0, 1e-5)
    g = np.abs(grad(xs))
    x0 = xs[np.argmax(g)]
    res = minimize_scalar(lambda x: -abs(grad(x)), bounds=(x0 - 1e-3, x0 + 1e-3), method="bounded",
                          options={"xatol": 1e-12})
    peak = max(g.max(), -res.fun)
    return x0, peak, math.ceil(peak * 1e6) / 1e6


for name, fn in [("GeLU(tanh)", gelu_grad), ("SiLU", silu_grad)]:
    x0, peak, declared = sweep(fn)
    print(f"{name}: argmax x={x0:.5f} max slope={peak:.10f} declared={declared:.6f}")
