"""Compiled bisection kernels for generators with closed-form CDFs.

Generator kinds: 0 = shifted Pareto with parameter ``alpha``; 1 = exponential.
Both kernels clip ``F`` to ``[0, 1]`` by flooring/capping its argument, so no
infinities are produced and the inner loops vectorize.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .generators import ExponentialGenerator, ParetoGenerator

PARETO = 0
EXPONENTIAL = 1

# reassociation lets the mass reduction vectorize; inputs are always finite
_FAST = {"reassoc", "contract", "arcp", "nsz"}


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _q_pareto_half(x):
    # (2 - x)^-2, clipped to 1 by flooring the base
    base = max(2.0 - x, 1.0)
    return 1.0 / (base * base)


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _q_pareto(x, alpha):
    base = max(1.0 / alpha - x * ((1.0 - alpha) / alpha), 1.0)
    return base ** (-1.0 / (1.0 - alpha))


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _q_exponential(x):
    return math.exp(min(x, 1.0) - 1.0)


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _mass(kind, alpha, a, b, tau):
    """``sum_k clip(F(a_k + tau b_k))``."""
    total = 0.0
    if kind == EXPONENTIAL:
        for k in range(a.size):
            total += _q_exponential(a[k] + tau * b[k])
    elif alpha == 0.5:
        for k in range(a.size):
            total += _q_pareto_half(a[k] + tau * b[k])
    else:
        for k in range(a.size):
            total += _q_pareto(a[k] + tau * b[k], alpha)
    return total


@njit(cache=True, error_model="numpy")
def _fill(kind, alpha, a, b, tau, out):
    for k in range(a.size):
        x = a[k] + tau * b[k]
        if kind == EXPONENTIAL:
            out[k] = _q_exponential(x)
        elif alpha == 0.5:
            out[k] = _q_pareto_half(x)
        else:
            out[k] = _q_pareto(x, alpha)


@njit(cache=True, error_model="numpy")
def bisect_rows(u, inv_eta, eta, kind, alpha, delta, quantile_1k, p_out, lo_out, n_out):
    """Algorithm-3 bisection on each row; ``p_hat = q + (1 - sum q)/K`` at the lower bracket."""
    n_rows, n_arms = u.shape
    a = np.empty(n_arms)
    for r in range(n_rows):
        hi = -np.inf
        lo = np.inf
        for k in range(n_arms):
            s = -u[r, k] + eta[r, k] * quantile_1k
            hi = max(hi, s)
            lo = min(lo, s)
            a[k] = u[r, k] * inv_eta[r, k]
        n_iter = 0
        if hi > lo:
            ratio = math.log2((hi - lo) / delta[r])
            if ratio > 0.0:
                n_iter = int(math.ceil(ratio))
        b = inv_eta[r]
        row = p_out[r]
        for _ in range(n_iter):
            tau = 0.5 * (hi + lo)
            if _mass(kind, alpha, a, b, tau) > 1.0:
                hi = tau
            else:
                lo = tau
        _fill(kind, alpha, a, b, lo, row)
        total = 0.0
        for k in range(n_arms):
            total += row[k]
        fill = (1.0 - total) / n_arms
        for k in range(n_arms):
            row[k] += fill
        lo_out[r] = lo
        n_out[r] = n_iter


def kernel_spec(generator) -> tuple[int, float] | None:
    """``(kind, alpha)`` when a compiled kernel exists for ``generator``."""
    if isinstance(generator, ParetoGenerator):
        return PARETO, float(generator.alpha)
    if isinstance(generator, ExponentialGenerator):
        return EXPONENTIAL, 1.0
    return None
