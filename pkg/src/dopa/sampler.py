"""Arm-sampling distributions ``p = grad_u Phi(u; B)`` for Frechet families.

Four routes to the same vector:

* :func:`bisection_sample` -- bisection on the dual threshold (the fast path);
* :func:`dual_root_newton` -- safeguarded Newton on the same dual equation,
  solved to machine precision and used as an oracle;
* :func:`exp3_closed_form` -- softmax, valid for the exponential generator;
* :func:`generic_convex_baseline` -- exponentiated-gradient ascent on the
  primal simplex program, a deliberately generic solver used for timings.

The bisection works on rows of a 2-D array so that many independent
episodes can be advanced in lockstep; the single-request entry point is the
one-row special case and produces bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import bisect_rows, kernel_spec
from .errors import ConfigError, ConvergenceError, InputError
from .generators import MarginalFamily, MarginalGenerator

__all__ = [
    "ArmSamplingRequest",
    "ArmSamplingResult",
    "DEFAULT_EPSILON",
    "bisection_sample",
    "bisection_sample_rows",
    "modulus_delta",
    "iteration_bound",
    "iteration_limit",
    "dual_root_newton",
    "exp3_closed_form",
    "potential_value",
    "generic_convex_baseline",
    "dual_function",
]

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class ArmSamplingRequest:
    u: np.ndarray
    family: MarginalFamily
    epsilon: float = DEFAULT_EPSILON
    #: explicit modulus of continuity, for generators without a Lipschitz bound
    delta_override: float | None = None

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        if u.size != self.family.n_arms:
            raise InputError(f"u has {u.size} entries but the family has {self.family.n_arms} arms")
        if not np.all(np.isfinite(u)):
            raise InputError(f"reward estimate must be finite, got {u}")
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def n_arms(self) -> int:
        return self.u.size


@dataclass(frozen=True, eq=False)
class ArmSamplingResult:
    p_hat: np.ndarray
    tau_lo: float
    iterations: int
    method: str
    diagnostics: dict = field(default_factory=dict)


def modulus_delta(family: MarginalFamily, epsilon: float, override: float | None = None) -> float:
    """Lower bound ``eps * min(eta) / (2 L sqrt(K))`` on the modulus of continuity."""
    if not epsilon > 0.0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if override is not None:
        if not override > 0.0:
            raise ConfigError(f"delta override must be positive, got {override}")
        return float(override)
    lip = family.generator.lipschitz_bound
    if lip is None:
        raise ConfigError(
            f"generator {family.generator.spec()} has no Lipschitz bound; pass an explicit delta override"
        )
    return epsilon * float(np.min(family.eta)) / (2.0 * lip * math.sqrt(family.n_arms))


def iteration_bound(family: MarginalFamily, u, epsilon: float) -> float | None:
    """``log2(2 L sqrt(K) (max u - min u) / (eps eta))`` for uniform ``eta``, else ``None``.

    The bisection runs ``max(0, ceil(bound))`` iterations; see :func:`iteration_limit`.
    """
    lip = family.generator.lipschitz_bound
    if lip is None or not family.is_uniform:
        return None
    u = np.asarray(u, dtype=float)
    spread = float(np.max(u) - np.min(u))
    if spread <= 0.0:
        return 0.0
    return math.log2(2.0 * lip * math.sqrt(family.n_arms) * spread / (epsilon * family.eta[0]))


def iteration_limit(bound: float) -> int:
    """Largest admissible iteration count for a given bound: ``max(0, ceil(bound))``."""
    return max(0, math.ceil(bound))


def bisection_sample_rows(
    u: np.ndarray,
    generator: MarginalGenerator,
    eta,
    delta,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bisection on the dual threshold for every row of ``u``.

    ``u`` has shape ``(B, K)``; ``eta`` broadcasts against it and ``delta`` has
    shape ``(B,)``.  Returns ``(p_hat, tau_lo, iterations)``.  Each row runs
    exactly its own iteration count, so a row's output does not depend on the
    other rows.
    """
    u = np.ascontiguousarray(u, dtype=float)
    n_rows, n_arms = u.shape
    eta = np.asarray(eta, dtype=float)
    if eta.shape != u.shape:
        eta = np.ascontiguousarray(np.broadcast_to(eta, u.shape))
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (n_rows,):
        delta = np.ascontiguousarray(np.broadcast_to(delta, (n_rows,)))
    quantile_1k = float(generator.quantile(1.0 / n_arms))
    spec = kernel_spec(generator)
    if spec is not None:
        p_hat = np.empty_like(u)
        lo = np.empty(n_rows)
        n_iter = np.empty(n_rows, dtype=np.int64)
        bisect_rows(u, 1.0 / eta, eta, spec[0], spec[1], delta, quantile_1k, p_hat, lo, n_iter)
        return p_hat, lo, n_iter
    return _bisection_rows_numpy(u, generator, eta, delta, quantile_1k)


def _bisection_rows_numpy(u, generator, eta, delta, quantile_1k):
    n_rows, n_arms = u.shape
    # tau_k = -u_k - F_k^{-1}(1 - 1/K) puts arm k at probability exactly 1/K
    start = -u + eta * quantile_1k
    hi = start.max(axis=1)
    lo = start.min(axis=1)
    with np.errstate(divide="ignore"):
        ratio = np.log2((hi - lo) / delta)
    n_iter = np.where(hi > lo, np.ceil(np.maximum(ratio, 0.0)), 0.0).astype(np.int64)
    total = int(n_iter.max(initial=0))
    all_rows = bool(np.all(n_iter == total))
    for i in range(total):
        tau = 0.5 * (hi + lo)
        mass = generator.clipped_cdf((u + tau[:, None]) / eta).sum(axis=1)
        over = mass > 1.0
        if all_rows:
            hi = np.where(over, tau, hi)
            lo = np.where(over, lo, tau)
        else:
            live = i < n_iter
            hi = np.where(live & over, tau, hi)
            lo = np.where(live & ~over, tau, lo)
    q = generator.clipped_cdf((u + lo[:, None]) / eta)
    p_hat = q + ((1.0 - q.sum(axis=1)) / n_arms)[:, None]
    return p_hat, lo, n_iter


def bisection_sample(req: ArmSamplingRequest) -> ArmSamplingResult:
    """Approximate ``grad_u Phi(u; B)`` to within ``epsilon`` in the 2-norm."""
    if req.n_arms == 1:
        return ArmSamplingResult(np.ones(1), 0.0, 0, "bisection")
    delta = modulus_delta(req.family, req.epsilon, req.delta_override)
    p_hat, lo, n_iter = bisection_sample_rows(
        req.u.reshape(1, -1), req.family.generator, req.family.eta.reshape(1, -1), np.array([delta])
    )
    diag = {"delta": delta}
    gen = req.family.generator
    if not gen.zero_mean:
        # hybrids need not integrate to zero; keep the value for inspection
        diag["f_at_one"] = gen.f_at_one
    return ArmSamplingResult(p_hat[0], float(lo[0]), int(n_iter[0]), "bisection", diag)


def dual_function(family: MarginalFamily, u: np.ndarray, tau: float) -> np.ndarray:
    """Per-arm terms ``1 - F_k(-u_k - tau)`` of the dual equation ``sum = 1``."""
    return family.upper_tail(-np.asarray(u, dtype=float) - tau)


def dual_root_newton(req: ArmSamplingRequest, tol: float = 1e-14, max_iter: int = 500) -> ArmSamplingResult:
    """Solve ``sum_k (1 - F_k(-u_k - tau)) = 1`` by Newton's method kept inside a bracket.

    The bracket is Algorithm-3's initial one.  A Newton step that leaves it is
    replaced by the bracket midpoint.  Stops at ``|g - 1| <= tol`` or when the
    bracket has shrunk to a few ulp.
    """
    if req.n_arms == 1:
        return ArmSamplingResult(np.ones(1), 0.0, 0, "newton")
    fam, u, n_arms = req.family, req.u, req.n_arms
    start = -u + fam.eta * float(fam.generator.quantile(1.0 / n_arms))
    lo, hi = float(start.min()), float(start.max())

    def excess(tau):
        return math.fsum(dual_function(fam, u, tau)) - 1.0

    tau = hi
    g = excess(tau)
    n = 0
    while abs(g) > tol and n < max_iter:
        n += 1
        if g > 0.0:
            hi = tau
        else:
            lo = tau
        if hi - lo <= 4.0 * np.spacing(max(abs(hi), abs(lo), 1.0)):
            break
        slope = math.fsum(fam.density(-u - tau))
        step_ok = slope > 0.0 and math.isfinite(slope)
        cand = tau - g / slope if step_ok else math.nan
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        tau = cand
        g = excess(tau)
    if n >= max_iter and abs(g) > tol:
        raise ConvergenceError("dual Newton hit its iteration cap", {"tau": tau, "residual": g})
    q = dual_function(fam, u, tau)
    p = q / math.fsum(q)
    return ArmSamplingResult(p, tau, n, "newton", {"residual": g})


def exp3_closed_form(u, eta: float) -> np.ndarray:
    """Softmax ``exp(u_k/eta) / sum_j exp(u_j/eta)``, shifted by ``max u`` for stability."""
    u = np.asarray(u, dtype=float)
    z = np.exp((u - u.max()) / eta)
    return z / z.sum()


def potential_value(req: ArmSamplingRequest, p) -> float:
    """Objective ``sum u_k p_k - sum eta_k f(p_k)`` of the simplex program."""
    p = np.asarray(p, dtype=float)
    if p.shape != req.u.shape or np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-9:
        raise InputError(f"p is not a probability vector: {p}")
    p = np.clip(p, 0.0, 1.0)
    f = req.family.generator.integrated_quantile(p)
    return math.fsum(req.u * p) - math.fsum(req.family.eta * f)


_GL_NODES = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


def _kl_terms(delta):
    """``delta e^delta - e^delta + 1`` (so that ``KL(p e^delta || p) = sum p * this``), series near 0."""
    d = delta
    series = d * d * (0.5 + d * (1 / 3 + d * (1 / 8 + d * (1 / 30 + d * (1 / 144 + d / 840)))))
    direct = d * np.exp(d) - np.expm1(d)
    return np.where(np.abs(d) < 1e-2, series, direct)


def _bregman_terms(gen, p, quant_p, f_p, cand, diff, delta):
    """``f(cand) - f(p) - F^{-1}(p) (cand - p)`` per coordinate.

    Small moves use 3-point Gauss-Legendre on ``int_p^cand (F^{-1}(t) - F^{-1}(p)) dt``,
    which avoids subtracting nearly equal values of ``f``.
    """
    direct = gen.integrated_quantile(cand) - f_p - quant_p * diff
    small = np.abs(delta) < 1e-2
    if not np.any(small):
        return direct
    nodes = p[:, None] + diff[:, None] * (0.5 * (1.0 + _GL_NODES))
    quad = 0.5 * diff * ((gen.quantile(nodes) - quant_p[:, None]) @ _GL_WEIGHTS)
    return np.where(small, quad, direct)


def generic_convex_baseline(
    req: ArmSamplingRequest,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> ArmSamplingResult:
    """Maximize the simplex program by exponentiated-gradient ascent with backtracking.

    A step multiplies ``p`` by ``exp(delta)`` with ``delta = step * g - log sum p exp(step * g)``
    for the centred gradient ``g``.  It is accepted when
    ``h(cand) >= h(p) + <grad, cand - p> - KL(cand || p) / step``; the linear
    part cancels analytically, leaving ``eta . D_f(cand, p) <= KL / step``.
    The step grows by 1.5x after an accepted step, halves on a failure, and is
    capped so that no log-coordinate moves by more than about one unit.  Stops
    when the iterate moves by at most ``tol`` in the max-norm.
    """
    n_arms = req.n_arms
    if n_arms == 1:
        return ArmSamplingResult(np.ones(1), 0.0, 0, "generic_baseline")
    u, eta, gen = req.u, req.family.eta, req.family.generator

    p = np.full(n_arms, 1.0 / n_arms)
    f_p = gen.integrated_quantile(p)
    step = 1.0 / float(np.max(eta))
    n = 0
    change = math.inf
    while n < max_iter:
        n += 1
        quant_p = gen.quantile(p)
        grad = u - eta * quant_p
        centred = grad - float(p @ grad)
        # trust region: no coordinate moves by more than a factor e per step
        step = min(step, 1.0 / max(float(np.max(np.abs(centred))), 1e-300))
        while True:
            scaled = step * centred
            delta = scaled - math.log1p(float(p @ np.expm1(scaled)))
            diff = p * np.expm1(delta)
            cand = p + diff
            # an underflowed coordinate counts as a failed step
            if np.all(cand > 0.0):
                kl = float(p @ _kl_terms(delta))
                bregman = _bregman_terms(gen, p, quant_p, f_p, cand, diff, delta)
                if float(eta @ bregman) <= kl / step:
                    break
            step *= 0.5
            if step < 1e-300:
                raise ConvergenceError("baseline line search collapsed", {"iterations": n})
        change = float(np.max(np.abs(diff)))
        p = cand / cand.sum()
        f_p = gen.integrated_quantile(p)
        step *= 1.5
        if change <= tol:
            break
    else:
        raise ConvergenceError(
            f"generic baseline did not converge in {max_iter} iterations",
            {"iterations": n, "last_change": change},
        )
    return ArmSamplingResult(p, math.nan, n, "generic_baseline", {"objective": float(u @ p - eta @ f_p)})
