"""Optimistic joint noise distribution realizing DOPA's probabilities as FTPL.

For a fixed reward estimate ``u`` with DOPA probabilities ``p`` and thresholds
``c_k = F_k^{-1}(1 - p_k)``, the noise law is the mixture

    sum_k p_k * (Q_1^- x ... x Q_k^+ x ... x Q_K^-)

where ``Q_k^+`` is ``Q_k`` conditioned on ``z_k > c_k`` and ``Q_k^-`` is
``Q_k`` conditioned on ``z_k <= c_k``.  Because ``u_k + c_k`` is the same for
every arm, a draw from component ``k`` always has its perturbed maximum at
``k``, so FTPL under this law picks arm ``k`` with probability ``p_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, InputError, InvariantViolation
from .generators import MarginalFamily
from .sampler import ArmSamplingRequest, dual_root_newton

_NEWTON_TOL = 1e-14

__all__ = [
    "OptimisticNoiseModel",
    "NoiseSample",
    "FrequencyReport",
    "build_noise_model",
    "sample_noise",
    "sample_noise_batch",
    "validate_argmax_frequencies",
]


@dataclass(frozen=True, eq=False)
class OptimisticNoiseModel:
    p: np.ndarray
    thresholds: np.ndarray
    family: MarginalFamily
    u: np.ndarray
    tau: float

    @property
    def n_arms(self) -> int:
        return self.p.size

    def stationarity_residual(self) -> float:
        """Spread of ``u_k + threshold_k`` across arms; zero at the exact solution."""
        level = self.u + self.thresholds
        return float(level.max() - level.min())


@dataclass(frozen=True)
class NoiseSample:
    z: np.ndarray
    component: int


def build_noise_model(u, family: MarginalFamily, epsilon: float = 1e-12) -> OptimisticNoiseModel:
    """Solve for ``p`` at ``u`` with the Newton oracle and attach the truncation thresholds."""
    req = ArmSamplingRequest(np.asarray(u, dtype=float), family, min(epsilon, 1e-12))
    res = dual_root_newton(req, tol=_NEWTON_TOL)
    p = res.p_hat
    # probabilities within the dual residual of 0 or 1 are not resolved by the solver
    if np.any(p <= _NEWTON_TOL) or np.any(p >= 1.0 - _NEWTON_TOL):
        raise DegenerateModelError(f"noise model needs every p_k inside (0, 1), got {p}")
    thresholds = family.quantile_of_tail(p)
    p.setflags(write=False)
    thresholds.setflags(write=False)
    return OptimisticNoiseModel(p, thresholds, family, req.u, res.tau_lo)


def _draw(model: OptimisticNoiseModel, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    n_arms = model.n_arms
    cum = np.cumsum(model.p)
    components = np.minimum(np.searchsorted(cum, rng.random(n) * cum[-1], side="right"), n_arms - 1)
    # w = 1 - v where v ~ U(F_k(c_k), 1) or U(0, F_k(c_k)); F_k(c_k) = 1 - p_k
    w01 = rng.random((n, n_arms))
    tail = (1.0 - w01) * model.p  # w in (0, p_k]
    body = model.p + w01 * (1.0 - model.p)  # w in [p_k, 1)
    own = np.zeros((n, n_arms), dtype=bool)
    own[np.arange(n), components] = True
    w = np.where(own, tail, body)
    w = np.clip(w, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    z = model.family.quantile_of_tail(w)
    return z, components


def _check_argmax(model: OptimisticNoiseModel, z: np.ndarray, components: np.ndarray) -> None:
    perturbed = model.u + z
    own = perturbed[np.arange(len(components)), components]
    # ties go to the mixture component
    beaten = perturbed > own[:, None]
    if np.any(beaten):
        row = int(np.argmax(beaten.any(axis=1)))
        raise InvariantViolation(f"sample {row}: perturbed argmax differs from mixture component {components[row]}")


def sample_noise_batch(model: OptimisticNoiseModel, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` draws: noise matrix ``(n, K)`` and mixture components ``(n,)``."""
    z, components = _draw(model, rng, n)
    _check_argmax(model, z, components)
    return z, components


def sample_noise(model: OptimisticNoiseModel, rng: np.random.Generator) -> NoiseSample:
    z, components = sample_noise_batch(model, rng, 1)
    return NoiseSample(z[0], int(components[0]))


@dataclass(frozen=True)
class FrequencyReport:
    n: int
    frequencies: np.ndarray
    p: np.ndarray
    z_scores: np.ndarray
    threshold: float = 4.0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) <= self.threshold))

    def rows(self) -> list[dict]:
        return [
            {"arm": k, "frequency": float(f), "p": float(q), "z_score": float(s)}
            for k, (f, q, s) in enumerate(zip(self.frequencies, self.p, self.z_scores))
        ]

    def to_dict(self) -> dict:
        return {"n": self.n, "threshold": self.threshold, "passed": self.passed, "arms": self.rows()}


def validate_argmax_frequencies(
    model: OptimisticNoiseModel,
    n: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> FrequencyReport:
    """Empirical argmax frequencies of ``u + z`` against ``p``, with binomial z-scores.

    The argmax is computed from the perturbed vector itself, not read off the
    mixture label; every draw is also checked against its label.
    """
    if n < 10_000:
        raise InputError(f"need at least 10^4 samples, got {n}")
    counts = np.zeros(model.n_arms, dtype=np.int64)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        z, components = sample_noise_batch(model, rng, m)
        winners = np.argmax(model.u + z, axis=1)
        counts += np.bincount(winners, minlength=model.n_arms)
        done += m
    freq = counts / n
    se = np.sqrt(model.p * (1.0 - model.p) / n)
    return FrequencyReport(n, freq, np.array(model.p), (freq - model.p) / se)
