"""GBPA loop, importance-weighted estimates and the policy catalogue.

Episodes for several seeds run in lockstep: at each round the DOPA rows of
all live episodes go through one bisection call.  Every row carries its own
random streams, environment and iteration count, so an episode's trace does
not depend on which other seeds share the batch.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .environments import Environment, History, RegretLedger, env_rewards
from .errors import ConfigError, DopaError, InvariantViolation
from .generators import MarginalFamily, MarginalGenerator, ParetoGenerator, corollary3_pair, parse_generator
from .noise import build_noise_model, sample_noise
from .sampler import (
    DEFAULT_EPSILON,
    ArmSamplingRequest,
    bisection_sample_rows,
    exp3_closed_form,
    generic_convex_baseline,
    modulus_delta,
)

__all__ = [
    "RNG_ALGORITHM",
    "POLICY_KINDS",
    "Schedule",
    "Policy",
    "LearnerState",
    "RewardEstimate",
    "RunTrace",
    "AggregateStats",
    "EpisodeFailure",
    "make_rng",
    "tuned_eta",
    "lipschitz_estimate",
    "make_policy",
    "next_distribution",
    "next_distributions",
    "estimate_reward",
    "sample_arm",
    "run_episode",
    "run_batch",
    "aggregate",
]

RNG_ALGORITHM = "numpy.Philox(4x64-10)"
POLICY_KINDS = ("dopa_static", "dopa_anytime", "ftrl_baseline", "exp3", "ftl", "ftpl_optimistic")


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream)``; stream 0 is the learner, 1 the environment."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class Schedule:
    """``eta_t = scale`` (constant) or ``eta_t = scale * sqrt(t)``."""

    kind: str = "constant"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "sqrt"):
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ConfigError(f"schedule scale must be positive, got {self.scale}")

    def eta(self, t: int) -> float:
        return self.scale if self.kind == "constant" else self.scale * math.sqrt(t)

    @classmethod
    def parse(cls, text) -> "Schedule":
        """``1.5``, ``constant(1.5)`` or ``sqrt(2)``."""
        if isinstance(text, (int, float)):
            return cls("constant", float(text))
        s = str(text).strip()
        for kind in ("constant", "sqrt"):
            if s.startswith(kind + "(") and s.endswith(")"):
                try:
                    return cls(kind, float(s[len(kind) + 1 : -1]))
                except ValueError as exc:
                    raise ConfigError(f"bad schedule {s!r}") from exc
        try:
            return cls("constant", float(s))
        except ValueError as exc:
            raise ConfigError(f"bad schedule {s!r}") from exc

    def spec(self) -> str:
        return f"{self.kind}({self.scale!r})"


def tuned_eta(alpha: float, n_arms: int, horizon: int) -> float:
    """``sqrt(T (1 - alpha) / (2 alpha)) * K^(alpha - 1/2)``."""
    return math.sqrt(horizon * (1.0 - alpha) / (2.0 * alpha)) * n_arms ** (alpha - 0.5)


def lipschitz_estimate(generator: MarginalGenerator) -> float:
    """``sup F'`` over ``F in (0, 1)``, i.e. ``1 / min_t (F^{-1})'(t)``, found numerically."""
    if generator.lipschitz_bound is not None:
        return float(generator.lipschitz_bound)
    grid = np.linspace(1e-6, 1.0 - 1e-6, 20001)
    with np.errstate(all="ignore"):
        vals = generator.quantile_derivative(grid)
    i = int(np.nanargmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: float(generator.quantile_derivative(t)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    # small safety margin: a larger L only shrinks delta
    return 1.01 / min(float(res.fun), float(vals[i]))


@dataclass(frozen=True)
class Policy:
    kind: str
    generator: MarginalGenerator | None = None
    schedule: Schedule = Schedule()
    epsilon: float = DEFAULT_EPSILON
    #: Lipschitz constant used to size the bisection tolerance when the generator has none
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy {self.kind!r}; known: {', '.join(POLICY_KINDS)}")
        if self.kind in ("dopa_static", "dopa_anytime", "ftrl_baseline", "ftpl_optimistic") and self.generator is None:
            raise ConfigError(f"{self.kind} needs a generator")
        if self.kind == "ftrl_baseline" and not isinstance(self.generator, ParetoGenerator):
            raise ConfigError("ftrl_baseline uses the Tsallis regularizer, i.e. a pareto(alpha) generator")
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.generator is not None and self.generator.lipschitz_bound is None and self.lipschitz is None:
            object.__setattr__(self, "lipschitz", lipschitz_estimate(self.generator))

    def eta(self, t: int) -> float:
        return self.schedule.eta(t)

    def family(self, n_arms: int, t: int) -> MarginalFamily:
        return MarginalFamily.uniform(self.generator, n_arms, self.eta(t))

    def delta(self, n_arms: int, t: int) -> float:
        eta = self.eta(t)
        if self.generator.lipschitz_bound is not None:
            return self.epsilon * eta / (2.0 * self.generator.lipschitz_bound * math.sqrt(n_arms))
        return self.epsilon * eta / (2.0 * self.lipschitz * math.sqrt(n_arms))

    def describe(self) -> dict:
        out = {"kind": self.kind, "schedule": self.schedule.spec(), "epsilon": self.epsilon}
        if self.generator is not None:
            out["generator"] = self.generator.spec()
        if self.lipschitz is not None:
            out["lipschitz"] = self.lipschitz
        return out


def make_policy(
    kind: str,
    generator: str | MarginalGenerator | None = None,
    schedule: str | float | Schedule | None = None,
    epsilon: float = DEFAULT_EPSILON,
    n_arms: int | None = None,
    horizon: int | None = None,
) -> Policy:
    """Policy with sensible defaults.

    Defaults: ``dopa_anytime`` uses ``pareto(alpha=0.5)`` with ``eta_t = 2 sqrt(t)``;
    ``dopa_static`` and ``ftrl_baseline`` use ``pareto(alpha=0.5)`` with the
    horizon-tuned constant rate when ``n_arms`` and ``horizon`` are given (else
    ``eta = 1``); ``exp3`` uses ``eta = 1``.  A hybrid generator passed to
    ``dopa_anytime`` defaults to ``eta_t = sqrt(t)``.
    """
    if isinstance(generator, str):
        generator = parse_generator(generator)
    if generator is None and kind in ("dopa_static", "dopa_anytime", "ftrl_baseline", "ftpl_optimistic"):
        generator = ParetoGenerator(0.5)
    if isinstance(schedule, Schedule):
        sched = schedule
    elif schedule is not None:
        sched = Schedule.parse(schedule)
    elif kind == "dopa_anytime":
        sched = Schedule("sqrt", 2.0 if isinstance(generator, ParetoGenerator) else 1.0)
    elif kind in ("dopa_static", "ftrl_baseline", "ftpl_optimistic") and n_arms and horizon:
        alpha = generator.alpha if isinstance(generator, ParetoGenerator) else 0.5
        sched = Schedule("constant", tuned_eta(alpha, n_arms, horizon))
    else:
        sched = Schedule()
    return Policy(kind, generator, sched, epsilon)


def corollary3_policy(epsilon: float = DEFAULT_EPSILON) -> Policy:
    """Hybrid generator with ``gamma_t = sqrt(t)`` on both components."""
    return make_policy("dopa_anytime", corollary3_pair(), Schedule("sqrt", 1.0), epsilon)


@dataclass
class LearnerState:
    u_hat: np.ndarray
    t: int = 1

    @classmethod
    def initial(cls, n_arms: int) -> "LearnerState":
        return cls(np.zeros(n_arms), 1)


@dataclass(frozen=True)
class RewardEstimate:
    arm: int
    value: float
    probability: float


def estimate_reward(arm: int, reward: float, p_chosen: float) -> RewardEstimate:
    """Importance weight ``reward / p`` on the chosen coordinate."""
    if not p_chosen > 0.0:
        raise InvariantViolation(f"arm {arm} was drawn with probability {p_chosen}")
    return RewardEstimate(int(arm), reward / p_chosen, float(p_chosen))


def _ftl_rows(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    out[np.arange(u.shape[0]), np.argmax(u, axis=1)] = 1.0  # argmax takes the lowest index on ties
    return out


def next_distributions(policy: Policy, u_rows: np.ndarray, t: int) -> np.ndarray:
    """Distributions for every row of ``u_rows`` at round ``t`` (``ftpl_optimistic`` gives the model's p)."""
    u_rows = np.atleast_2d(np.asarray(u_rows, dtype=float))
    n_rows, n_arms = u_rows.shape
    kind = policy.kind
    if n_arms == 1:
        return np.ones((n_rows, 1))
    if kind == "ftl":
        return _ftl_rows(u_rows)
    eta = policy.eta(t)
    if kind == "exp3":
        return np.stack([exp3_closed_form(u, eta) for u in u_rows])
    if kind in ("dopa_static", "dopa_anytime"):
        delta = np.full(n_rows, policy.delta(n_arms, t))
        p, _, _ = bisection_sample_rows(u_rows, policy.generator, eta, delta)
        return p
    fam = policy.family(n_arms, t)
    if kind == "ftrl_baseline":
        return np.stack([generic_convex_baseline(ArmSamplingRequest(u, fam, policy.epsilon)).p_hat for u in u_rows])
    return np.stack([m.p for m in _noise_models(policy, u_rows, t)])


def _noise_models(policy: Policy, u_rows: np.ndarray, t: int):
    fam = policy.family(u_rows.shape[1], t)
    return [build_noise_model(u, fam, policy.epsilon) for u in u_rows]


def next_distribution(policy: Policy, state: LearnerState) -> np.ndarray:
    return next_distributions(policy, state.u_hat[None, :], state.t)[0]


def sample_arm(p: np.ndarray, uniform: float) -> int:
    """Inverse CDF on the cumulative vector; lower index on ties."""
    cum = np.cumsum(p)
    return int(min(np.searchsorted(cum, uniform * cum[-1], side="right"), p.size - 1))


# -- traces -----------------------------------------------------------------


@dataclass
class RunTrace:
    seed: int
    arms: np.ndarray
    rewards: np.ndarray
    probabilities: np.ndarray
    cum_regret: np.ndarray
    ledger: RegretLedger
    u_hat: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.arms.size

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])

    def rows(self):
        for i in range(self.horizon):
            yield (self.seed, i + 1, int(self.arms[i]), repr(float(self.rewards[i])),
                   repr(float(self.probabilities[i])), repr(float(self.cum_regret[i])))

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(TRACE_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


TRACE_HEADER = ("seed", "t", "arm", "reward", "probability", "cum_pseudo_regret")
AGGREGATE_HEADER = ("t", "mean", "min", "max", "stderr", "bound_anytime", "bound_tuned")


@dataclass(frozen=True)
class EpisodeFailure:
    seed: int
    round: int
    error: str


@dataclass
class AggregateStats:
    n_seeds: int
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    stderr: np.ndarray
    n_arms: int
    alpha: float = 0.5
    failures: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.mean.size

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    def bound_anytime(self, t=None) -> np.ndarray:
        """``4 sqrt(K t) + 1``."""
        t = np.arange(1, self.horizon + 1) if t is None else np.asarray(t, dtype=float)
        return 4.0 * np.sqrt(self.n_arms * t) + 1.0

    def bound_tuned(self, t=None) -> np.ndarray:
        """``sqrt(K t / (alpha (1 - alpha)))``, the tuned-rate bound with horizon ``t``."""
        t = np.arange(1, self.horizon + 1) if t is None else np.asarray(t, dtype=float)
        return np.sqrt(self.n_arms * t / (self.alpha * (1.0 - self.alpha)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        b1, b2 = self.bound_anytime(), self.bound_tuned()
        for i in range(self.horizon):
            w.writerow((i + 1, repr(float(self.mean[i])), repr(float(self.min[i])), repr(float(self.max[i])),
                        repr(float(self.stderr[i])), repr(float(b1[i])), repr(float(b2[i]))))
        return buf.getvalue()


def aggregate(traces: Sequence[RunTrace], alpha: float = 0.5, failures=()) -> AggregateStats:
    if not traces:
        raise ConfigError("no completed episodes to aggregate")
    curves = np.stack([tr.cum_regret for tr in traces])
    n = curves.shape[0]
    stderr = curves.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(curves.shape[1])
    return AggregateStats(n, curves.mean(axis=0), curves.min(axis=0), curves.max(axis=0), stderr,
                          traces[0].u_hat.size, alpha, list(failures))


# -- episodes ---------------------------------------------------------------


class _Episode:
    def __init__(self, seed: int, env: Environment, horizon: int):
        self.seed = seed
        self.env = env
        self.rng = make_rng(seed, 0)
        self.n_arms = env.n_arms
        self.history = History(self.n_arms, horizon)
        self.ledger = RegretLedger(self.n_arms, env.regret_kind)
        self.u_hat = np.zeros(self.n_arms)
        self.arms = np.empty(horizon, dtype=np.int64)
        self.rewards = np.empty(horizon)
        self.probs = np.empty(horizon)
        self.regret = np.empty(horizon)
        self.uniforms = self.rng.random(horizon)
        self.failure: EpisodeFailure | None = None

    def step(self, policy: Policy, t: int, p: np.ndarray, model=None) -> None:
        r, mean = env_rewards(self.env, t, self.history)
        if model is not None:
            # FTPL: perturb and take the leader; p is the model's argmax law
            arm = int(np.argmax(self.u_hat + sample_noise(model, self.rng).z))
        else:
            arm = sample_arm(p, self.uniforms[t - 1])
        est = estimate_reward(arm, float(r[arm]), float(p[arm]))
        self.u_hat[arm] += est.value
        self.history.append(arm, r)
        i = t - 1
        self.arms[i] = arm
        self.rewards[i] = r[arm]
        self.probs[i] = p[arm]
        self.regret[i] = self.ledger.record(arm, p, mean)

    def trace(self, meta: dict) -> RunTrace:
        return RunTrace(self.seed, self.arms, self.rewards, self.probs, self.regret, self.ledger,
                        self.u_hat.copy(), dict(meta, seed=self.seed))


def run_batch_traces(policy: Policy, env_factory, horizon: int, seeds: Sequence[int]):
    """Run one episode per seed in lockstep.

    ``env_factory(rng)`` builds a fresh environment from the episode's
    environment stream.  Returns ``(traces, failures)``; a failing episode is
    dropped from the batch and reported with its seed and round.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    episodes = [_Episode(s, env_factory(make_rng(s, 1)), horizon) for s in seeds]
    n_arms = {ep.n_arms for ep in episodes}
    if len(n_arms) != 1:
        raise ConfigError("all episodes in a batch must have the same number of arms")
    meta = {"rng": RNG_ALGORITHM, "policy": policy.describe(), "env": episodes[0].env.spec(), "horizon": horizon}
    use_noise = policy.kind == "ftpl_optimistic" and episodes[0].n_arms > 1
    live = list(episodes)
    for t in range(1, horizon + 1):
        if not live:
            break
        models = [None] * len(live)
        try:
            u_rows = np.stack([ep.u_hat for ep in live])
            if use_noise:
                models = _noise_models(policy, u_rows, t)
                probs = [m.p for m in models]
            else:
                probs = next_distributions(policy, u_rows, t)
        except DopaError:
            # isolate the failing rows
            probs = []
            for i, ep in enumerate(live):
                try:
                    if use_noise:
                        models[i] = _noise_models(policy, ep.u_hat[None, :], t)[0]
                        probs.append(models[i].p)
                    else:
                        probs.append(next_distributions(policy, ep.u_hat[None, :], t)[0])
                except DopaError as exc:
                    ep.failure = EpisodeFailure(ep.seed, t, repr(exc))
                    probs.append(None)
        survivors = []
        for ep, p, model in zip(live, probs, models):
            if ep.failure is None:
                try:
                    ep.step(policy, t, p, model)
                except DopaError as exc:
                    ep.failure = EpisodeFailure(ep.seed, t, repr(exc))
            if ep.failure is None:
                survivors.append(ep)
        live = survivors
    traces = [ep.trace(meta) for ep in episodes if ep.failure is None]
    failures = [ep.failure for ep in episodes if ep.failure is not None]
    return traces, failures


def run_episode(policy: Policy, env_factory, horizon: int, seed: int) -> RunTrace:
    """A single episode; raises the round's error on failure."""
    traces, failures = run_batch_traces(policy, env_factory, horizon, [seed])
    if failures:
        f = failures[0]
        raise InvariantViolation(f"episode seed={f.seed} failed at round {f.round}: {f.error}")
    return traces[0]


def run_batch(policy: Policy, env_factory, horizon: int, seeds: Sequence[int]) -> tuple[AggregateStats, list[RunTrace]]:
    traces, failures = run_batch_traces(policy, env_factory, horizon, seeds)
    alpha = policy.generator.alpha if isinstance(policy.generator, ParetoGenerator) else 0.5
    return aggregate(traces, alpha, failures), traces
