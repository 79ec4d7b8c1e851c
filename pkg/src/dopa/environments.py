"""Reward environments, regret accounting and the self-bounding floor.

Rewards live in ``[-1, 0]^K``.  Every environment exposes, per round, the
reward vector the learner faces and the mean vector used for pseudo-regret:
for stochastic environments that is the declared mean, for deterministic
scripts it is the reward itself.  Environments see the full history (chosen
arms and past reward vectors); oblivious ones ignore it.
"""

from __future__ import annotations

import csv
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, InputError, RewardRangeError

__all__ = [
    "History",
    "Environment",
    "StochasticEnv",
    "ScriptedAdversary",
    "FTLKillerEnv",
    "ConstrainedAdversaryEnv",
    "RegretLedger",
    "BUILTIN_SCRIPTS",
    "env_rewards",
    "pseudo_regret",
    "self_bounding_floor",
    "parse_environment",
]

_CHUNK = 4096


class History:
    """Arms chosen and reward vectors seen so far; rounds are 1-based, arrays 0-based."""

    def __init__(self, n_arms: int, capacity: int = 0):
        self.n_arms = n_arms
        self._arms = np.empty(max(capacity, 16), dtype=np.int64)
        self._rewards = np.empty((max(capacity, 16), n_arms))
        self.length = 0

    def append(self, arm: int, rewards: np.ndarray) -> None:
        if self.length == self._arms.size:
            self._arms = np.concatenate([self._arms, np.empty_like(self._arms)])
            self._rewards = np.concatenate([self._rewards, np.empty_like(self._rewards)])
        self._arms[self.length] = arm
        self._rewards[self.length] = rewards
        self.length += 1

    @property
    def arms(self) -> np.ndarray:
        return self._arms[: self.length]

    @property
    def rewards(self) -> np.ndarray:
        return self._rewards[: self.length]

    def __len__(self) -> int:
        return self.length


class Environment(ABC):
    n_arms: int
    #: "realized" charges the mean of the pulled arm, "expected" charges <mean, p>
    regret_kind = "realized"
    deterministic = True

    @abstractmethod
    def step(self, t: int, history: History) -> tuple[np.ndarray, np.ndarray]:
        """``(reward vector, mean vector)`` for round ``t``."""

    def spec(self) -> str:
        return type(self).__name__


def _two_point(means: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    # reward 0 with probability 1 + m, else -1
    return np.where(uniforms < 1.0 + means, 0.0, -1.0)


def _check_means(means) -> np.ndarray:
    means = np.asarray(means, dtype=float).reshape(-1)
    if means.size < 1 or np.any(~np.isfinite(means)) or np.any(means < -1.0) or np.any(means > 0.0):
        raise ConfigError(f"means must lie in [-1, 0], got {means}")
    return means


class StochasticEnv(Environment):
    """Independent two-point rewards on ``{-1, 0}`` with the given means."""

    deterministic = False

    def __init__(self, means, rng: np.random.Generator):
        self.means = _check_means(means)
        self.means.setflags(write=False)
        self.n_arms = self.means.size
        self.gaps = self.means.max() - self.means
        self._rng = rng
        self._block = np.empty((0, self.n_arms))
        self._pos = 0

    def _uniforms(self) -> np.ndarray:
        if self._pos == len(self._block):
            self._block = self._rng.random((_CHUNK, self.n_arms))
            self._pos = 0
        row = self._block[self._pos]
        self._pos += 1
        return row

    def step(self, t, history):
        return _two_point(self.means, self._uniforms()), self.means

    def spec(self) -> str:
        return f"stochastic(means=[{', '.join(repr(float(m)) for m in self.means)}])"


class ScriptedAdversary(Environment):
    """Rewards from ``script(t, history)`` or from a ``T x K`` table (row ``t-1`` at round ``t``)."""

    def __init__(self, script: Callable[[int, History], np.ndarray] | np.ndarray, n_arms: int | None = None, name: str = "script"):
        if callable(script):
            if n_arms is None:
                raise ConfigError("a callable script needs n_arms")
            self._fn = script
            self._table = None
            self.n_arms = int(n_arms)
        else:
            table = np.asarray(script, dtype=float)
            if table.ndim != 2 or table.shape[0] < 1:
                raise ConfigError(f"script table must be T x K, got shape {table.shape}")
            self._table = table
            self._fn = None
            self.n_arms = table.shape[1]
        self.name = name

    @classmethod
    def from_csv(cls, path) -> "ScriptedAdversary":
        path = Path(path)
        try:
            with path.open(newline="") as fh:
                rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        except OSError as exc:
            raise ConfigError(f"cannot read script {path}: {exc}") from exc
        try:
            table = np.array([[float(x) for x in r] for r in rows])
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
        return cls(table, name=f"file={path}")

    @property
    def horizon(self) -> int | None:
        return None if self._table is None else self._table.shape[0]

    def step(self, t, history):
        if self._table is not None:
            if t > self._table.shape[0]:
                raise InputError(f"script has {self._table.shape[0]} rounds, asked for round {t}")
            r = self._table[t - 1]
        else:
            r = np.asarray(self._fn(t, history), dtype=float)
        return r, r

    def spec(self) -> str:
        return f"script({self.name})"


class FTLKillerEnv(Environment):
    """``r_1 = (-1/2, 0)``, then ``(-1, 0)`` on odd and ``(0, -1)`` on even rounds.

    With ``n_arms > 2`` the extra arms always pay 0.
    """

    def __init__(self, n_arms: int = 2):
        if n_arms < 2:
            raise ConfigError("ftl_killer needs at least 2 arms")
        self.n_arms = n_arms

    def step(self, t, history):
        r = np.zeros(self.n_arms)
        if t == 1:
            r[0] = -0.5
        elif t % 2 == 1:
            r[0] = -1.0
        else:
            r[1] = -1.0
        return r, r

    def spec(self) -> str:
        return "ftl_killer" if self.n_arms == 2 else f"ftl_killer(K={self.n_arms})"


class ConstrainedAdversaryEnv(Environment):
    """Stochastic arms with means ``-gaps``, corrupted during the first ``floor(C/2)`` rounds.

    A corrupted round swaps the means of the best and the worst arm.  Regret
    is charged against ``<mean_t, p_t>``, so each corrupted round lowers the
    regret below ``sum_k gap_k p_{t,k}`` by at most 2 and the self-bounding
    floor with budget ``C`` holds on every run.
    """

    regret_kind = "expected"
    deterministic = False

    def __init__(self, gaps, budget: float, rng: np.random.Generator):
        gaps = np.asarray(gaps, dtype=float).reshape(-1)
        if gaps.size < 1 or np.any(~np.isfinite(gaps)) or np.any(gaps < 0.0) or np.any(gaps > 1.0):
            raise ConfigError(f"gaps must lie in [0, 1], got {gaps}")
        if not (budget >= 0.0 and math.isfinite(budget)):
            raise ConfigError(f"corruption budget must be a finite C >= 0, got {budget}")
        if gaps.min() != 0.0:
            raise ConfigError("at least one arm must have gap 0")
        self.gaps = gaps
        self.budget = float(budget)
        self.n_arms = gaps.size
        self.corrupted_rounds = int(budget // 2)
        self._base = StochasticEnv(-gaps, rng)
        swapped = -gaps.copy()
        best, worst = int(np.argmin(gaps)), int(np.argmax(gaps))
        swapped[[best, worst]] = swapped[[worst, best]]
        self._corrupt = swapped

    def step(self, t, history):
        means = self._corrupt if t <= self.corrupted_rounds else self._base.means
        return _two_point(means, self._base._uniforms()), means

    def spec(self) -> str:
        return f"constrained(gaps=[{', '.join(repr(float(g)) for g in self.gaps)}], C={self.budget!r})"


def env_rewards(env: Environment, t: int, history: History) -> tuple[np.ndarray, np.ndarray]:
    """Query round ``t`` and check that the rewards lie in ``[-1, 0]^K``."""
    if t < 1:
        raise InputError(f"rounds start at 1, got {t}")
    r, mean = env.step(t, history)
    r = np.asarray(r, dtype=float)
    if r.shape != (env.n_arms,) or not np.all((r >= -1.0) & (r <= 0.0)):
        raise RewardRangeError(f"{env.spec()} round {t}: reward {r} outside [-1, 0]^{env.n_arms}")
    return r, mean


@dataclass
class RegretLedger:
    n_arms: int
    kind: str = "realized"
    cum_means: np.ndarray = field(init=False)
    learner_total: float = 0.0
    pulls: np.ndarray = field(init=False)
    prob_sums: np.ndarray = field(init=False)
    rounds: int = 0

    def __post_init__(self):
        self.cum_means = np.zeros(self.n_arms)
        self.pulls = np.zeros(self.n_arms, dtype=np.int64)
        self.prob_sums = np.zeros(self.n_arms)

    def record(self, arm: int, p: np.ndarray, mean: np.ndarray) -> float:
        """Add one round and return the cumulative pseudo-regret."""
        self.cum_means += mean
        if self.kind == "expected":
            self.learner_total += float(mean @ p)
        else:
            self.learner_total += float(mean[arm])
        self.pulls[arm] += 1
        self.prob_sums += p
        self.rounds += 1
        return self.regret()

    def regret(self) -> float:
        if self.rounds == 0:
            return 0.0
        return float(self.cum_means.max() - self.learner_total)


def pseudo_regret(ledger: RegretLedger, env: Environment | None = None) -> float:
    """Best fixed arm's cumulative mean reward minus the learner's.

    For a stochastic environment this equals ``sum_t gap_{a_t}``.
    """
    return ledger.regret()


def self_bounding_floor(ledger: RegretLedger, gaps, budget: float) -> float:
    """``sum_t sum_k gap_k p_{t,k} - C`` from the recorded sampling probabilities."""
    gaps = np.asarray(gaps, dtype=float)
    return math.fsum(gaps * ledger.prob_sums) - float(budget)


# -- built-in scripted adversaries ------------------------------------------


def block_switch(n_arms: int, block: int = 700) -> Callable[[int, History], np.ndarray]:
    """The good arm changes every ``block`` rounds, cycling with stride 3."""

    def script(t, history):
        r = np.full(n_arms, -1.0)
        r[(3 * ((t - 1) // block)) % n_arms] = 0.0
        return r

    return script


def sine_drift(n_arms: int, period: float = 2000.0) -> Callable[[int, History], np.ndarray]:
    phases = 2.0 * np.pi * np.arange(n_arms) / n_arms

    def script(t, history):
        return -0.5 - 0.5 * np.sin(2.0 * np.pi * t / period + phases)

    return script


def penalize_previous(n_arms: int) -> Callable[[int, History], np.ndarray]:
    """History-dependent: the arm pulled last round pays -1, the others -0.5 (arm 0 pays -0.3)."""

    def script(t, history):
        r = np.full(n_arms, -0.5)
        r[0] = -0.3
        if len(history):
            r[history.arms[-1]] = -1.0
        return r

    return script


BUILTIN_SCRIPTS = {
    "block_switch": block_switch,
    "sine_drift": sine_drift,
    "penalize_previous": penalize_previous,
}


# -- spec grammar -------------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$", re.S)


def _split_args(body: str) -> dict[str, str]:
    out, depth, cur = [], 0, ""
    for ch in body:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch == "["
        depth -= ch == "]"
        cur += ch
    if cur.strip():
        out.append(cur)
    args = {}
    for item in out:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item.strip()!r}")
        key, value = item.split("=", 1)
        args[key.strip()] = value.strip()
    return args


def _vector(text: str, what: str) -> list[float]:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ConfigError(f"{what} must be a [..] list, got {text!r}")
    try:
        return [float(x) for x in text[1:-1].split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number in {what}: {exc}") from exc


def parse_environment(text: str, rng: np.random.Generator, n_arms: int | None = None) -> Environment:
    """Build an environment from a spec string.

    Forms: ``stochastic(means=[...])``, ``ftl_killer``, ``script(file=path)``,
    ``script(name=block_switch)``, ``constrained(gaps=[...], C=...)``.
    ``n_arms`` pads ``ftl_killer`` and sizes the named scripts.
    """
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"cannot parse environment spec {text!r}")
    name, body = m.group(1), m.group(2) or ""
    args = _split_args(body)
    if name == "stochastic":
        if set(args) != {"means"}:
            raise ConfigError("stochastic(...) takes exactly means=[...]")
        return StochasticEnv(_vector(args["means"], "means"), rng)
    if name == "ftl_killer":
        k = int(args.pop("K", n_arms or 2))
        if args:
            raise ConfigError(f"ftl_killer: unknown arguments {sorted(args)}")
        return FTLKillerEnv(k)
    if name == "script":
        if set(args) == {"file"}:
            return ScriptedAdversary.from_csv(args["file"].strip("'\""))
        if set(args) == {"name"}:
            key = args["name"].strip("'\"")
            if key not in BUILTIN_SCRIPTS:
                raise ConfigError(f"unknown script {key!r}; known: {sorted(BUILTIN_SCRIPTS)}")
            if n_arms is None:
                raise ConfigError("named scripts need K")
            return ScriptedAdversary(BUILTIN_SCRIPTS[key](n_arms), n_arms, name=f"name={key}")
        raise ConfigError("script(...) takes file=... or name=...")
    if name == "constrained":
        if set(args) != {"gaps", "C"}:
            raise ConfigError("constrained(...) takes gaps=[...] and C=...")
        try:
            budget = float(args["C"])
        except ValueError as exc:
            raise ConfigError(f"bad C: {args['C']!r}") from exc
        return ConstrainedAdversaryEnv(_vector(args["gaps"], "gaps"), budget, rng)
    raise ConfigError(f"unknown environment {name!r}")
