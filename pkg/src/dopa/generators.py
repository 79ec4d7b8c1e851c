"""Marginal generators and the per-arm marginal CDF family built from them.

A marginal generator is a strictly increasing differentiable scalar map ``F``
whose range covers ``(0, 1)``.  Every other object in the package is
parameterized through four scalar evaluations of ``F``:

* ``cdf``       -- ``F(s)``
* ``quantile``  -- ``F^{-1}(t)`` for ``t`` in ``(0, 1)``
* ``pdf``       -- ``F'(s)``
* ``integrated_quantile`` -- ``f(p) = int_0^p F^{-1}(t) dt``

All methods are vectorized over numpy arrays.  Values of ``F`` beyond the
upper edge of a generator's domain are reported as ``+inf``; the marginal
family clips them to a CDF value of 0, so no caller ever sees them.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, RangeError

__all__ = [
    "MarginalGenerator",
    "ParetoGenerator",
    "ExponentialGenerator",
    "ComplementExponentialGenerator",
    "InverseSquareGenerator",
    "HybridGenerator",
    "MarginalFamily",
    "eval_cdf",
    "eval_quantile",
    "eval_pdf",
    "eval_f",
    "harmonic_combine",
    "marginal_cdf",
    "marginal_quantile",
    "parse_generator",
    "corollary3_pair",
]


def _as_float_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


class MarginalGenerator(ABC):
    """Scalar generator ``F`` with vectorized evaluations.

    Subclasses are immutable dataclasses.  ``domain_upper`` is the supremum of
    the effective domain (``inf`` when ``F`` is finite everywhere).
    """

    name: str = "generator"
    #: sup of F' over {s : F(s) in [0, 1]}; ``None`` when no closed form exists.
    lipschitz_bound: float | None = None
    #: whether int_0^1 F^{-1}(t) dt = 0 holds by construction
    zero_mean: bool = True

    @property
    def domain_upper(self) -> float:
        return math.inf

    @abstractmethod
    def cdf(self, s): ...

    @abstractmethod
    def quantile(self, t): ...

    @abstractmethod
    def pdf(self, s): ...

    @abstractmethod
    def quantile_derivative(self, t):
        """``(F^{-1})'(t)`` on ``(0, 1)``."""

    @abstractmethod
    def _f_interior(self, p): ...

    def integrated_quantile(self, p):
        """``f(p) = int_0^p F^{-1}``; exact at the endpoints."""
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        lo = p <= 0.0
        hi = p >= 1.0
        mid = ~(lo | hi)
        out[lo] = 0.0
        out[hi] = 0.0 if self.zero_mean else self.f_at_one
        if np.any(mid):
            out[mid] = self._f_interior(p[mid])
        return out

    @property
    def f_at_one(self) -> float:
        """``f(1)``; zero for every generator satisfying the zero-mean condition."""
        return 0.0

    def clipped_cdf(self, s):
        """``min(1, max(0, F(s)))``; the hot path of the samplers."""
        with np.errstate(over="ignore", invalid="ignore"):
            return np.clip(self.cdf(s), 0.0, 1.0)

    @property
    def quantile_range(self) -> tuple[float, float]:
        """Limits of ``F^{-1}(t)`` as ``t -> 0+`` and ``t -> 1-``."""
        return (-math.inf, math.inf)

    def spec(self) -> str:
        """Round-trippable generator expression."""
        return self.name


@dataclass(frozen=True)
class ParetoGenerator(MarginalGenerator):
    """Shifted Pareto generator ``F(s) = (1/a - s(1-a)/a)^(-1/(1-a))``.

    Its integrated quantile is the Tsallis term ``(p - p^a)/(1 - a)``; with
    ``alpha=0.5`` this is ``F(s) = (2 - s)^-2``.
    """

    alpha: float = 0.5
    name: str = field(default="pareto", init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"pareto alpha must lie in (0, 1), got {self.alpha}")

    @property
    def lipschitz_bound(self) -> float:
        # F'(F^{-1}(p)) = p^(2-a)/a is maximal at p = 1
        return 1.0 / self.alpha

    @property
    def domain_upper(self) -> float:
        return 1.0 / (1.0 - self.alpha)

    @property
    def quantile_range(self) -> tuple[float, float]:
        return (-math.inf, 1.0)

    def _base(self, s):
        a = self.alpha
        return 1.0 / a - np.asarray(s, dtype=float) * ((1.0 - a) / a)

    def cdf(self, s):
        a = self.alpha
        base = self._base(s)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if a == 0.5:
                out = 1.0 / (base * base)
            else:
                out = base ** (-1.0 / (1.0 - a))
        return np.where(base > 0.0, out, np.inf)

    def clipped_cdf(self, s):
        a = self.alpha
        # F(s) <= 1 exactly when base >= 1, so flooring base at 1 clips F
        base = np.maximum(self._base(s), 1.0)
        if a == 0.5:
            return 1.0 / (base * base)
        return base ** (-1.0 / (1.0 - a))

    def quantile(self, t):
        a = self.alpha
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            if a == 0.5:
                return 2.0 - 1.0 / np.sqrt(t)
            return (1.0 - a * t ** (a - 1.0)) / (1.0 - a)

    def pdf(self, s):
        a = self.alpha
        base = self._base(s)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = base ** (-(2.0 - a) / (1.0 - a)) / a
        return np.where(base > 0.0, out, np.inf)

    def quantile_derivative(self, t):
        a = self.alpha
        return a * np.asarray(t, dtype=float) ** (a - 2.0)

    def _f_interior(self, p):
        a = self.alpha
        return (p - p**a) / (1.0 - a)

    def spec(self) -> str:
        return f"pareto(alpha={self.alpha!r})"


@dataclass(frozen=True)
class ExponentialGenerator(MarginalGenerator):
    """``F(s) = exp(s - 1)``; the induced regularizer is negative Shannon entropy."""

    name: str = field(default="exp3", init=False, repr=False)
    lipschitz_bound: float = field(default=1.0, init=False, repr=False)

    @property
    def quantile_range(self) -> tuple[float, float]:
        return (-math.inf, 1.0)

    def cdf(self, s):
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(s, dtype=float) - 1.0)

    def quantile(self, t):
        with np.errstate(divide="ignore"):
            return 1.0 + np.log(np.asarray(t, dtype=float))

    def pdf(self, s):
        return self.cdf(s)

    def clipped_cdf(self, s):
        return np.exp(np.minimum(np.asarray(s, dtype=float) - 1.0, 0.0))

    def quantile_derivative(self, t):
        return 1.0 / np.asarray(t, dtype=float)

    def _f_interior(self, p):
        return p * np.log(p)


@dataclass(frozen=True)
class ComplementExponentialGenerator(MarginalGenerator):
    """``G(s) = 1 - exp(-(s + 1))``; ``f(p) = (1 - p) log(1 - p)``."""

    name: str = field(default="cshannon", init=False, repr=False)
    lipschitz_bound: float = field(default=1.0, init=False, repr=False)

    @property
    def quantile_range(self) -> tuple[float, float]:
        return (-1.0, math.inf)

    def cdf(self, s):
        with np.errstate(over="ignore"):
            return -np.expm1(-(np.asarray(s, dtype=float) + 1.0))

    def quantile(self, t):
        with np.errstate(divide="ignore"):
            return -1.0 - np.log1p(-np.asarray(t, dtype=float))

    def pdf(self, s):
        with np.errstate(over="ignore"):
            return np.exp(-(np.asarray(s, dtype=float) + 1.0))

    def quantile_derivative(self, t):
        return 1.0 / (1.0 - np.asarray(t, dtype=float))

    def _f_interior(self, p):
        return (1.0 - p) * np.log1p(-p)


@dataclass(frozen=True)
class InverseSquareGenerator(MarginalGenerator):
    """``G(s) = (-2s)^-2`` on ``s < 0``; ``f(p) = -sqrt(p)``.

    Violates the zero-mean condition (``f(1) = -1``); it is only meaningful as
    a hybrid component.
    """

    name: str = field(default="invsq", init=False, repr=False)
    lipschitz_bound: float = field(default=4.0, init=False, repr=False)
    zero_mean: bool = field(default=False, init=False, repr=False)

    @property
    def domain_upper(self) -> float:
        return 0.0

    @property
    def quantile_range(self) -> tuple[float, float]:
        return (-math.inf, -0.5)

    @property
    def f_at_one(self) -> float:
        return -1.0

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = 1.0 / (4.0 * s * s)
        return np.where(s < 0.0, out, np.inf)

    def quantile(self, t):
        with np.errstate(divide="ignore"):
            return -0.5 / np.sqrt(np.asarray(t, dtype=float))

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = -0.5 / (s * s * s)
        return np.where(s < 0.0, out, np.inf)

    def quantile_derivative(self, t):
        return 0.25 * np.asarray(t, dtype=float) ** -1.5

    def _f_interior(self, p):
        return -np.sqrt(p)


@dataclass(frozen=True)
class HybridGenerator(MarginalGenerator):
    """Harmonic combination: ``F^{-1}(t) = sum_i w_i G_i^{-1}(t)``.

    ``F`` itself has no closed form and is evaluated by bisection on ``t``.
    """

    components: tuple[tuple[float, MarginalGenerator], ...] = ()
    name: str = field(default="hybrid", init=False, repr=False)

    @property
    def zero_mean(self) -> bool:  # type: ignore[override]
        return all(g.zero_mean for _, g in self.components)

    @property
    def f_at_one(self) -> float:
        return float(sum(w * g.f_at_one for w, g in self.components))

    @property
    def domain_upper(self) -> float:
        return math.inf

    @property
    def quantile_range(self) -> tuple[float, float]:
        lo = sum(w * g.quantile_range[0] for w, g in self.components)
        hi = sum(w * g.quantile_range[1] for w, g in self.components)
        return (lo, hi)

    def quantile(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for w, g in self.components:
            out = out + w * g.quantile(t)
        return out

    def quantile_derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for w, g in self.components:
            out = out + w * g.quantile_derivative(t)
        return out

    def _f_interior(self, p):
        out = np.zeros_like(p)
        for w, g in self.components:
            out = out + w * g.integrated_quantile(p)
        return out

    def integrated_quantile(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros_like(p)
        for w, g in self.components:
            out = out + w * g.integrated_quantile(p)
        return out

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        flat = s.reshape(-1)
        lo = np.zeros_like(flat)
        hi = np.ones_like(flat)
        q_lo, q_hi = self.quantile_range
        below = flat <= q_lo
        above = flat >= q_hi
        # bisection on t; stop once the bracket is a few ulp wide
        for _ in range(1100):
            mid = 0.5 * (lo + hi)
            live = (hi - lo) > 2.0 * np.spacing(hi)
            if not np.any(live):
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                go_up = self.quantile(mid) < flat
            lo = np.where(live & go_up, mid, lo)
            hi = np.where(live & ~go_up, mid, hi)
        out = 0.5 * (lo + hi)
        out[below] = 0.0
        out[above] = 1.0
        return out.reshape(s.shape)

    def pdf(self, s):
        t = self.cdf(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 1.0 / self.quantile_derivative(t)
        return np.where((t > 0.0) & (t < 1.0), out, 0.0)

    def spec(self) -> str:
        inner = " + ".join(f"{w!r}*{g.spec()}" for w, g in self.components)
        return f"hybrid({inner})"


def corollary3_pair() -> HybridGenerator:
    """Unit-weight hybrid of ``1 - exp(-(s+1))`` and ``(-2s)^-2``."""
    return harmonic_combine([(1.0, ComplementExponentialGenerator()), (1.0, InverseSquareGenerator())])


# --------------------------------------------------------------------------
# scalar operations


def _check_domain(g: MarginalGenerator, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)) or np.any(s >= g.domain_upper):
        bad = s[np.isnan(s) | (s >= g.domain_upper)].reshape(-1)[0]
        raise DomainError(g.spec(), float(bad), f"requires s < {g.domain_upper}")
    return s


def eval_cdf(g: MarginalGenerator, s):
    """``F(s)``; raises :class:`DomainError` beyond the generator's domain."""
    return _as_float_or_array(g.cdf(_check_domain(g, s)))


def eval_pdf(g: MarginalGenerator, s):
    """``F'(s)``; raises :class:`DomainError` beyond the generator's domain."""
    return _as_float_or_array(g.pdf(_check_domain(g, s)))


def eval_quantile(g: MarginalGenerator, t):
    """``F^{-1}(t)`` for ``t`` strictly inside ``(0, 1)``."""
    t = np.asarray(t, dtype=float)
    if not np.all((t > 0.0) & (t < 1.0)):
        raise RangeError(f"quantile level must lie in (0, 1), got {t}")
    return _as_float_or_array(g.quantile(t))


def eval_f(g: MarginalGenerator, p):
    """Integrated quantile ``f(p)`` for ``p`` in ``[0, 1]``."""
    p = np.asarray(p, dtype=float)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise RangeError(f"f is defined on [0, 1], got {p}")
    return _as_float_or_array(g.integrated_quantile(p))


def harmonic_combine(parts: Sequence[tuple[float, MarginalGenerator]]) -> HybridGenerator:
    """Combine generators so that the quantile is the weighted sum of component quantiles."""
    parts = tuple((float(w), g) for w, g in parts)
    if not parts:
        raise ConfigError("harmonic_combine needs at least one component")
    for w, _ in parts:
        if not (w > 0.0 and math.isfinite(w)):
            raise ConfigError(f"hybrid weights must be positive and finite, got {w}")
    return HybridGenerator(components=parts)


# --------------------------------------------------------------------------
# per-arm family


@dataclass(frozen=True, eq=False)
class MarginalFamily:
    """Per-arm CDFs ``F_k(s) = clip(1 - F(-s/eta_k), 0, 1)``."""

    generator: MarginalGenerator
    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if eta.size == 0:
            raise ConfigError("a marginal family needs at least one arm")
        if not np.all(np.isfinite(eta) & (eta > 0.0)):
            raise ConfigError(f"all eta_k must be positive and finite, got {eta}")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def uniform(cls, generator: MarginalGenerator, n_arms: int, eta: float = 1.0) -> "MarginalFamily":
        return cls(generator, np.full(n_arms, float(eta)))

    @property
    def n_arms(self) -> int:
        return self.eta.size

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.eta == self.eta[0]))

    def upper_tail(self, s, eta=None):
        """``1 - F_k(s) = clip(F(-s/eta_k), 0, 1)`` without cancellation."""
        eta = self.eta if eta is None else eta
        return self.generator.clipped_cdf(-np.asarray(s, dtype=float) / eta)

    def cdf(self, s, eta=None):
        eta = self.eta if eta is None else eta
        with np.errstate(over="ignore", invalid="ignore"):
            return np.clip(1.0 - self.generator.cdf(-np.asarray(s, dtype=float) / eta), 0.0, 1.0)

    def density(self, s, eta=None):
        """``F_k'(s)``; zero wherever ``F_k`` is clipped."""
        eta = self.eta if eta is None else eta
        x = -np.asarray(s, dtype=float) / eta
        with np.errstate(over="ignore", invalid="ignore"):
            val = self.generator.cdf(x)
            dens = self.generator.pdf(x) / eta
        return np.where((val > 0.0) & (val < 1.0), dens, 0.0)

    def quantile(self, x, eta=None):
        """``F_k^{-1}(x) = -eta_k F^{-1}(1 - x)``."""
        eta = self.eta if eta is None else eta
        return -eta * self.generator.quantile(1.0 - np.asarray(x, dtype=float))

    def quantile_of_tail(self, p, eta=None):
        """``F_k^{-1}(1 - p) = -eta_k F^{-1}(p)``, exact for small ``p``."""
        eta = self.eta if eta is None else eta
        return -eta * self.generator.quantile(np.asarray(p, dtype=float))


def _check_arm(fam: MarginalFamily, k: int) -> None:
    if not (isinstance(k, (int, np.integer)) and 0 <= k < fam.n_arms):
        raise IndexError(f"arm index {k!r} outside 0..{fam.n_arms - 1}")


def marginal_cdf(fam: MarginalFamily, k: int, s) -> float:
    """``F_k(s)`` for arm ``k`` (0-based)."""
    _check_arm(fam, k)
    return _as_float_or_array(fam.cdf(s, fam.eta[k]))


def marginal_quantile(fam: MarginalFamily, k: int, x) -> float:
    """``F_k^{-1}(x)`` for ``x`` in ``(0, 1)``."""
    _check_arm(fam, k)
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise RangeError(f"marginal quantile level must lie in (0, 1), got {x}")
    return _as_float_or_array(fam.quantile(x, fam.eta[k]))


# --------------------------------------------------------------------------
# spec grammar:  pareto(alpha=0.5) | exp3 | cshannon | invsq | hybrid(w*g + w*g ...)

_TOKEN = re.compile(r"\s*(?:(?P<num>[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[()=*+,]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str]] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ConfigError(f"cannot parse generator spec {self.text!r} at offset {pos}")
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind)))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value=None, kind=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value or kind
            raise ConfigError(f"generator spec {self.text!r}: expected {want!r}, got {tok[1]!r}")
        self.i += 1
        return tok[1]

    def number(self) -> float:
        tok = self.peek()
        if tok[0] == "name" and tok[1] == "sqrt":
            self.take()
            self.take("(")
            v = math.sqrt(self.number())
            self.take(")")
            return v
        return float(self.take(kind="num"))

    def generator(self) -> MarginalGenerator:
        name = self.take(kind="name").lower()
        if name == "pareto" or name == "tsallis":
            alpha = 0.5
            if self.peek()[1] == "(":
                self.take("(")
                if self.peek()[1] != ")":
                    if self.peek()[0] == "name":
                        self.take("alpha")
                        self.take("=")
                    alpha = self.number()
                self.take(")")
            return ParetoGenerator(alpha)
        if name in ("exp3", "exp", "exponential"):
            return ExponentialGenerator()
        if name == "cshannon":
            return ComplementExponentialGenerator()
        if name == "invsq":
            return InverseSquareGenerator()
        if name == "hybrid":
            self.take("(")
            parts = [self.term()]
            while self.peek()[1] == "+":
                self.take("+")
                parts.append(self.term())
            self.take(")")
            return harmonic_combine(parts)
        raise ConfigError(f"unknown generator {name!r} in {self.text!r}")

    def term(self) -> tuple[float, MarginalGenerator]:
        w = 1.0
        kind, val = self.peek()
        if kind == "num" or val == "sqrt":
            w = self.number()
            self.take("*")
        return (w, self.generator())


def parse_generator(text: str) -> MarginalGenerator:
    """Parse ``pareto(alpha=0.5)``, ``exp3``, ``hybrid(1*cshannon + 1*invsq)`` and the like."""
    p = _Parser(text)
    g = p.generator()
    if p.i != len(p.tokens):
        raise ConfigError(f"trailing input in generator spec {text!r}")
    return g
