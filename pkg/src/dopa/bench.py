"""Wall-clock comparison of bisection against the generic simplex solver.

Each cell draws a fresh ``u`` uniformly from ``[0, 1]^K`` per repetition,
builds the request outside the timed region, and times one call of each
method back to back (interleaved) with ``perf_counter_ns``.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .generators import MarginalFamily, MarginalGenerator, ParetoGenerator
from .sampler import ArmSamplingRequest, bisection_sample, generic_convex_baseline, iteration_bound, iteration_limit

__all__ = ["DEFAULT_KS", "BenchRecord", "BenchReport", "run_bench", "loglog_slope"]

DEFAULT_KS = (4, 16, 64, 256, 1024)
METHODS = ("bisection", "generic_baseline")
BENCH_HEADER = ("method", "K", "reps", "mean_ns", "median_ns", "min_ns", "max_ns", "mean_iterations",
                "max_iterations", "iteration_bound", "speedup_median")


@dataclass
class BenchRecord:
    method: str
    k: int
    times_ns: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    bound_violations: int = 0
    #: largest admissible iteration count seen in the cell, bisection only
    max_bound: float = 0.0

    @property
    def mean_ns(self) -> float:
        return float(np.mean(self.times_ns))

    @property
    def median_ns(self) -> float:
        return float(np.median(self.times_ns))

    @property
    def min_ns(self) -> int:
        return int(min(self.times_ns))

    @property
    def max_ns(self) -> int:
        return int(max(self.times_ns))

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations))


def loglog_slope(ks, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(K)``."""
    return float(np.polyfit(np.log(np.asarray(ks, float)), np.log(np.asarray(times, float)), 1)[0])


@dataclass
class BenchReport:
    cells: dict
    ks: tuple
    epsilon: float

    def record(self, method: str, k: int) -> BenchRecord:
        return self.cells[(method, k)]

    def speedup(self, k: int) -> float:
        """Median baseline time over median bisection time."""
        return self.record("generic_baseline", k).median_ns / self.record("bisection", k).median_ns

    def slope(self, method: str = "bisection") -> float:
        return loglog_slope(self.ks, [self.record(method, k).mean_ns for k in self.ks])

    @property
    def bound_violations(self) -> int:
        return sum(self.record("bisection", k).bound_violations for k in self.ks)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for k in self.ks:
            for m in METHODS:
                r = self.record(m, k)
                bound = r.max_bound if m == "bisection" else ""
                w.writerow((m, k, len(r.times_ns), f"{r.mean_ns:.1f}", f"{r.median_ns:.1f}", r.min_ns, r.max_ns,
                            f"{r.mean_iterations:.2f}", max(r.iterations), bound,
                            f"{self.speedup(k):.2f}" if m == "bisection" else ""))
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'K':>6} {'bisection ns':>14} {'baseline ns':>14} {'speedup':>9} {'iters':>6} {'bound':>6}"]
        for k in self.ks:
            b, g = self.record("bisection", k), self.record("generic_baseline", k)
            lines.append(f"{k:>6} {b.median_ns:>14.0f} {g.median_ns:>14.0f} {self.speedup(k):>8.1f}x "
                         f"{max(b.iterations):>6} {b.max_bound:>6.0f}")
        lines.append(f"bisection log-log slope: {self.slope():.3f}")
        return "\n".join(lines)


def run_bench(
    ks=DEFAULT_KS,
    repetitions: int = 10,
    epsilon: float = 1e-8,
    seed: int = 0,
    generator: MarginalGenerator | None = None,
    eta: float = 1.0,
    warmup: int = 2,
) -> BenchReport:
    """Time both methods on every K; cells run one after another on this thread."""
    if repetitions < 10:
        raise ValueError(f"need at least 10 repetitions per cell, got {repetitions}")
    generator = generator or ParetoGenerator(0.5)
    rng = np.random.Generator(np.random.Philox(seed))
    ks = tuple(int(k) for k in ks)
    cells = {(m, k): BenchRecord(m, k) for k in ks for m in METHODS}
    clock = time.perf_counter_ns
    for k in ks:
        fam = MarginalFamily.uniform(generator, k, eta)
        for _ in range(warmup):
            req = ArmSamplingRequest(rng.random(k), fam, epsilon)
            bisection_sample(req)
            generic_convex_baseline(req)
        for rep in range(repetitions):
            req = ArmSamplingRequest(rng.random(k), fam, epsilon)
            # alternate which method goes first
            order = METHODS if rep % 2 == 0 else METHODS[::-1]
            for m in order:
                fn = bisection_sample if m == "bisection" else generic_convex_baseline
                start = clock()
                res = fn(req)
                elapsed = clock() - start
                rec = cells[(m, k)]
                rec.times_ns.append(elapsed)
                rec.iterations.append(res.iterations)
                if m == "bisection":
                    bound = iteration_bound(fam, req.u, epsilon)
                    if bound is not None:
                        ceiling = iteration_limit(bound)
                        rec.max_bound = max(rec.max_bound, ceiling)
                        if res.iterations > ceiling:
                            rec.bound_violations += 1
    return BenchReport(cells, ks, epsilon)
