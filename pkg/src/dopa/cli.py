"""Command line entry point: ``dopa {sample,run,bench,validate}``.

Settings come from an optional JSON ``--config`` document; flags given on the
command line override its fields.  Exit codes: 0 success, 1 a checked bound
or gate failed, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .bandit import RNG_ALGORITHM, TRACE_HEADER, make_policy, run_batch, tuned_eta
from .bench import DEFAULT_KS, run_bench
from .environments import parse_environment
from .errors import ConfigError, DopaError
from .generators import MarginalFamily, ParetoGenerator, parse_generator
from .noise import build_noise_model, validate_argmax_frequencies
from .sampler import ArmSamplingRequest, bisection_sample, dual_root_newton

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "generator": "pareto(alpha=0.5)",
    "eta": 1.0,
    "epsilon": 1e-8,
    "policy": "dopa_anytime",
    "horizon": 1000,
    "seeds": [1],
    "out": None,
    "n": 1_000_000,
    "reps": 10,
    "ks": list(DEFAULT_KS),
}


class UsageError(Exception):
    pass


def _parse_seeds(text) -> list[int]:
    """``5``, ``1,2,3`` or ``1-20``."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(s) for s in text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError("no seeds given")
    return out


def _parse_vector(text) -> list[float]:
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        val = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"u must be a JSON array: {exc}") from exc
    if not isinstance(val, list):
        raise UsageError("u must be a JSON array")
    return [float(x) for x in val]


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        cfg.update(loaded)
        if "seed" in loaded and "seeds" not in loaded:
            cfg["seeds"] = [loaded["seed"]]
    for key, value in vars(args).items():
        if key not in ("config", "command", "func") and value is not None:
            cfg[key] = value
    if args.seed is not None and args.seeds is None:
        cfg["seeds"] = [args.seed]
    cfg["seeds"] = _parse_seeds(cfg["seeds"])
    return cfg


def _write(out, name: str, text: str) -> Path | None:
    if out is None:
        return None
    path = Path(out) / name
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def cmd_sample(cfg) -> int:
    if "u" not in cfg:
        raise UsageError("sample needs --u")
    u = np.array(_parse_vector(cfg["u"]))
    gen = parse_generator(cfg["generator"])
    fam = MarginalFamily.uniform(gen, u.size, float(cfg["eta"]))
    req = ArmSamplingRequest(u, fam, float(cfg["epsilon"]))
    bis = bisection_sample(req)
    newton = dual_root_newton(req)
    dist = float(np.max(np.abs(bis.p_hat - newton.p_hat)))
    print(f"generator  {gen.spec()}  eta={float(cfg['eta']):g}  epsilon={req.epsilon:g}")
    print("bisection ", " ".join(f"{x:.10f}" for x in bis.p_hat), f"({bis.iterations} iterations)")
    print("newton    ", " ".join(f"{x:.10f}" for x in newton.p_hat))
    print(f"max-norm distance {dist:.3e}")
    doc = {"u": u.tolist(), "generator": gen.spec(), "eta": float(cfg["eta"]), "epsilon": req.epsilon,
           "bisection": bis.p_hat.tolist(), "iterations": bis.iterations, "newton": newton.p_hat.tolist(),
           "distance": dist}
    text = json.dumps(doc, indent=2)
    if _write(cfg["out"], "sample.json", text + "\n") is None:
        print(text)
    return EXIT_OK


def _default_env(k: int) -> str:
    return "stochastic(means=[" + ", ".join(["0"] + ["-0.2"] * (k - 1)) + "])"


def cmd_run(cfg) -> int:
    k = cfg.get("k")
    env_spec = cfg.get("env") or _default_env(int(k or 2))
    horizon = int(cfg["horizon"])
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    probe = parse_environment(env_spec, np.random.default_rng(0), k)
    n_arms = probe.n_arms
    if k is not None and int(k) != n_arms:
        raise UsageError(f"--k {k} does not match the environment's {n_arms} arms")
    if n_arms < 2:
        raise UsageError("bandit runs need K >= 2")
    gen = None if cfg["policy"] in ("exp3", "ftl") else cfg["generator"]
    policy = make_policy(cfg["policy"], gen, cfg.get("schedule"), float(cfg["epsilon"]), n_arms, horizon)
    agg, traces = run_batch(policy, lambda rng: parse_environment(env_spec, rng, n_arms), horizon, cfg["seeds"])
    for f in agg.failures:
        print(f"seed {f.seed} failed at round {f.round}: {f.error}", file=sys.stderr)
    print(f"policy {policy.kind}  schedule {policy.schedule.spec()}  env {probe.spec()}  K={n_arms}  T={horizon}")
    if policy.schedule.kind == "constant" and policy.kind != "ftl":
        print(f"eta = {policy.schedule.scale!r}")
    print(f"final mean pseudo-regret {agg.final_mean:.3f} (min {agg.min[-1]:.3f}, max {agg.max[-1]:.3f}, "
          f"{agg.n_seeds} seeds)")
    status = EXIT_OK if not agg.failures else EXIT_FAIL
    bound, label = _applicable_bound(policy, n_arms, horizon)
    if bound is not None:
        below = agg.final_mean <= bound
        print(f"{label} = {bound:.3f}: {'below' if below else 'ABOVE'}")
        status = status if below else EXIT_FAIL
    if cfg["out"] is not None:
        body = "".join(tr.to_csv(header=False) for tr in traces)
        _write(cfg["out"], "trace.csv", ",".join(TRACE_HEADER) + "\n" + body)
        _write(cfg["out"], "aggregate.csv", agg.to_csv())
        meta = {"rng": RNG_ALGORITHM, "policy": policy.describe(), "env": probe.spec(), "K": n_arms,
                "horizon": horizon, "seeds": cfg["seeds"], "final_mean": agg.final_mean,
                "failures": [f.__dict__ for f in agg.failures]}
        _write(cfg["out"], "run.json", json.dumps(meta, indent=2) + "\n")
    return status


def _applicable_bound(policy, n_arms, horizon):
    gen = policy.generator
    if not isinstance(gen, ParetoGenerator):
        return None, ""
    if policy.kind == "dopa_anytime" and gen.alpha == 0.5 and policy.schedule == make_policy("dopa_anytime").schedule:
        return 4.0 * math.sqrt(n_arms * horizon) + 1.0, "anytime bound 4 sqrt(KT) + 1"
    if policy.kind in ("dopa_static", "ftrl_baseline") and math.isclose(
        policy.schedule.scale, tuned_eta(gen.alpha, n_arms, horizon)
    ) and policy.schedule.kind == "constant":
        a = gen.alpha
        return math.sqrt(n_arms * horizon / (a * (1.0 - a))), "tuned bound sqrt(KT / (alpha (1 - alpha)))"
    return None, ""


def cmd_bench(cfg) -> int:
    ks = cfg["ks"] if isinstance(cfg["ks"], list) else [int(x) for x in str(cfg["ks"]).split(",")]
    report = run_bench(ks, int(cfg["reps"]), float(cfg["epsilon"]), cfg["seeds"][0],
                       parse_generator(cfg["generator"]), float(cfg["eta"]))
    print(report.table())
    _write(cfg["out"], "bench.csv", report.to_csv())
    status = EXIT_OK
    if report.bound_violations:
        print(f"iteration bound violated {report.bound_violations} times")
        status = EXIT_FAIL
    kmax = max(report.ks)
    speed, slope = report.speedup(kmax), report.slope()
    ok_speed, ok_slope = speed >= 50.0, 0.7 <= slope <= 1.5
    print(f"speedup at K={kmax}: {speed:.1f}x ({'ok' if ok_speed else 'below 50x'}); "
          f"slope {slope:.3f} ({'ok' if ok_slope else 'outside [0.7, 1.5]'})")
    if not (ok_speed and ok_slope):
        status = EXIT_FAIL
    return status


def cmd_validate(cfg) -> int:
    n = int(cfg["n"])
    if n < 10_000:
        raise UsageError(f"--n must be at least 10000, got {n}")
    u = np.array(_parse_vector(cfg["u"])) if "u" in cfg else np.array([0.0, -0.3, -1.0])
    if cfg.get("k") is not None and int(cfg["k"]) != u.size:
        raise UsageError(f"--k {cfg['k']} does not match u of length {u.size}")
    gen = parse_generator(cfg["generator"])
    fam = MarginalFamily.uniform(gen, u.size, float(cfg["eta"]))
    model = build_noise_model(u, fam, float(cfg["epsilon"]))
    rng = np.random.Generator(np.random.Philox(cfg["seeds"][0]))
    report = validate_argmax_frequencies(model, n, rng)
    print(f"{'arm':>4} {'frequency':>12} {'p':>12} {'z':>8}")
    for row in report.rows():
        print(f"{row['arm']:>4} {row['frequency']:>12.6f} {row['p']:>12.6f} {row['z_score']:>8.3f}")
    print("pass" if report.passed else "FAIL")
    doc = dict(report.to_dict(), u=u.tolist(), generator=gen.spec(), seed=cfg["seeds"][0], rng=RNG_ALGORITHM)
    _write(cfg["out"], "validate.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopa", description="Distributionally optimistic perturbation bandits.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON document with default settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", help="e.g. 7, 1,2,3 or 1-20")
        p.add_argument("--out", help="output directory")
        p.add_argument("--k", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--generator", help="e.g. pareto(alpha=0.5), exp3, hybrid(1*cshannon + 1*invsq)")
        p.add_argument("--eta", type=float)

    p = sub.add_parser("sample", help="arm-sampling distribution by bisection and Newton")
    common(p)
    p.add_argument("--u", help="JSON array of reward estimates")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("run", help="simulate a policy over several seeds")
    common(p)
    p.add_argument("--policy")
    p.add_argument("--env")
    p.add_argument("--horizon", type=int)
    p.add_argument("--schedule", help="constant(eta), sqrt(c) or a number")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="time bisection against the generic solver")
    common(p)
    p.add_argument("--ks", help="comma-separated K values")
    p.add_argument("--reps", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="check argmax frequencies of the optimistic noise")
    common(p)
    p.add_argument("--u", help="JSON array of reward estimates")
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _settings(args)
        return args.func(cfg)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"dopa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dopa {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except DopaError as exc:
        print(f"dopa {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
