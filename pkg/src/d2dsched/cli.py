"""Command-line front end.

Subcommands write UTF-8 CSV files into ``--out`` together with
``effective_config.txt``, the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import collision as col
from .engine import (
    RUN_COLUMNS,
    STREAM_DROP,
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    EngineConfig,
    compare_policies,
    derive_seed,
    run_many,
    to_csv,
    trace_rows,
    write_csv,
)
from .feedback import capacities
from .scenario import ConfigError, drop_pairs, dump_config, key_help_lines, load_config, parse_overrides
from .schedulers import POLICIES

SEED_ENV = "D2D_SCHED_SEED"

COLLISION_COLUMNS = (
    "n_pairs",
    "k2",
    "epsilon",
    "v_weight",
    "pc_exact",
    "pc_product",
    "mc_estimate",
    "mc_stderr",
)
TUNE_COLUMNS = ("epsilon", "epsilon_prime", "n_pairs", "k2", "l_min", "v_weight")


def parse_sweep(text: str) -> list[float]:
    """``A:B:STEP`` inclusive of B (up to rounding), or a single value."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError("gamma_sweep", f"cannot parse {text!r}") from exc
    if len(nums) == 1:
        return nums
    if len(nums) != 3 or nums[2] <= 0 or nums[1] < nums[0]:
        raise ConfigError("gamma_sweep", "expected A:B:STEP with STEP > 0 and B >= A")
    a, b, step = nums
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 10) for i in range(n)]


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env, 0)
        except ValueError as exc:
            raise ConfigError(SEED_ENV, f"cannot parse {env!r}") from exc
    return cfg.seed


def _prepare(args):
    cfg = load_config(args.config, parse_overrides(args.set or []))
    seed = _seed(args, cfg)
    cfg = cfg.replace(seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(dump_config(cfg), encoding="utf-8")
    return cfg, seed, out


def _engine(args, seed, policies) -> EngineConfig:
    return EngineConfig(
        policies=tuple(policies),
        slots=args.slots,
        realizations=args.realizations,
        base_seed=seed,
        jobs=args.jobs,
        trace=args.trace,
        paired_fading=not args.unpaired,
    )


def cmd_gen_scenario(args) -> int:
    cfg, seed, out = _prepare(args)
    realization = EngineConfig(base_seed=seed).realization_seed(0)
    pairs = drop_pairs(cfg, np.random.default_rng(derive_seed(realization, STREAM_DROP)))
    rows = [{"id": p.id, "distance_m": p.distance_m, "path_loss_db": p.path_loss_db} for p in pairs]
    write_csv(out / "pairs.csv", rows, ("id", "distance_m", "path_loss_db"))
    return 0


def cmd_run(args) -> int:
    cfg, seed, out = _prepare(args)
    ec = _engine(args, seed, [args.policy])
    results = run_many([cfg], ec)
    write_csv(out / "runs.csv", [r.run_row() for r in results], RUN_COLUMNS)
    if args.trace:
        write_csv(out / "trace.csv", trace_rows(results), TRACE_COLUMNS)
    return 0


def cmd_compare(args) -> int:
    cfg, seed, out = _prepare(args)
    gammas = parse_sweep(args.gamma_sweep) if args.gamma_sweep else [cfg.gamma_th_db]
    policies = args.policies.split(",") if args.policies else list(POLICIES)
    bad = [p for p in policies if p not in POLICIES]
    if bad or len(policies) < 2:
        raise ConfigError("policies", f"need two or more of {','.join(POLICIES)}, got {args.policies}")
    ec = _engine(args, seed, policies)
    results, summary = compare_policies(cfg, ec, gammas)
    write_csv(out / "runs.csv", [r.run_row() for r in results], RUN_COLUMNS)
    write_csv(out / "summary.csv", summary, SUMMARY_COLUMNS)
    if args.trace:
        write_csv(out / "trace.csv", trace_rows(results), TRACE_COLUMNS)
    return 0


def _tune(cfg, eps):
    ti = col.tune_inputs(cfg, capacities(cfg).k2)
    return ti, col.v_for_epsilon(eps, **vars(ti))


def cmd_tune_v(args) -> int:
    cfg, _, out = _prepare(args)
    eps = cfg.epsilon_collision if args.epsilon is None else args.epsilon
    ti, v = _tune(cfg, eps)
    row = {
        "epsilon": eps,
        "epsilon_prime": col.epsilon_prime(eps, ti.n_pairs, ti.k2),
        "n_pairs": ti.n_pairs,
        "k2": ti.k2,
        "l_min": ti.l_min,
        "v_weight": v,
    }
    text = to_csv([row], TUNE_COLUMNS)
    (out / "tune_v.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_collision(args) -> int:
    """Closed form versus simulation on the single-rate instance at V(eps)."""
    cfg, seed, out = _prepare(args)
    eps = cfg.epsilon_collision if args.epsilon is None else args.epsilon
    ti, v = _tune(cfg, eps)
    rng = np.random.default_rng(derive_seed(seed, 0xC0))
    inp = col.theorem_regime(v, ti, rng)
    exact = col.collision_probability(inp) if inp.n_pairs <= col.EXACT_MAX_PAIRS else math.nan
    est, se = col.mc_collision_oracle(inp, args.draws, rng)
    row = {
        "n_pairs": inp.n_pairs,
        "k2": inp.k2,
        "epsilon": eps,
        "v_weight": v,
        "pc_exact": exact,
        "pc_product": col.collision_probability_product(inp),
        "mc_estimate": est,
        "mc_stderr": se,
    }
    text = to_csv([row], COLLISION_COLUMNS)
    (out / "collision.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys (file lines or --set key=value):\n" + "\n".join(key_help_lines())
    parser = argparse.ArgumentParser(
        prog="d2dsched",
        description="Energy-efficient D2D scheduling with limited CSI feedback.",
        epilog=keys,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out", default="out", help="output directory (created if absent)")
    common.add_argument("--seed", type=_u64, help=f"base seed (fallback: ${SEED_ENV}, then config)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--slots", type=_positive, default=20_000)
    sim.add_argument("--realizations", type=_positive, default=10)
    sim.add_argument("--jobs", type=_positive, default=1, help="parallel realizations")
    sim.add_argument("--trace", action="store_true", help="also write per-slot trace.csv")
    sim.add_argument("--unpaired", action="store_true", help="independent fading per policy")

    def add(name, func, parents, help_text):
        p = sub.add_parser(
            name, parents=parents, help=help_text, epilog=keys,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.set_defaults(func=func)
        return p

    add("gen-scenario", cmd_gen_scenario, [common], "write pairs.csv for the first realization")
    p = add("run", cmd_run, [common, sim], "simulate one policy, write runs.csv")
    p.add_argument("--policy", choices=POLICIES, default="distributed")
    p = add("compare", cmd_compare, [common, sim], "policy comparison over a gamma_th sweep")
    p.add_argument("--gamma-sweep", metavar="A:B:STEP", help="SNR thresholds in dB")
    p.add_argument("--policies", help=f"comma list, default {','.join(POLICIES)}")
    p = add("collision", cmd_collision, [common], "collision probability: closed form vs simulation")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--draws", type=_positive, default=100_000)
    p = add("tune-v", cmd_tune_v, [common], "Lyapunov weight for a target collision probability")
    p.add_argument("--epsilon", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except col.RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
