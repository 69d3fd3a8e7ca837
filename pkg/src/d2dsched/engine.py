"""Slot loop, realization fan-out and energy metrics."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .channel import power_matrix
from .feedback import capacities
from .lyapunov import LyapunovParams, queue_update
from .scenario import AmcTable, ScenarioConfig, drop_pairs
from .schedulers import (
    POLICIES,
    SlotOutcome,
    _report_and_pick,
    distributed_schedule,
    greedy_subset,
    ideal_schedule,
    round_robin_subset,
)

MASK64 = (1 << 64) - 1

RUN_COLUMNS = (
    "seed",
    "policy",
    "gamma_th_db",
    "avg_power_w",
    "ee_bits_per_j",
    "avg_sum_queue",
    "collision_rate",
    "scheduled_fraction",
)

TRACE_COLUMNS = (
    "seed",
    "policy",
    "gamma_th_db",
    "slot",
    "scheduled",
    "power_w",
    "rate_bps",
    "collision_index",
    "sum_queue",
)


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (Steele, Lea and Flood)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *path: int) -> int:
    """Chain splitmix64 over ``base`` and each element of ``path``."""
    s = splitmix64(base & MASK64)
    for p in path:
        s = splitmix64((s ^ (p & MASK64)) & MASK64)
    return s


# stream labels fed to derive_seed
STREAM_DROP, STREAM_FADING, STREAM_MC = 1, 2, 3


@dataclass(frozen=True)
class EngineConfig:
    policies: tuple = POLICIES
    slots: int = 20_000
    realizations: int = 10
    paired_fading: bool = True
    base_seed: int = 0
    warmup_fraction: float = 0.2
    jobs: int = 1
    trace: bool = False

    def __post_init__(self):
        if self.slots < 1 or self.realizations < 1:
            raise ValueError("slots and realizations must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown:
            raise ValueError(f"unknown policies {unknown}; choose from {POLICIES}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def realization_seed(self, k: int) -> int:
        return derive_seed(self.base_seed, k)


@dataclass
class SimState:
    """Mutable per-realization state; one instance per policy run."""

    cfg: ScenarioConfig
    table: AmcTable
    losses: np.ndarray
    r_th: float
    fading_rng: np.random.Generator
    queues: np.ndarray
    params: LyapunovParams
    k1: int
    mc_penalty: Optional[np.ndarray] = None  # V*P over (S, N, M), +inf where infeasible
    t: int = 0  # slots completed

    @property
    def n(self) -> int:
        return self.losses.size


def init_state(
    cfg: ScenarioConfig, policy: str, seed: int, paired_fading: bool = True, policy_tag: int = 0
) -> SimState:
    """Fresh drop, empty queues, mapping at ``r=1, f=0``.

    With ``paired_fading`` the fading stream depends on ``seed`` only, so every
    policy run from the same seed sees the same channel sequence.
    """
    table = cfg.amc_table()
    pairs = drop_pairs(cfg, np.random.default_rng(derive_seed(seed, STREAM_DROP)))
    losses = np.array([p.path_loss_linear for p in pairs])
    fade_seed = derive_seed(seed, STREAM_FADING) if paired_fading else derive_seed(
        seed, STREAM_FADING, policy_tag + 1
    )
    state = SimState(
        cfg=cfg,
        table=table,
        losses=losses,
        r_th=cfg.throughput_threshold(table),
        fading_rng=np.random.default_rng(fade_seed),
        queues=np.zeros(losses.size),
        params=LyapunovParams(cfg.v_weight),
        k1=capacities(cfg).k1,
    )
    if policy == "centralized":
        # one common-random-number sample set per realization
        mc_rng = np.random.default_rng(derive_seed(seed, STREAM_MC))
        h2 = mc_rng.exponential(1.0, (cfg.mc_samples, losses.size))
        power, feasible = power_matrix(losses[None, :], h2, cfg.noise_power_w(), cfg.p_max_w, table)
        state.mc_penalty = np.where(feasible, cfg.v_weight * power, np.inf)
    return state


def _centralized_subset(state: SimState) -> tuple:
    reward = np.multiply.outer(state.queues, state.table.rates_bps)
    util = (state.mc_penalty - reward).min(axis=-1)
    return greedy_subset(util, state.k1)[0]


def run_slot(state: SimState, policy: str) -> tuple[SlotOutcome, SimState]:
    """Advance ``state`` by one slot under ``policy`` (state is updated in place)."""
    cfg = state.cfg
    period = max(int(cfg.t_p_slots), 1)
    t_in_period = state.t % period + 1
    if t_in_period == 1:
        params = LyapunovParams(state.params.v_weight)
    else:
        params = state.params.with_slot(t_in_period)
    h2 = state.fading_rng.exponential(1.0, state.n)
    args = (state.losses, h2, state.queues, params, cfg, state.table)
    if policy == "ideal":
        out = ideal_schedule(*args)
    elif policy == "distributed":
        out, params = distributed_schedule(*args, r_th=state.r_th)
    elif policy == "centralized":
        out = _report_and_pick("centralized", _centralized_subset(state), *args)
    elif policy == "round_robin":
        subset = round_robin_subset(state.t, state.n, state.k1)
        out = _report_and_pick("round_robin", subset, *args)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    served = np.zeros(state.n)
    if out.scheduled is not None:
        served[out.scheduled] = out.rate_bps
    state.queues = queue_update(state.queues, served, state.r_th)
    state.params = params
    state.t += 1
    return out, state


@dataclass(frozen=True)
class RunMetrics:
    policy: str
    seed: int
    gamma_th_db: float
    slots: int  # slots inside the measurement window
    total_energy_j: float
    total_bits: float
    per_pair_avg_rate_bps: tuple
    avg_sum_queue: float
    collision_count: int  # slots lost to an overall collision
    re_collision_count: int  # slots with any shared indicator RE
    scheduled_slot_fraction: float
    slot_duration_s: float
    r_th_bps: float
    q3_sum_queue: float = math.nan
    q4_sum_queue: float = math.nan
    trace: tuple = field(default=(), repr=False, compare=False)

    @property
    def avg_power_w(self) -> float:
        return self.total_energy_j / (self.slots * self.slot_duration_s)

    @property
    def ee_bits_per_j(self) -> float:
        return self.total_bits / self.total_energy_j if self.total_energy_j > 0 else math.nan

    @property
    def collision_rate(self) -> float:
        return self.collision_count / self.slots

    @property
    def queue_drift(self) -> float:
        """Relative growth of mean sum-queue from the third to the final quarter."""
        if not self.q3_sum_queue > 0:
            return 0.0
        return self.q4_sum_queue / self.q3_sum_queue - 1.0

    def run_row(self) -> dict:
        return {
            "seed": self.seed,
            "policy": self.policy,
            "gamma_th_db": self.gamma_th_db,
            "avg_power_w": self.avg_power_w,
            "ee_bits_per_j": self.ee_bits_per_j,
            "avg_sum_queue": self.avg_sum_queue,
            "collision_rate": self.collision_rate,
            "scheduled_fraction": self.scheduled_slot_fraction,
        }


def run_realization(
    cfg: ScenarioConfig, engine_cfg: EngineConfig, policy: str, seed: int
) -> RunMetrics:
    """Simulate ``engine_cfg.slots`` slots; averages skip the warmup window."""
    tag = POLICIES.index(policy)
    state = init_state(cfg, policy, seed, engine_cfg.paired_fading, tag)
    T = engine_cfg.slots
    w0 = min(int(engine_cfg.warmup_fraction * T), T - 1)
    dt = cfg.slot_duration_s
    energy = 0.0
    bits = np.zeros(state.n)
    sum_q = np.empty(T)
    scheduled = 0
    overall = 0
    any_coll = 0
    trace = []
    for s in range(T):
        out, state = run_slot(state, policy)
        sum_q[s] = state.queues.sum()
        if engine_cfg.trace:
            trace.append((s + 1, out, float(sum_q[s])))
        if s < w0:
            continue
        if out.scheduled is not None:
            scheduled += 1
            energy += out.power_w * dt
            bits[out.scheduled] += out.rate_bps * dt
        elif out.collision_index is not None:
            overall += 1
        if out.collision_index is not None:
            any_coll += 1
    window = T - w0
    q = T // 4
    q3 = float(sum_q[2 * q : 3 * q].mean()) if q else math.nan
    q4 = float(sum_q[3 * q :].mean()) if q else math.nan
    return RunMetrics(
        policy=policy,
        seed=seed,
        gamma_th_db=cfg.gamma_th_db,
        slots=window,
        total_energy_j=energy,
        total_bits=float(bits.sum()),
        per_pair_avg_rate_bps=tuple(float(b) / (window * dt) for b in bits),
        avg_sum_queue=float(sum_q[w0:].mean()),
        collision_count=overall,
        re_collision_count=any_coll,
        scheduled_slot_fraction=scheduled / window,
        slot_duration_s=dt,
        r_th_bps=state.r_th,
        q3_sum_queue=q3,
        q4_sum_queue=q4,
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _task(args) -> RunMetrics:
    cfg, engine_cfg, policy, seed = args
    return run_realization(cfg, engine_cfg, policy, seed)


def run_many(cfg_list: Sequence[ScenarioConfig], engine_cfg: EngineConfig) -> list[RunMetrics]:
    """Every (config, realization, policy) combination, in that nesting order.

    Results come back in task order whatever ``engine_cfg.jobs`` is.
    """
    tasks = [
        (cfg, engine_cfg, policy, engine_cfg.realization_seed(k))
        for cfg in cfg_list
        for k in range(engine_cfg.realizations)
        for policy in engine_cfg.policies
    ]
    if engine_cfg.jobs == 1 or len(tasks) == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=engine_cfg.jobs) as pool:
        return list(pool.map(_task, tasks))


def mean_ci95(values) -> tuple[float, float]:
    """Sample mean and Student-t 95% half-width (nan for a single value)."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.nan
    half = stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean()), float(half)


SUMMARY_METRICS = ("avg_power_w", "ee_bits_per_j", "avg_sum_queue", "collision_rate", "scheduled_fraction")

SUMMARY_COLUMNS = (
    ("gamma_th_db", "policy", "realizations")
    + tuple(f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "ci95"))
    + ("min_rate_ratio", "ec_reduction_vs_rr_pct")
)


def summarize(results: Sequence[RunMetrics], baseline: str = "round_robin") -> list[dict]:
    """Aggregate per (gamma_th, policy), preserving first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.gamma_th_db, r.policy), []).append(r)
    rows = []
    for (gamma, policy), runs in groups.items():
        row = {"gamma_th_db": gamma, "policy": policy, "realizations": len(runs)}
        for m in SUMMARY_METRICS:
            mean, half = mean_ci95([r.run_row()[m] for r in runs])
            row[f"{m}_mean"] = mean
            row[f"{m}_ci95"] = half
        row["min_rate_ratio"] = min(min(r.per_pair_avg_rate_bps) / r.r_th_bps for r in runs)
        rows.append(row)
    base = {r["gamma_th_db"]: r["avg_power_w_mean"] for r in rows if r["policy"] == baseline}
    for row in rows:
        ref = base.get(row["gamma_th_db"])
        row["ec_reduction_vs_rr_pct"] = (
            100.0 * (1.0 - row["avg_power_w_mean"] / ref) if ref else math.nan
        )
    return rows


def compare_policies(
    cfg: ScenarioConfig, engine_cfg: EngineConfig, gammas: Sequence[float]
) -> tuple[list[RunMetrics], list[dict]]:
    if len(engine_cfg.policies) < 2:
        raise ValueError("compare needs at least two policies")
    cfgs = [cfg.replace(gamma_th_db=float(g)) for g in gammas]
    results = run_many(cfgs, engine_cfg)
    return results, summarize(results)


# ---------------------------------------------------------------------------
# CSV output (fixed column order, fixed float formatting)
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else format(float(x), ".10g")
    return "" if x is None else str(x)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(rows, columns))


def trace_rows(results: Sequence[RunMetrics]):
    for r in results:
        for slot, out, sq in r.trace:
            yield {
                "seed": r.seed,
                "policy": r.policy,
                "gamma_th_db": r.gamma_th_db,
                "slot": slot,
                "scheduled": -1 if out.scheduled is None else out.scheduled,
                "power_w": out.power_w,
                "rate_bps": out.rate_bps,
                "collision_index": 0 if out.collision_index is None else out.collision_index,
                "sum_queue": sq,
            }
