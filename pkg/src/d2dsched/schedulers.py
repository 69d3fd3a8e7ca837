"""Per-slot scheduling policies: ideal, centralized, distributed, round-robin.

All policies share the argument convention ``(pairs, fading, queues, params,
cfg, table)`` where ``pairs`` is a list of :class:`D2DPair` or an array of
linear path losses, ``fading`` the per-pair ``|h|^2`` of the slot and
``queues`` the per-pair backlogs. Ties in every argmin go to the lowest id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .feedback import capacities, quantize_index, resolve_indices, update_mapping
from .lyapunov import LyapunovParams, evaluate_pairs, metric_bounds
from .scenario import AmcTable, ScenarioConfig

POLICIES = ("ideal", "distributed", "centralized", "round_robin")


@dataclass(frozen=True)
class SlotOutcome:
    policy: str
    scheduled: Optional[int]
    power_w: float = 0.0
    rate_bps: float = 0.0
    collision_index: Optional[int] = None
    feedback_cost: int = 0
    utility: float = math.nan  # exact utility of the scheduled pair

    def __post_init__(self):
        if self.scheduled is None and (self.power_w or self.rate_bps):
            raise ValueError("an idle slot carries no power or rate")


@dataclass(frozen=True)
class CentralizedState:
    subset: tuple
    mc_samples: int
    estimate: float = math.nan


def _losses(pairs) -> np.ndarray:
    if isinstance(pairs, np.ndarray):
        return pairs
    return np.array([p.path_loss_linear for p in pairs], dtype=float)


def _evaluate(pairs, fading, queues, params, cfg, table):
    return evaluate_pairs(
        _losses(pairs),
        np.asarray(fading, dtype=float),
        np.asarray(queues, dtype=float),
        params.v_weight,
        cfg.noise_power_w(),
        cfg.p_max_w,
        table,
    )


def _outcome(policy, n, m_idx, p_star, v, table, **extra) -> SlotOutcome:
    if n < 0 or m_idx[n] < 0:
        return SlotOutcome(policy, None, **extra)
    return SlotOutcome(
        policy,
        int(n),
        float(p_star[n]),
        float(table.rates_bps[m_idx[n]]),
        utility=float(v[n]),
        **extra,
    )


def _argmin_finite(values) -> int:
    """Lowest index of the minimum, or -1 if every value is +inf."""
    n = int(np.argmin(values))
    return n if np.isfinite(values[n]) else -1


def ideal_schedule(pairs, fading, queues, params: LyapunovParams, cfg: ScenarioConfig, table: AmcTable):
    """Global instantaneous CSI: schedule ``argmin_n v_n``."""
    v, m_idx, p_star = _evaluate(pairs, fading, queues, params, cfg, table)
    return _outcome("ideal", _argmin_finite(v), m_idx, p_star, v, table)


# ---------------------------------------------------------------------------
# Centralized limited feedback
# ---------------------------------------------------------------------------


def quantize_power(power_w, grid) -> np.ndarray:
    """Smallest grid power >= the actual power, clamped to the largest entry."""
    grid = np.asarray(grid, dtype=float)
    idx = np.searchsorted(grid, np.asarray(power_w, dtype=float), side="left")
    return grid[np.minimum(idx, grid.size - 1)]


def sample_utilities(pairs, queues, params, cfg, table, h2_samples) -> np.ndarray:
    """Utility of every pair under each fading sample, shape ``(S, N)``.

    Infeasible entries are +inf.
    """
    v, _, _ = evaluate_pairs(
        _losses(pairs)[None, :],
        h2_samples,
        np.broadcast_to(np.asarray(queues, dtype=float), h2_samples.shape),
        params.v_weight,
        cfg.noise_power_w(),
        cfg.p_max_w,
        table,
    )
    return v


def subset_value(util: np.ndarray, subset) -> float:
    """Monte-Carlo estimate of ``E[min_{n in subset} v_n]``.

    A sample where no member is feasible schedules nobody and scores 0.
    """
    best = util[:, list(subset)].min(axis=1)
    return float(np.where(np.isfinite(best), best, 0.0).mean())


def greedy_subset(util: np.ndarray, k1: int) -> tuple[tuple, float]:
    """Forward selection of ``min(k1, N)`` columns minimising :func:`subset_value`."""
    n_samples, n = util.shape
    chosen: list[int] = []
    current = np.full(n_samples, np.inf)
    estimate = 0.0
    for _ in range(min(k1, n)):
        cand = np.minimum(current[:, None], util)
        scores = np.where(np.isfinite(cand), cand, 0.0).mean(axis=0)
        scores[chosen] = np.inf
        j = int(np.argmin(scores))
        chosen.append(j)
        current = cand[:, j]
        estimate = float(scores[j])
    return tuple(sorted(chosen)), estimate


def select_subset(
    pairs, queues, params, cfg: ScenarioConfig, table: AmcTable, rng=None, h2_samples=None
) -> CentralizedState:
    """Choose up to K1 reporters from fading statistics and current backlogs.

    ``h2_samples`` (shape ``(S, N)``) lets the caller fix the common random
    numbers; otherwise ``cfg.mc_samples`` draws come from ``rng``.
    """
    n = len(pairs)
    if h2_samples is None:
        h2_samples = rng.exponential(1.0, (cfg.mc_samples, n))
    util = sample_utilities(pairs, queues, params, cfg, table, h2_samples)
    subset, est = greedy_subset(util, capacities(cfg).k1)
    return CentralizedState(subset, int(h2_samples.shape[0]), est)


def _report_and_pick(policy, subset, pairs, fading, queues, params, cfg, table) -> SlotOutcome:
    v, m_idx, p_star = _evaluate(pairs, fading, queues, params, cfg, table)
    members = np.asarray(subset, dtype=int)
    feasible = m_idx[members] >= 0
    reported = quantize_power(p_star[members], cfg.quantized_powers_w)
    rate = table.rates_bps[np.maximum(m_idx[members], 0)]
    score = np.where(
        feasible, params.v_weight * reported - np.asarray(queues)[members] * rate, np.inf
    )
    pick = _argmin_finite(score) if members.size else -1
    n = int(members[pick]) if pick >= 0 else -1
    return _outcome(policy, n, m_idx, p_star, v, table, feedback_cost=int(members.size))


def centralized_schedule(
    state: CentralizedState, pairs, fading, queues, params, cfg: ScenarioConfig, table: AmcTable
) -> SlotOutcome:
    """BS picks ``argmin V*P~_n - Q_n R_n`` over the reporting subset.

    P~ is the reported (quantized) power; the winner transmits at its true power.
    """
    return _report_and_pick("centralized", state.subset, pairs, fading, queues, params, cfg, table)


def round_robin_subset(slot: int, n: int, k1: int) -> tuple:
    size = min(k1, n)
    start = (slot * k1) % n
    return tuple((start + i) % n for i in range(size))


def round_robin_schedule(
    slot: int, pairs, fading, queues, params, cfg: ScenarioConfig, table: AmcTable
) -> SlotOutcome:
    subset = round_robin_subset(slot, len(pairs), capacities(cfg).k1)
    return _report_and_pick("round_robin", subset, pairs, fading, queues, params, cfg, table)


# ---------------------------------------------------------------------------
# Distributed channel-indexing feedback
# ---------------------------------------------------------------------------


def indicator_placement(v: np.ndarray, lo: float, hi: float, k2: int) -> np.ndarray:
    """RE index (1-based) per pair, 0 for pairs without a feasible rate."""
    levels = lo + np.arange(k2) * ((hi - lo) / (k2 - 1))
    levels[-1] = hi
    finite = np.isfinite(v)
    k = np.zeros(v.shape, dtype=int)
    k[finite] = quantize_index(v[finite], levels)
    return k


def distributed_schedule(
    pairs,
    fading,
    queues,
    params: LyapunovParams,
    cfg: ScenarioConfig,
    table: AmcTable,
    r_th: Optional[float] = None,
) -> tuple[SlotOutcome, LyapunovParams]:
    """One slot of channel-indexing feedback with BS-assisted resolution.

    Returns the outcome and the mapping parameters for the next slot.
    """
    k2 = capacities(cfg).k2
    v, m_idx, p_star = _evaluate(pairs, fading, queues, params, cfg, table)
    if k2 >= 2:
        lo, hi = metric_bounds(params, cfg, table, k2, r_th)
        k_tilde = indicator_placement(v, lo, hi, k2)
    else:
        k_tilde = np.isfinite(v).astype(int)
    winner, collision = resolve_indices(k_tilde, k2)
    if collision > 0:
        params = update_mapping(params, collision, k2, cfg.mapping_rule)
    out = _outcome(
        "distributed",
        winner,
        m_idx,
        p_star,
        v,
        table,
        collision_index=collision if collision > 0 else None,
        feedback_cost=int(np.count_nonzero(k_tilde)),
    )
    return out, params
