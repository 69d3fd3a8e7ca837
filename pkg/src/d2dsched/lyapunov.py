"""Virtual queues and the drift-plus-penalty utility each pair minimises."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channel import power_matrix
from .scenario import AmcTable, D2DPair, ScenarioConfig

INFEASIBLE = math.inf


@dataclass(frozen=True)
class VirtualQueue:
    backlog: float = 0.0

    def __post_init__(self):
        if self.backlog < 0:
            raise ValueError("backlog must be >= 0")


@dataclass(frozen=True)
class LyapunovParams:
    """V plus the shared mapping state (r, f) and the slot index t."""

    v_weight: float
    r: int = 1
    f: int = 0
    slot: int = 1

    def __post_init__(self):
        if self.v_weight < 0:
            raise ValueError("v_weight must be >= 0")
        if self.r < 1 or self.f < 0 or self.slot < 1:
            raise ValueError("need r >= 1, f >= 0, slot >= 1")

    def with_slot(self, slot: int) -> "LyapunovParams":
        return replace(self, slot=slot)


def queue_update(q, served_rate: float, r_th: float):
    """``[q - served]^+ + r_th``; works on floats, arrays and VirtualQueue."""
    if np.any(np.asarray(served_rate) < 0):
        raise ValueError("served rate must be >= 0")
    if isinstance(q, VirtualQueue):
        return VirtualQueue(max(q.backlog - served_rate, 0.0) + r_th)
    return np.maximum(np.asarray(q, dtype=float) - served_rate, 0.0) + r_th


def metric_v(
    pair: D2DPair,
    h2,
    q,
    params: LyapunovParams,
    cfg: ScenarioConfig,
    table: AmcTable,
) -> tuple[float, Optional[int]]:
    """``min_m V*P_{n,m} - Q*R_m`` over feasible m, with the 1-based argmin.

    Returns ``(inf, None)`` when no rate is feasible.
    """
    backlog = q.backlog if isinstance(q, VirtualQueue) else float(q)
    h = h2.h_squared if hasattr(h2, "h_squared") else float(h2)
    v, m = metrics_v(
        np.array([pair.path_loss_linear]),
        np.array([h]),
        np.array([backlog]),
        params.v_weight,
        cfg.noise_power_w(),
        cfg.p_max_w,
        table,
    )
    return float(v[0]), (None if m[0] < 0 else int(m[0]) + 1)


def metrics_v(path_loss, h2, backlog, v_weight, noise_w, p_max_w, table: AmcTable):
    """Vectorised utility over pairs.

    Returns ``(v, m_idx)``; ``m_idx`` is 0-based and -1 for infeasible pairs.
    Ties go to the lowest rate index.
    """
    v, m_idx, _ = evaluate_pairs(path_loss, h2, backlog, v_weight, noise_w, p_max_w, table)
    return v, m_idx


def evaluate_pairs(path_loss, h2, backlog, v_weight, noise_w, p_max_w, table: AmcTable):
    """Like :func:`metrics_v` but also returns each pair's power at its argmin."""
    power, feasible = power_matrix(path_loss, h2, noise_w, p_max_w, table)
    util = v_weight * power - np.asarray(backlog, dtype=float)[..., None] * table.rates_bps
    util = np.where(feasible, util, np.inf)
    m_idx = np.argmin(util, axis=-1)
    v = np.take_along_axis(util, m_idx[..., None], axis=-1)[..., 0]
    p_star = np.take_along_axis(power, m_idx[..., None], axis=-1)[..., 0]
    ok = np.isfinite(v)
    return v, np.where(ok, m_idx, -1), np.where(ok, p_star, 0.0)


def v_min(t: int, r_th: float, table: AmcTable) -> float:
    return -t * r_th * float(table.rates_bps[-1])


def metric_bounds(
    params: LyapunovParams, cfg: ScenarioConfig, table: AmcTable, k2: int, r_th: Optional[float] = None
) -> tuple[float, float]:
    """Shared lower/upper utility bounds used to build the indexing map.

    ``v_min = -t R_th R_M`` and
    ``v_max = v_min + r (V P_max - R_th R_1 - v_min) / k2**f``.
    """
    if params.slot < 1:
        raise ValueError("slot must be >= 1")
    if k2 < 2:
        raise ValueError("k2 must be >= 2")
    r_th = cfg.throughput_threshold(table) if r_th is None else r_th
    lo = v_min(params.slot, r_th, table)
    width = params.v_weight * cfg.p_max_w - r_th * float(table.rates_bps[0]) - lo
    hi = lo + width * math.exp(math.log(params.r) - params.f * math.log(k2))
    return lo, hi
