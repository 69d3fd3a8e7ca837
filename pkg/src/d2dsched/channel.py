"""Rayleigh block fading and minimum-power link adaptation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import AmcTable, D2DPair, ScenarioConfig


@dataclass(frozen=True)
class FadingSample:
    h_squared: float


@dataclass(frozen=True)
class PowerRatePoint:
    m: int  # 1-based AMC index
    power_w: float
    rate_bps: float  # 0 when the power cap binds
    feasible: bool


def sample_fading(rng: np.random.Generator, size=None):
    """|h|^2 of a unit-variance complex Gaussian channel, i.e. Exp(1).

    Returns a :class:`FadingSample` for ``size=None``, else an ndarray.
    """
    h2 = rng.exponential(1.0, size)
    if size is None:
        return FadingSample(float(h2))
    return h2


def _h2(h2) -> float:
    return h2.h_squared if isinstance(h2, FadingSample) else float(h2)


def uncapped_power(snr_linear, noise_w, path_loss, h2):
    """Power needed to reach ``snr_linear``; ``inf`` when ``h2 == 0``."""
    with np.errstate(divide="ignore"):
        return np.asarray(snr_linear) * noise_w * np.asarray(path_loss) / np.asarray(h2)


def required_power(
    pair: D2DPair, h2, m: int, cfg: ScenarioConfig, table: AmcTable
) -> PowerRatePoint:
    """Minimum power to support rate index ``m``, capped at ``p_max_w``.

    A capped point is marked infeasible and delivers no rate.
    """
    if not 1 <= m <= table.size:
        raise IndexError(f"AMC index {m} outside 1..{table.size}")
    raw = float(
        uncapped_power(
            table.snr_thresholds[m - 1], cfg.noise_power_w(), pair.path_loss_linear, _h2(h2)
        )
    )
    feasible = raw <= cfg.p_max_w
    power = min(raw, cfg.p_max_w)
    rate = float(table.rates_bps[m - 1]) if feasible else 0.0
    return PowerRatePoint(m, power, rate, feasible)


def achievable_set(pair: D2DPair, h2, cfg: ScenarioConfig, table: AmcTable) -> list[PowerRatePoint]:
    return [required_power(pair, h2, m, cfg, table) for m in range(1, table.size + 1)]


def power_matrix(path_loss, h2, noise_w: float, p_max_w: float, table: AmcTable):
    """Vectorised :func:`required_power` over pairs (and optionally samples).

    ``path_loss`` and ``h2`` broadcast against each other; a trailing axis of
    length M is appended. Returns ``(power, feasible)`` where infeasible entries
    hold ``p_max_w``.
    """
    raw = uncapped_power(
        table.snr_thresholds, noise_w, np.asarray(path_loss)[..., None], np.asarray(h2)[..., None]
    )
    feasible = raw <= p_max_w
    return np.minimum(raw, p_max_w), feasible
