"""Channel-indexing feedback: capacities, the RE mapping and frame resolution.

RE indices are 1-based everywhere in this module.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .lyapunov import LyapunovParams
from .scenario import ScenarioConfig

PUCCH2_MUX_PER_RB = 12


@dataclass(frozen=True)
class FeedbackCapacity:
    k1: int  # quantized CSI reports per slot (PUCCH 2/2a/2b)
    k2: int  # indicator REs per slot (PUCCH 1/1a/1b)


def capacities(cfg: ScenarioConfig) -> FeedbackCapacity:
    """``K1 = 12 N_RB`` and ``K2 = N_RB * 12 N_OC / delta_shift``.

    ``k1_override``/``k2_override`` in the config replace the derived values.
    """
    n_rb, n_oc, delta = cfg.n_rb_feedback, cfg.n_oc, cfg.delta_shift
    if n_rb < 1 or n_oc < 1 or delta < 1:
        raise ValueError("n_rb_feedback, n_oc and delta_shift must be >= 1")
    if (PUCCH2_MUX_PER_RB * n_oc) % delta:
        raise ValueError(f"delta_shift={delta} does not divide 12*n_oc={12 * n_oc}")
    k1 = n_rb * PUCCH2_MUX_PER_RB
    k2 = n_rb * (PUCCH2_MUX_PER_RB * n_oc // delta)
    if cfg.k1_override is not None:
        k1 = cfg.k1_override
    if cfg.k2_override is not None:
        k2 = cfg.k2_override
    return FeedbackCapacity(k1, k2)


@dataclass(frozen=True)
class IndexingMap:
    v_min: float
    v_max: float
    levels: np.ndarray = field(repr=False)

    @property
    def k2(self) -> int:
        return int(self.levels.size)


def build_map(v_min: float, v_max: float, k2: int) -> IndexingMap:
    """``k2`` equally spaced levels from ``v_min`` to ``v_max`` inclusive."""
    if k2 < 2:
        raise ValueError("k2 must be >= 2")
    if not v_min < v_max:
        raise ValueError(f"need v_min < v_max, got {v_min!r} >= {v_max!r}")
    levels = np.linspace(v_min, v_max, k2)
    levels[-1] = v_max
    return IndexingMap(float(v_min), float(v_max), levels)


def quantize_index(v, levels: np.ndarray):
    """1-based index of the largest level strictly below ``v`` (vectorised).

    Values at or below the first level map to 1; values above the last map to
    ``len(levels)``.
    """
    k = np.searchsorted(levels, np.asarray(v, dtype=float), side="left")
    return np.clip(k, 1, levels.size)


def quantize(v: float, mapping: IndexingMap) -> tuple[float, int]:
    if not np.isfinite(v):
        raise ValueError("quantize needs a finite utility")
    k = int(quantize_index(v, mapping.levels))
    return float(mapping.levels[k - 1]), k


@dataclass(frozen=True)
class FeedbackFrame:
    """Occupancy of the indicator REs in one slot: RE index -> sorted pair ids."""

    occupancy: dict

    @property
    def pairs(self) -> list[int]:
        return sorted(p for ids in self.occupancy.values() for p in ids)


def assemble_frame(placements: Iterable[tuple[int, int]]) -> FeedbackFrame:
    occ: dict[int, list[int]] = {}
    seen = set()
    for pair_id, re_idx in placements:
        if pair_id in seen:
            raise ValueError(f"pair {pair_id} placed twice")
        seen.add(pair_id)
        occ.setdefault(int(re_idx), []).append(int(pair_id))
    return FeedbackFrame({k: tuple(sorted(v)) for k, v in sorted(occ.items())})


def resolve_frame(frame: FeedbackFrame) -> tuple[Optional[int], Optional[int]]:
    """Return ``(winner, collision_index)``.

    The winner is the sole occupant of the lowest singly occupied RE, whether
    or not a collision sits at a lower index. ``collision_index`` is the lowest
    RE holding two or more indicators.
    """
    winner = None
    collision = None
    for re_idx in sorted(frame.occupancy):
        ids = frame.occupancy[re_idx]
        if len(ids) == 1:
            if winner is None:
                winner = ids[0]
        elif len(ids) > 1 and collision is None:
            collision = re_idx
        if winner is not None and collision is not None:
            break
    return winner, collision


def resolve_indices(k_tilde: np.ndarray, k2: int) -> tuple[int, int]:
    """Array form of :func:`resolve_frame` for the engine hot loop.

    ``k_tilde[n]`` is pair n's RE (1-based) or 0 if it stays silent. Returns
    ``(winner, collision)`` with -1 standing for "none".
    """
    sent = k_tilde > 0
    counts = np.bincount(k_tilde[sent], minlength=k2 + 1)
    single = np.flatnonzero(counts == 1)
    multi = np.flatnonzero(counts > 1)
    winner = -1
    if single.size:
        winner = int(np.flatnonzero(k_tilde == single[0])[0])
    collision = int(multi[0]) if multi.size else -1
    return winner, collision


MAPPING_RULES = ("relative", "literal")


def update_mapping(params: LyapunovParams, c: int, k2: int, rule: str = "literal") -> LyapunovParams:
    """Mapping parameters after a collision at RE ``c``.

    ``literal``: ``r = c``; ``f += 1`` if ``c < k2`` else ``f = 0``.

    ``relative``: for ``c < k2`` the range shrinks to the top of the colliding
    cell, ``a_{c+1}``, rounded up to the nearest ``r / k2**f`` with
    ``1 <= r <= k2``; the colliding values therefore stay inside the map.
    ``c == k2`` enlarges exactly as the literal rule does.
    """
    if not 1 <= c <= k2:
        raise ValueError(f"collision index {c} outside 1..{k2}")
    if rule not in MAPPING_RULES:
        raise ValueError(f"unknown mapping rule {rule!r}; choose from {MAPPING_RULES}")
    if rule == "literal" or c == k2:
        return replace(params, r=c, f=params.f + 1 if c < k2 else 0)
    log_span = math.log(params.r * c / (k2 - 1)) - params.f * math.log(k2)
    r, f = lattice_ceil(log_span, k2)
    return replace(params, r=r, f=f)


def lattice_ceil(log_x: float, k2: int) -> tuple[int, int]:
    """Smallest ``r / k2**f >= exp(log_x)`` with integer ``1 <= r <= k2``, ``f >= 0``.

    Works on the log so that deep refinements neither underflow nor overflow.
    """
    if log_x >= 0.0:
        return min(math.ceil(math.exp(log_x) - 1e-12), k2), 0
    lk = math.log(k2)
    f = int(math.floor(-log_x / lk + 1e-12)) + 1
    r = math.ceil(math.exp(log_x + f * lk) - 1e-9)
    return max(1, min(r, k2)), f


def write_frame_trace(path, rows) -> None:
    """Dump ``(slot, FeedbackFrame)`` rows as ``slot,re_index,pair_ids``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "re_index", "pair_ids"])
        for slot, frame in rows:
            for re_idx, ids in frame.occupancy.items():
                w.writerow([slot, re_idx, ";".join(str(i) for i in ids)])
