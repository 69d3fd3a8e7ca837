"""Overall-collision probability of the indicator frame and the V(eps) rule.

Everything here uses the single-rate model: every pair transmits at rate R
with required SNR S and no power cap, so its utility is

    v_i = V * S * N0 * L_i / |h_i|^2 - Q_i * R

with ``L_i`` a linear path loss (>= 1) and ``|h_i|^2 ~ Exp(1)``. Hence

    P(v_i <= a) = exp(-V S N0 L_i / (a + Q_i R))   if a + Q_i R > 0, else 0.

Level occupancy follows :func:`feedback.quantize_index`: level 1 collects
``(-inf, a_2]``, level j collects ``(a_j, a_{j+1}]`` and the top level
collects ``(a_K, +inf)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .feedback import quantize_index

EXACT_MAX_PAIRS = 20


class RegimeError(ValueError):
    """Raised when the requested operating point does not exist."""


@dataclass
class ClampCounter:
    """Counts probabilities pulled back into [0, 1] beyond a 1e-12 slack."""

    count: int = 0
    worst: float = 0.0

    def clamp(self, p: float) -> float:
        excess = max(-p, p - 1.0)
        if excess > 1e-12:
            self.count += 1
            self.worst = max(self.worst, excess)
        return min(max(p, 0.0), 1.0)


CLAMPS = ClampCounter()


@dataclass(frozen=True)
class CollisionModelInput:
    v_weight: float
    snr_linear: float
    rate_bps: float
    noise_w: float
    path_losses: np.ndarray
    queue_backlogs: np.ndarray
    levels: np.ndarray  # a_1 < ... < a_K
    n_pairs: int = field(init=False)
    k2: int = field(init=False)

    def __post_init__(self):
        L = np.atleast_1d(np.asarray(self.path_losses, dtype=float))
        Q = np.atleast_1d(np.asarray(self.queue_backlogs, dtype=float))
        a = np.atleast_1d(np.asarray(self.levels, dtype=float))
        if L.shape != Q.shape or L.ndim != 1 or L.size < 1:
            raise ValueError("path_losses and queue_backlogs need one entry per pair")
        if a.size < 1 or np.any(np.diff(a) <= 0):
            raise ValueError("levels must be strictly increasing")
        if self.v_weight < 0 or self.snr_linear <= 0 or self.noise_w <= 0:
            raise ValueError("need v_weight >= 0, snr_linear > 0, noise_w > 0")
        object.__setattr__(self, "path_losses", L)
        object.__setattr__(self, "queue_backlogs", Q)
        object.__setattr__(self, "levels", a)
        object.__setattr__(self, "n_pairs", int(L.size))
        object.__setattr__(self, "k2", int(a.size))

    def scale(self) -> np.ndarray:
        """``V S N0 L_i`` per pair."""
        return self.v_weight * self.snr_linear * self.noise_w * self.path_losses


def c_coeff(inp: CollisionModelInput, i: int, j: int) -> float:
    """Exponent ``-V S N0 L_i / (a_j + Q_i R)`` for 1-based level ``j``.

    ``j = K + 1`` stands for ``a = +inf`` and returns 0.
    """
    if not 1 <= j <= inp.k2 + 1:
        raise IndexError(f"level {j} outside 1..{inp.k2 + 1}")
    if j == inp.k2 + 1:
        return 0.0
    denom = inp.levels[j - 1] + inp.queue_backlogs[i] * inp.rate_bps
    if denom <= 0:
        raise ValueError(f"a_{j} + Q_{i} R = {denom!r} is not positive")
    return float(-inp.scale()[i] / denom)


def below_probability(inp: CollisionModelInput, a) -> np.ndarray:
    """``P(v_i <= a)`` for every pair; ``a`` broadcasts along a trailing axis."""
    a = np.asarray(a, dtype=float)
    denom = a[None, ...] + (inp.queue_backlogs * inp.rate_bps).reshape((-1,) + (1,) * a.ndim)
    scale = inp.scale().reshape((-1,) + (1,) * a.ndim)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        expo = np.where(denom > 0, -scale / np.where(denom > 0, denom, 1.0), -np.inf)
    return np.exp(expo)


def occupancy(inp: CollisionModelInput) -> np.ndarray:
    """``(N, K)`` matrix of P(pair i lands on level j); rows sum to 1."""
    cdf = below_probability(inp, inp.levels)
    lower = np.concatenate([np.zeros((inp.n_pairs, 1)), cdf[:, 1:]], axis=1)
    upper = np.concatenate([cdf[:, 1:], np.ones((inp.n_pairs, 1))], axis=1)
    return np.clip(upper - lower, 0.0, 1.0)


def p_bar(inp: CollisionModelInput, i: int, j: int) -> float:
    """Probability that pair ``i`` is the only one on level ``j`` (1-based)."""
    occ = occupancy(inp)
    others = np.delete(occ[:, j - 1], i)
    return CLAMPS.clamp(float(occ[i, j - 1] * np.prod(1.0 - others)))


def collision_probability(inp: CollisionModelInput) -> float:
    """Exact probability that no level holds exactly one indicator.

    Dynamic programme over levels; within a level the pairs are added one at
    a time while tracking which pairs are already placed and whether the
    current level holds 0, 1 or 2+ indicators. Cost O(K N 2^N).
    """
    n = inp.n_pairs
    if n > EXACT_MAX_PAIRS:
        raise ValueError(f"exact evaluation limited to {EXACT_MAX_PAIRS} pairs, got {n}")
    occ = occupancy(inp)
    masks = np.arange(1 << n)
    dp = np.zeros(1 << n)
    dp[0] = 1.0
    for j in range(inp.k2):
        st = np.zeros((1 << n, 3))
        st[:, 0] = dp
        for i in range(n):
            bit = 1 << i
            src = masks[(masks & bit) == 0]
            dst = src | bit
            p = occ[i, j]
            st[dst, 1] += st[src, 0] * p
            st[dst, 2] += (st[src, 1] + st[src, 2]) * p
        dp = st[:, 0] + st[:, 2]
    return CLAMPS.clamp(float(dp[-1]))


def collision_probability_product(inp: CollisionModelInput) -> float:
    """Product-form approximation treating levels as independent.

    ``1 - sum_i sum_j pbar_ij * prod_{k<j} (1 - sum_{l != i} pbar_lk)``.
    Cheap (O(N^2 K)) but not exact: the per-level events are dependent
    through the shared pairs, so it can stray from :func:`collision_probability`.
    """
    occ = occupancy(inp)
    n, k = occ.shape
    with np.errstate(divide="ignore"):
        log_free = np.log1p(-occ)
    pb = np.empty_like(occ)
    for i in range(n):
        others = np.delete(log_free, i, axis=0).sum(axis=0)
        pb[i] = occ[i] * np.exp(others)
    total = pb.sum(axis=0)
    acc = 0.0
    for i in range(n):
        rest = np.clip(1.0 - (total - pb[i]), 0.0, 1.0)
        prefix = np.concatenate([[1.0], np.cumprod(rest)[:-1]])
        acc += float(np.dot(pb[i], prefix))
    return CLAMPS.clamp(1.0 - acc)


def sample_utilities(inp: CollisionModelInput, draws: int, rng: np.random.Generator) -> np.ndarray:
    h2 = rng.exponential(1.0, (draws, inp.n_pairs))
    with np.errstate(divide="ignore"):
        return inp.scale() / h2 - inp.queue_backlogs * inp.rate_bps


def overall_collisions(k_tilde: np.ndarray, k2: int) -> np.ndarray:
    """Row-wise: True when no RE carries exactly one indicator."""
    rows = k_tilde.shape[0]
    counts = np.zeros((rows, k2 + 1), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(rows), k_tilde.shape[1]), k_tilde.ravel()), 1)
    return ~np.any(counts[:, 1:] == 1, axis=1)


def mc_collision_oracle(
    inp: CollisionModelInput, draws: int, rng: np.random.Generator, chunk: int = 200_000
) -> tuple[float, float]:
    """Simulate the indicator frame directly; returns ``(estimate, stderr)``."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    hits = 0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        v = sample_utilities(inp, m, rng)
        k = quantize_index(v, inp.levels)
        hits += int(overall_collisions(k, inp.k2).sum())
        done += m
    p = hits / draws
    return p, math.sqrt(p * (1.0 - p) / draws)


# ---------------------------------------------------------------------------
# V(eps)
# ---------------------------------------------------------------------------


def epsilon_prime(eps: float, n_pairs: int, k2: int) -> float:
    """``(1/2N) [1 - ((1 - eps) / (N K))^(1 / (N + K))]``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if n_pairs < 1 or k2 < 1:
        raise ValueError("n_pairs and k2 must be >= 1")
    base = (1.0 - eps) / (n_pairs * k2)
    return (1.0 - base ** (1.0 / (n_pairs + k2))) / (2.0 * n_pairs)


def v_for_epsilon(
    eps: float,
    r_th: float,
    rate: float,
    t_p: float,
    p_max: float,
    snr_linear: float,
    noise_w: float,
    l_min: float,
    n_pairs: int,
    k2: int,
) -> float:
    """Lyapunov weight meant to hold the collision probability at ``eps``.

    ``V = -R_th R ln(e') T_p / (P_max ln(e') + S N0 L_min)`` with ``L_min``
    the smallest linear path loss. Raises :class:`RegimeError` when the
    result is not a positive finite number.
    """
    ep = epsilon_prime(eps, n_pairs, k2)
    if not 0 < ep < 1:
        raise RegimeError(f"eps' = {ep!r} leaves (0, 1)")
    log_ep = math.log(ep)
    denom = p_max * log_ep + snr_linear * noise_w * l_min
    if denom == 0:
        raise RegimeError("V(eps) undefined: zero denominator")
    v = -r_th * rate * log_ep * t_p / denom
    if not (math.isfinite(v) and v > 0):
        raise RegimeError(
            f"V(eps) = {v:.6g} is not positive: P_max ln(eps') = {p_max * log_ep:.6g} "
            f"outweighs S N0 L_min = {snr_linear * noise_w * l_min:.6g}"
        )
    return v


@dataclass(frozen=True)
class TuneInputs:
    r_th: float
    rate: float
    t_p: float
    p_max: float
    snr_linear: float
    noise_w: float
    l_min: float
    n_pairs: int
    k2: int


def tune_inputs(cfg, k2: int) -> TuneInputs:
    """Operating point for :func:`v_for_epsilon` taken from a scenario config.

    Rates are in the config's tuning units (kbps by default), power and noise
    are per resource block.
    """
    return TuneInputs(
        r_th=cfg.tune_r_th,
        rate=cfg.tune_rate,
        t_p=cfg.t_p_slots,
        p_max=cfg.p_max_w / cfg.bandwidth_rb,
        snr_linear=10.0 ** (cfg.tune_snr_db / 10.0),
        noise_w=cfg.noise_power_w(n_rb=1),
        l_min=cfg.l_min,
        n_pairs=cfg.n_pairs,
        k2=k2,
    )


def theorem_regime(
    v_weight: float,
    ti: TuneInputs,
    rng: np.random.Generator,
    queue_fill: float = 1.0,
    max_loss_factor: float = 1.0,
) -> CollisionModelInput:
    """Single-rate instance at the end of a tuning period.

    Levels come from the mapping bounds at ``t = T_p`` with ``r = 1, f = 0``;
    backlogs are drawn uniformly up to ``queue_fill * T_p * R_th`` and path
    losses uniformly in ``[L_min, max_loss_factor * L_min]``.
    """
    lo = -ti.t_p * ti.r_th * ti.rate
    hi = v_weight * ti.p_max - ti.r_th * ti.rate
    if not hi > lo:
        raise RegimeError("degenerate mapping range")
    levels = np.linspace(lo, hi, ti.k2)
    q = rng.uniform(0.0, queue_fill * ti.t_p * ti.r_th, ti.n_pairs)
    losses = ti.l_min * rng.uniform(1.0, max_loss_factor, ti.n_pairs)
    return CollisionModelInput(v_weight, ti.snr_linear, ti.rate, ti.noise_w, losses, q, levels)
