"""Cell scenario, static configuration and the AMC (link adaptation) table.

Path-loss convention used throughout the package: ``path_loss_linear`` is a
loss (>= 1), so the received power is ``P * |h|^2 / L``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 3.0e8


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# AMC table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmcTable:
    """Ordered SNR thresholds (linear) and the bit-rates they unlock."""

    snr_thresholds: np.ndarray
    rates_bps: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.snr_thresholds, dtype=float)
        r = np.asarray(self.rates_bps, dtype=float)
        if s.ndim != 1 or s.size < 1 or s.shape != r.shape:
            raise ValueError("AMC table needs M >= 1 matching thresholds and rates")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("AMC thresholds and rates must be strictly increasing")
        if s[0] < 0 or r[0] <= 0:
            raise ValueError("AMC thresholds must be >= 0 and rates > 0")
        object.__setattr__(self, "snr_thresholds", s)
        object.__setattr__(self, "rates_bps", r)

    @property
    def size(self) -> int:
        return int(self.snr_thresholds.size)

    @property
    def entries(self) -> list[tuple[float, float]]:
        return list(zip(self.snr_thresholds.tolist(), self.rates_bps.tolist()))

    def scaled(self, factor: float) -> "AmcTable":
        """Same thresholds, rates multiplied by ``factor`` (e.g. RBs per allocation)."""
        return AmcTable(self.snr_thresholds, self.rates_bps * factor)

    @classmethod
    def from_csv(cls, path) -> "AmcTable":
        """Read a CSV with columns ``snr_db,rate_bps``."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"snr_db", "rate_bps"}:
            raise ConfigError("amc_csv", f"{path} must have columns snr_db,rate_bps")
        snr_db = [float(r["snr_db"]) for r in rows]
        rates = [float(r["rate_bps"]) for r in rows]
        return cls(db_to_linear(snr_db), np.array(rates))


def default_amc_table(top_rate_bps: float = 700e3) -> AmcTable:
    """15-entry table, thresholds 0..14 dB, rates per RB.

    Rates follow a Shannon curve ``log2(1 + S_m)`` scaled so the 14 dB entry
    equals ``top_rate_bps`` (700 kbps/RB).
    """
    snr_db = np.arange(15, dtype=float)
    snr = db_to_linear(snr_db)
    shannon = np.log2(1.0 + snr)
    rates = top_rate_bps * shannon / shannon[-1]
    return AmcTable(snr, rates)


def snr_to_rate_index(snr_linear: float, table: AmcTable) -> Optional[int]:
    """Largest 1-based index m with S_m <= snr, or None below S_1."""
    if snr_linear < 0:
        raise ValueError("snr must be >= 0")
    m = int(np.searchsorted(table.snr_thresholds, snr_linear, side="right"))
    return m if m >= 1 else None


def rate_at_snr_db(snr_db: float, table: AmcTable) -> float:
    m = snr_to_rate_index(float(db_to_linear(snr_db)), table)
    return 0.0 if m is None else float(table.rates_bps[m - 1])


# ---------------------------------------------------------------------------
# Path loss
# ---------------------------------------------------------------------------


def _winner_b1_los_db(d, carrier_ghz: float, h_eff_m: float):
    # dual-slope LOS with a free-space floor
    d = np.asarray(d, dtype=float)
    d_bp = 4.0 * h_eff_m * h_eff_m * carrier_ghz * 1e9 / SPEED_OF_LIGHT
    free = 20.0 * np.log10(d) + 46.4 + 20.0 * np.log10(carrier_ghz / 5.0)
    near = 22.7 * np.log10(d) + 27.0 + 20.0 * np.log10(carrier_ghz)
    far = (
        40.0 * np.log10(d)
        + 7.56
        - 2 * 17.3 * np.log10(h_eff_m)
        + 2.7 * np.log10(carrier_ghz)
    )
    return np.maximum(free, np.where(d < d_bp, near, far))


def _power_law_db(d, ref_db: float, exponent: float):
    return ref_db + 10.0 * exponent * np.log10(np.asarray(d, dtype=float))


PATH_LOSS_MODELS = ("winner_b1", "power_law")


def path_loss(distance_m, model: str = "winner_b1", **params):
    """Linear path loss (>= 1) at ``distance_m``.

    ``winner_b1``: dual-slope log-distance LOS model with a free-space floor
    (keys ``carrier_ghz``, ``antenna_height_eff_m``).
    ``power_law``: ``10**(ref_db/10) * d**exponent`` (keys ``ref_db``,
    ``exponent``).
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    if model == "winner_b1":
        loss_db = _winner_b1_los_db(
            d, params.get("carrier_ghz", 2.0), params.get("antenna_height_eff_m", 0.8)
        )
    elif model == "power_law":
        loss_db = _power_law_db(d, params.get("ref_db", 38.46), params.get("exponent", 3.67))
    else:
        raise ValueError(f"unknown path-loss model {model!r}")
    out = np.maximum(db_to_linear(loss_db), 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """All static constants of one scenario. SI units unless stated."""

    cell_radius_m: float = 500.0
    n_pairs: int = 50
    d_min_m: float = 3.0
    d_max_m: float = 350.0
    bandwidth_hz: float = 10e6
    bandwidth_rb: int = 50
    alloc_rb: int = 50
    n_rb_feedback: int = 2
    delta_shift: int = 1
    n_oc: int = 3
    k1_override: Optional[int] = None
    k2_override: Optional[int] = None
    p_max_w: float = 0.25
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    r_th_bps: Optional[float] = None
    gamma_th_db: float = 14.0
    rate_load: float = 5.0 / 7.0
    t_p_slots: int = 1_000_000
    slot_duration_s: float = 1e-3
    epsilon_collision: float = 0.1
    quantized_powers_w: tuple = (0.05, 0.10, 0.15, 0.20)
    v_weight: float = 1e15
    mc_samples: int = 500
    mapping_rule: str = "literal"
    path_loss_model: str = "winner_b1"
    carrier_ghz: float = 2.0
    antenna_height_eff_m: float = 0.8
    pl_ref_db: float = 38.46
    pl_exponent: float = 3.67
    amc_top_rate_bps: float = 700e3
    amc_csv: Optional[str] = None
    tune_snr_db: float = 80.0
    tune_rate: float = 700.0
    tune_r_th: float = 500.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "quantized_powers_w", tuple(float(p) for p in self.quantized_powers_w)
        )
        self.validate()

    def validate(self) -> None:
        if self.n_pairs < 1:
            raise ConfigError("n_pairs", "must be >= 1")
        if not (0 < self.d_min_m < self.d_max_m <= 2 * self.cell_radius_m):
            raise ConfigError("d_min_m", "need 0 < d_min_m < d_max_m <= 2*cell_radius_m")
        qp = self.quantized_powers_w
        if len(qp) < 1 or any(b <= a for a, b in zip(qp, qp[1:])):
            raise ConfigError("quantized_powers_w", "must be strictly increasing")
        if qp[-1] > self.p_max_w:
            raise ConfigError("quantized_powers_w", "must not exceed p_max_w")
        if not (0.0 < self.epsilon_collision < 1.0):
            raise ConfigError("epsilon_collision", "must lie in (0, 1)")
        if self.p_max_w <= 0:
            raise ConfigError("p_max_w", "must be > 0")
        if self.v_weight <= 0:
            raise ConfigError("v_weight", "must be > 0")
        if self.bandwidth_rb < 1 or not (1 <= self.alloc_rb <= self.bandwidth_rb):
            raise ConfigError("alloc_rb", "need 1 <= alloc_rb <= bandwidth_rb")
        if self.t_p_slots < 1:
            raise ConfigError("t_p_slots", "must be >= 1")
        if self.slot_duration_s <= 0:
            raise ConfigError("slot_duration_s", "must be > 0")
        if self.r_th_bps is not None and self.r_th_bps <= 0:
            raise ConfigError("r_th_bps", "must be > 0")
        if self.rate_load <= 0:
            raise ConfigError("rate_load", "must be > 0")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples", "must be >= 1")
        if self.mapping_rule not in ("relative", "literal"):
            raise ConfigError("mapping_rule", "expected relative or literal")
        if self.path_loss_model not in PATH_LOSS_MODELS:
            raise ConfigError("path_loss_model", f"expected one of {PATH_LOSS_MODELS}")
        for key in ("k1_override", "k2_override"):
            val = getattr(self, key)
            if val is not None and val < 1:
                raise ConfigError(key, "must be >= 1")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    # -- derived quantities -------------------------------------------------

    @property
    def rb_bandwidth_hz(self) -> float:
        return self.bandwidth_hz / self.bandwidth_rb

    def noise_power_w(self, n_rb: Optional[int] = None) -> float:
        """Thermal noise plus noise figure over ``n_rb`` RBs (default: allocation)."""
        n_rb = self.alloc_rb if n_rb is None else n_rb
        dbm = (
            self.noise_density_dbm_hz
            + 10.0 * math.log10(n_rb * self.rb_bandwidth_hz)
            + self.noise_figure_db
        )
        return 10.0 ** ((dbm - 30.0) / 10.0)

    def path_loss_params(self) -> dict:
        if self.path_loss_model == "power_law":
            return {"ref_db": self.pl_ref_db, "exponent": self.pl_exponent}
        return {"carrier_ghz": self.carrier_ghz, "antenna_height_eff_m": self.antenna_height_eff_m}

    def path_loss(self, distance_m):
        return path_loss(distance_m, self.path_loss_model, **self.path_loss_params())

    @property
    def l_min(self) -> float:
        """Loss at ``d_min`` (smallest loss any drawn pair can have)."""
        return float(self.path_loss(self.d_min_m))

    def amc_per_rb(self) -> AmcTable:
        if self.amc_csv:
            return AmcTable.from_csv(self.amc_csv)
        return default_amc_table(self.amc_top_rate_bps)

    def amc_table(self) -> AmcTable:
        """AMC table with rates for the whole scheduled allocation."""
        return self.amc_per_rb().scaled(self.alloc_rb)

    def throughput_threshold(self, table: Optional[AmcTable] = None) -> float:
        """R_th in bps per pair.

        Explicit ``r_th_bps`` wins; otherwise R_th is ``rate_load`` times the fair
        share ``R(gamma_th) / N`` of the allocation rate at SNR ``gamma_th``.
        """
        if self.r_th_bps is not None:
            return float(self.r_th_bps)
        table = self.amc_table() if table is None else table
        return self.rate_load * rate_at_snr_db(self.gamma_th_db, table) / self.n_pairs


# ---------------------------------------------------------------------------
# Pair drop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class D2DPair:
    id: int
    distance_m: float
    path_loss_linear: float
    tx_xy: tuple = field(default=(0.0, 0.0), compare=False)

    @property
    def path_loss_db(self) -> float:
        return float(linear_to_db(self.path_loss_linear))


def drop_pairs(cfg: ScenarioConfig, rng: np.random.Generator) -> list[D2DPair]:
    """Uniform drop of transmitters in the disc; pair distance uniform in [d_min, d_max]."""
    n = cfg.n_pairs
    radius = cfg.cell_radius_m * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    dist = rng.uniform(cfg.d_min_m, cfg.d_max_m, n)
    loss = np.atleast_1d(cfg.path_loss(dist))
    return [
        D2DPair(
            i,
            float(dist[i]),
            float(loss[i]),
            (float(radius[i] * np.cos(theta[i])), float(radius[i] * np.sin(theta[i]))),
        )
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ScenarioConfig)}

CONFIG_KEY_HELP: dict[str, str] = {
    "cell_radius_m": "cell radius [m]",
    "n_pairs": "number of D2D pairs",
    "d_min_m": "minimum pair distance [m]",
    "d_max_m": "maximum pair distance [m]",
    "bandwidth_hz": "D2D channel bandwidth [Hz]",
    "bandwidth_rb": "RBs in the D2D channel",
    "alloc_rb": "RBs granted to the scheduled pair",
    "n_rb_feedback": "RBs for CSI feedback per slot",
    "delta_shift": "PUCCH cyclic-shift spacing",
    "n_oc": "orthogonal cover codes",
    "k1_override": "force K1 (quantized CSI reports/slot)",
    "k2_override": "force K2 (indicator REs/slot)",
    "p_max_w": "maximum transmit power [W]",
    "noise_density_dbm_hz": "noise density [dBm/Hz]",
    "noise_figure_db": "receiver noise figure [dB]",
    "r_th_bps": "throughput threshold [bps]; empty derives it from gamma_th_db",
    "gamma_th_db": "SNR threshold defining R_th [dB]",
    "rate_load": "R_th as a fraction of the fair share R(gamma_th)/N",
    "t_p_slots": "period T_p [slots]",
    "slot_duration_s": "slot duration [s]",
    "epsilon_collision": "target collision probability",
    "quantized_powers_w": "reported power grid [W], comma separated",
    "v_weight": "Lyapunov weight V [bps^2/W]",
    "mc_samples": "fading samples for centralized subset estimation",
    "mapping_rule": "indicator map refinement after a collision: relative | literal",
    "path_loss_model": "winner_b1 | power_law",
    "carrier_ghz": "carrier frequency [GHz]",
    "antenna_height_eff_m": "effective antenna height [m] (winner_b1)",
    "pl_ref_db": "loss at 1 m [dB] (power_law)",
    "pl_exponent": "distance exponent (power_law)",
    "amc_top_rate_bps": "AMC rate at the top threshold [bps/RB]",
    "amc_csv": "AMC override CSV (snr_db,rate_bps per RB)",
    "tune_snr_db": "SNR threshold S for V(eps) [dB]",
    "tune_rate": "rate R for V(eps) [kbps/RB]",
    "tune_r_th": "throughput threshold for V(eps) [kbps/RB]",
    "seed": "base random seed",
}


def _coerce(key: str, raw: str):
    f = _FIELD_TYPES[key]
    default = f.default
    text = raw.strip()
    try:
        if key == "quantized_powers_w":
            return tuple(float(x) for x in text.split(",") if x.strip())
        if default is None or key in ("r_th_bps", "k1_override", "k2_override", "amc_csv"):
            if text == "" or text.lower() == "none":
                return None
            if key == "amc_csv":
                return text
            return int(text) if key.startswith("k") else float(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}") from exc


def parse_overrides(pairs) -> dict:
    """Turn ``["key=value", ...]`` into a typed dict, rejecting unknown keys."""
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(item, "expected key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown config key")
        out[key] = _coerce(key, value)
    return out


def read_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown config key")
        values[key] = _coerce(key, value)
    return values


def load_config(path=None, overrides=None) -> ScenarioConfig:
    values = read_config_file(path) if path else {}
    values.update(overrides or {})
    try:
        return ScenarioConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from exc


def dump_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if val is None:
            text = ""
        elif isinstance(val, tuple):
            text = ",".join(repr(float(x)) for x in val)
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def key_help_lines() -> list[str]:
    return [f"  {k:<22} {CONFIG_KEY_HELP.get(k, '')}" for k in _FIELD_TYPES]

