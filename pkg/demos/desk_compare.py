"""Short desk-scale policy comparison printed as a table.

    python3 demos/desk_compare.py [slots] [realizations]

Uses configs/desk.cfg. The acceptance suite runs the same comparison with
20000 slots and 10 realizations.
"""

import sys
from pathlib import Path

from d2dsched.engine import EngineConfig, compare_policies
from d2dsched.scenario import load_config

root = Path(__file__).resolve().parents[1]
slots = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
reals = int(sys.argv[2]) if len(sys.argv) > 2 else 3

cfg = load_config(root / "configs" / "desk.cfg")
ec = EngineConfig(slots=slots, realizations=reals)
_, rows = compare_policies(cfg, ec, [cfg.gamma_th_db])

print(f"{'policy':<12} {'power [mW]':>11} {'+-':>7} {'vs RR':>7} {'min R/Rth':>9} {'lost slots':>10}")
for r in rows:
    print(
        f"{r['policy']:<12} {1e3 * r['avg_power_w_mean']:>11.3f} {1e3 * r['avg_power_w_ci95']:>7.3f}"
        f" {r['ec_reduction_vs_rr_pct']:>6.1f}% {r['min_rate_ratio']:>9.3f} {r['collision_rate_mean']:>10.3f}"
    )
