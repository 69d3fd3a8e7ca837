"""Exact overall-collision probability against direct simulation.

    python3 demos/collision_check.py

Draws a few small single-rate instances, prints the exact value, the
product-form approximation and a Monte-Carlo estimate with its stderr.
"""

import numpy as np

from d2dsched import collision as col

rng = np.random.default_rng(11)
print(f"{'N':>2} {'K':>2} {'exact':>8} {'product':>8} {'MC':>8} {'stderr':>8}")
for n, k in [(2, 2), (3, 4), (4, 3), (5, 8), (6, 6)]:
    losses = 10 ** rng.uniform(6, 8, n)
    q = rng.uniform(0, 1e6, n)
    scale = 1e15 * 10.0 * 1e-14 * losses
    v = (scale / rng.exponential(1.0, (4000, n)) - q * 1e6).ravel()
    levels = np.unique(np.quantile(v, np.sort(rng.uniform(0.05, 0.9, k))))
    inp = col.CollisionModelInput(1e15, 10.0, 1e6, 1e-14, losses, q, levels)
    est, se = col.mc_collision_oracle(inp, 200_000, rng)
    print(
        f"{n:>2} {inp.k2:>2} {col.collision_probability(inp):>8.4f}"
        f" {col.collision_probability_product(inp):>8.4f} {est:>8.4f} {se:>8.4f}"
    )
