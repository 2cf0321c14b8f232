"""
Truncated alpha-stable increments
=================================

Jumps larger than ``c`` never happen, so every increment has finite variance
``dt * Ctilde`` with ``Ctilde = 2 C_alpha c^(2-alpha) / (2-alpha)``. This script
draws increments for a few stability indices and compares the empirical
variance with that formula.
"""
import numpy as np

from levykoop import LevySpec, levy_second_moment
from levykoop.stoch_sim import _levy_parts

dt, n = 0.01, 10**6
rng = np.random.default_rng(0)

print(f"{'alpha':>6} {'var':>10} {'dt*Ctilde':>10} {'jumps':>8} {'max|jump|':>10}")
for alpha in (0.5, 1.0, 1.5):
    spec = LevySpec(alpha, c=1.0)
    inc, jumps = _levy_parts(spec, dt, n, rng)
    print(f"{alpha:6.1f} {inc.var():10.6f} {dt * levy_second_moment(alpha, 1.0):10.6f} "
          f"{jumps.size:8d} {np.abs(jumps).max():10.6f}")

# Smaller alpha means fewer but heavier jumps; the variance stays bounded since
# the measure is cut at |y| = c.
