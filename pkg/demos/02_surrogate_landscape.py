#!/usr/bin/env python3
"""The built-in surrogate landscape: motif features, task profiles, and the
properties the test-suite pins (golden constants, tiling invariance,
support monotonicity).

Run:  python3 demos/02_surrogate_landscape.py
"""

import numpy as np

from morphoskill.evaluation import (
    TASK_PROFILES,
    body_features,
    surrogate_fitness,
)
from morphoskill.voxelbody import Body, upsample_tiling

print("=== Feature vector of a one-voxel body (the golden-constant case) ===")
speck = Body([[3]])
for name, value in body_features(speck).items():
    print(f"  {name:<18} {value:.4f}")
for profile in sorted(TASK_PROFILES):
    print(f"  {profile:<14} fitness = {surrogate_fitness(speck, profile):.4f}")

print("\n=== A supported walker vs the same body without rigid bracing ===")
braced = np.zeros((5, 5), dtype=int)
braced[4, :] = (1, 3, 3, 3, 1)
braced[3, 1:4] = 1
unbraced = np.array(braced)
unbraced[3, 1:4] = 2  # soft instead of rigid above the actuators
for label, cells in (("braced", braced), ("unbraced", unbraced)):
    body = Body(cells)
    feats = body_features(body)
    print(f"{label}: rigid_support={feats['rigid_support']:.2f} "
          f"walker_like={surrogate_fitness(body, 'walker_like'):.4f}")

print("\n=== Tiling invariance under the scale-invariant profile ===")
body = Body(braced)
tiled = upsample_tiling(body, 2)
for profile in ("pusher_like", "walker_like"):
    a = surrogate_fitness(body, profile)
    b = surrogate_fitness(tiled, profile)
    flag = "invariant" if abs(a - b) < 1e-12 else "changes (rigid_support is local)"
    print(f"  {profile:<12} 5x5={a:.4f} 10x10={b:.4f}  -> {flag}")
