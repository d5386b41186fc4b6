#!/usr/bin/env python3
"""Voxel bodies: validity checking, repair, GA mutation, diffs, and tiling.

Run:  python3 demos/01_bodies_and_validity.py
"""

import numpy as np

from morphoskill.voxelbody import (
    Body,
    Unrepairable,
    check_validity,
    diff,
    ga_mutate,
    repair,
    upsample_tiling,
)

print("=== A hand-built walker body (0 empty, 1 rigid, 2 soft, 3/4 actuators) ===")
cells = np.zeros((5, 5), dtype=int)
cells[3, :] = 1          # rigid beam
cells[4, 0] = 3          # actuator legs
cells[4, 2] = 3
cells[4, 4] = 3
walker = Body(cells)
print(walker.render())
report = check_validity(walker)
print(f"valid={report.is_valid} connected={report.connected} "
      f"actuators={report.has_actuator} components={report.component_count}")

print("\n=== A broken proposal: stray voxel + an illegal code ===")
bad = np.array(walker.cells)
bad[0, 0] = 1    # floats disconnected above the body
bad[2, 0] = 5    # environment-only code, never legal inside a robot
broken = Body(bad)
report = check_validity(broken)
print(broken.render())
print(f"valid={report.is_valid} legal_codes={report.legal_codes} "
      f"components={report.component_count} "
      f"largest_fraction={report.largest_component_fraction:.2f}")

fixed = repair(broken)
print("\nafter repair (illegal code cleared, stray erased):")
print(fixed.render())
print(f"valid={check_validity(fixed).is_valid}")

print("\n=== Repairs never manufacture structure ===")
no_actuator = np.zeros((5, 5), dtype=int)
no_actuator[2, 1:4] = 1
try:
    repair(Body(no_actuator))
except Unrepairable as exc:
    print(f"body without actuators is Unrepairable: {exc}")

print("\n=== GA mutation: per-voxel resampling, always valid, seed-deterministic ===")
child_a = ga_mutate(walker, rng_seed=42, per_voxel_rate=0.15)
child_b = ga_mutate(walker, rng_seed=42, per_voxel_rate=0.15)
print(child_a.render())
print(f"same seed, identical children: {child_a == child_b}")
edits = diff(walker, child_a)
print(f"voxel diff vs parent: count={edits.count} edits={list(edits.edits)}")

print("\n=== Cross-scale tiling: 5x5 -> 10x10 via 2x2 blocks ===")
tiled = upsample_tiling(walker, 2)
print(tiled.render())
print(f"tiled body stays valid: {check_validity(tiled).is_valid}")
