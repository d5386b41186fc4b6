#!/usr/bin/env python3
"""The three-level skill memory: archetypes, rule leaves with running gain
statistics, observation evidence, and the maintenance operations.

Run:  python3 demos/03_skill_library.py
"""

import numpy as np

from morphoskill.skill_library import (
    AddDecision,
    AttributionDecision,
    LeafAssignment,
    MergeCluster,
    Observation,
    SkillLibrary,
    apply_add,
    apply_attribution,
    apply_diagnose,
    apply_merge,
    import_for_transfer,
    sample_skill,
    skill_weight,
)
from morphoskill.voxelbody import Body, random_valid_body

rng = np.random.default_rng(0)
library = SkillLibrary(task="Walker-v0", scale=5)


def observe(gain):
    return Observation(
        obs_id=library.new_pool_obs_id(),
        child_body=random_valid_body(5, rng),
        parent_body=random_valid_body(5, rng),
        task="Walker-v0", scale=5,
        fitness=5.0 + gain, gain=gain,
    )


print("=== Add: a new archetype is born with empty rules and evidence ===")
apply_add(library, library.unassigned_pool, AddDecision(
    action="add", skill_id="portal_frame", task_family=("Walker-v0",),
    l1_structure="frame",
    l1_condition="a rigid load-bearing arch wrapped around central actuators",
))
apply_add(library, library.unassigned_pool, AddDecision(
    action="add", skill_id="lower_bridge", task_family=("Walker-v0",),
    l1_structure="bridge",
    l1_condition="a connected band of material along the ground line for stable contact",
))
for skill in library.skills:
    print(f"  {skill.skill_id}: weight={skill_weight(skill, 2.0):.4f} "
          f"(no evidence yet -> 0.5)")

print("\n=== Attribute: evaluated children route to one skill or the pool ===")
batch = [observe(g) for g in (1.8, 0.4, -0.9, 2.6)]
decisions = [
    AttributionDecision(batch[0].obs_id, "portal_frame"),
    AttributionDecision(batch[1].obs_id, "portal_frame"),
    AttributionDecision(batch[2].obs_id, "lower_bridge"),
    AttributionDecision(batch[3].obs_id, None),  # no clear match
]
apply_attribution(library, batch, decisions)
for skill in library.skills:
    print(f"  {skill.skill_id}: n_obs={len(skill.l3_observations)} "
          f"weight={skill_weight(skill, 2.0):.4f}")
print(f"  unassigned pool: {len(library.unassigned_pool)}")

print("\n=== Diagnose: observations distill into positive/negative leaves ===")
portal = library.get_skill("portal_frame")
apply_diagnose(portal, [
    LeafAssignment(portal.l3_observations[0].obs_id, "new_leaf", polarity="positive",
                   claim="braced_actuator_column",
                   description="rigid side material bracing the central actuator column"),
    LeafAssignment(portal.l3_observations[1].obs_id, "match_existing", leaf_id="pos_0"),
])
leaf = portal.l2_positive[0]
print(f"  {leaf.leaf_id} [{leaf.polarity}] {leaf.claim}: "
      f"support={leaf.support_count} mean_gain={leaf.mean_gain:+.3f}")

print("\n=== Coordinate leakage is rejected (downgraded to no_leaf) ===")
bridge = library.get_skill("lower_bridge")
outcome = apply_diagnose(bridge, [
    LeafAssignment(bridge.l3_observations[0].obs_id, "new_leaf", polarity="negative",
                   claim="weak_corner",
                   description="the voxel at (4,0) buckles under load"),
])
print(f"  downgrades: {outcome.coordinate_downgrades} "
      f"(leaves: {len(bridge.leaves())})")

print("\n=== Evidence-weighted sampling prefers better-supported skills ===")
counts = {s.skill_id: 0 for s in library.skills}
for seed in range(2000):
    counts[sample_skill(library.skills, 2.0, seed).skill_id] += 1
for sid, n in counts.items():
    w = skill_weight(library.get_skill(sid), 2.0)
    print(f"  {sid}: weight={w:.4f} sampled {n / 2000:.1%}")

print("\n=== Merge: duplicates collapse, evidence is conserved ===")
total_before = library.total_observations()
apply_merge(library, [MergeCluster("arch_family", ("portal_frame", "lower_bridge"))])
merged = library.skills[0]
print(f"  merged -> {merged.skill_id}: obs={len(merged.l3_observations)} "
      f"(before: {total_before}), leaves={len(merged.leaves())}")

print("\n=== Transfer export: keep the rules, drop the raw evidence ===")
exported = import_for_transfer(library, target_task="Walker-v0-10x10", target_scale=10)
skill = exported.skills[0]
print(f"  {skill.skill_id}: imported={skill.imported} obs={len(skill.l3_observations)} "
      f"leaves={len(skill.leaves())} weight={skill_weight(skill, 2.0):.4f}")
