#!/usr/bin/env python3
"""A complete offline search run: heuristic proposal backend + surrogate
evaluator, skill-conditioned Path A slots alongside GA Path B slots, and
per-generation library maintenance.

Run:  python3 demos/04_search_run.py
"""

import tempfile
from pathlib import Path

from morphoskill.evaluation import SurrogateEvaluator
from morphoskill.heuristic import HeuristicBackend
from morphoskill.orchestrator import RunConfig, SearchOrchestrator
from morphoskill.skill_library import skill_weight

run_dir = Path(tempfile.mkdtemp(prefix="morphoskill_demo_"))
config = RunConfig(task="Walker-v0", scale=5, budget=150, master_seed=7)
orchestrator = SearchOrchestrator(
    config,
    backend=HeuristicBackend(seed=7),
    evaluator=SurrogateEvaluator("walker_like"),
    run_dir=run_dir,
)

print(f"=== Running: task={config.task} budget={config.budget} "
      f"slots={config.path_a_slots}A+{config.path_b_slots}B ===")
orchestrator.initialize()
print(f"gen 0 (cold start): {orchestrator.evals_used} evals, "
      f"best={orchestrator.best_curve[-1][1]:.4f}")

while orchestrator.evals_used < config.budget:
    record = orchestrator.run_generation()
    paths = [s["path"] for s in record["slots"]]
    m = record["maintenance"]
    print(f"gen {record['generation']}: best={orchestrator.best_curve[-1][1]:.4f} "
          f"A={paths.count('A')} B={paths.count('B')} "
          f"attributed={m['attributed']} pooled={m['pooled']} "
          f"add={m['add'] or '-'} merged={m['merged'] or '-'}")
orchestrator.write_artifacts()

print("\n=== Learned library ===")
for skill in orchestrator.library.skills:
    print(f"  {skill.skill_id} [{skill.l1_structure}] "
          f"weight={skill_weight(skill, config.delta_max):.4f} "
          f"obs={len(skill.l3_observations)} "
          f"pos={len(skill.l2_positive)} neg={len(skill.l2_negative)}")
    for leaf in skill.leaves():
        print(f"      {leaf.leaf_id} [{leaf.polarity}] {leaf.claim} "
              f"(m={leaf.support_count}, avg_gain={leaf.mean_gain:+.3f})")

best = orchestrator.best_design()
print(f"\n=== Best body (fitness {best.fitness:.4f}, eval #{best.design_id}) ===")
print(best.body.render())
print(f"\nartifacts written to {run_dir}")
