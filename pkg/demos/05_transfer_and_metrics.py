#!/usr/bin/env python3
"""Cross-scale transfer and the comparison metrics: learn a 5x5 library,
import it (observation-stripped) into a 10x10 run with reference designs,
and compare against the GA baseline with speedup and lead fraction.

Run:  python3 demos/05_transfer_and_metrics.py
"""

import tempfile
from pathlib import Path

from morphoskill.evaluation import SurrogateEvaluator
from morphoskill.heuristic import HeuristicBackend
from morphoskill.metrics import FitnessCurve, compare, render_report
from morphoskill.orchestrator import RunConfig, SearchOrchestrator, update_elites

root = Path(tempfile.mkdtemp(prefix="morphoskill_transfer_"))


def run(name, **kw):
    config = RunConfig(master_seed=13, **kw)
    orch = SearchOrchestrator(
        config, HeuristicBackend(seed=13), SurrogateEvaluator("walker_like"),
        run_dir=root / name,
    )
    orch.run()
    return orch


print("=== Stage 1: cold-start source run at 5x5 ===")
source = run("source", task="Walker-v0", scale=5, budget=150)
print(f"source best: {source.best_curve[-1][1]:.4f}, "
      f"skills: {', '.join(source.library.skill_ids()) or '(none)'}")

print("\n=== Stage 2: 10x10 transfer run (with reference designs) vs GA ===")
elites = [(d.body, d.fitness) for d in update_elites(source.population, 5)]
transfer_cfg = RunConfig(task="Walker-v0", scale=10, budget=250, master_seed=13,
                         mode="transfer_with_ref")
transfer = SearchOrchestrator(
    transfer_cfg, HeuristicBackend(seed=13), SurrogateEvaluator("walker_like"),
    run_dir=root / "transfer", source_library=source.library,
    source_elites=elites, source_scale=5,
)
transfer.run()

ga_cfg = RunConfig(task="Walker-v0", scale=10, budget=250, master_seed=13,
                   mode="ga_only")
ga = SearchOrchestrator(
    ga_cfg, HeuristicBackend(seed=13), SurrogateEvaluator("walker_like"),
    run_dir=root / "ga",
)
ga.run()

print(f"transfer best: {transfer.best_curve[-1][1]:.4f}   "
      f"GA best: {ga.best_curve[-1][1]:.4f}")

print("\n=== Stage 3: convergence comparison ===")
curve_a = FitnessCurve(points=tuple(transfer.best_curve), budget=250)
curve_g = FitnessCurve(points=tuple(ga.best_curve), budget=250)
summary = compare("Walker-10x10", curve_a, curve_g)
report = render_report([summary], curves={"transfer": curve_a, "ga": curve_g})
print(report["summary.txt"])
print(f"speedup S: how much earlier the transfer run reaches the GA endpoint")
print(f"lead fraction L: share of the budget where it is strictly ahead")
print(f"\nrun directories under {root}")
