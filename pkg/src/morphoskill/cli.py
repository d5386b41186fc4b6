"""Command-line operator surface: launch runs and transfers, resume, report,
inspect libraries, and run one-off evaluations or upsamplings.

Exit codes: 0 success, 2 configuration/parse error, 3 backend or evaluator
unavailable, 4 missing source library, 5 library schema violation.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
from pathlib import Path

from morphoskill import metrics
from morphoskill.evaluation import (
    EvaluatorUnavailable,
    ExternalEvaluator,
    SurrogateEvaluator,
    surrogate_fitness,
    profile_for_task,
    TASK_PROFILES,
)
from morphoskill.heuristic import HeuristicBackend
from morphoskill.llm_gateway import (
    BackendUnavailable,
    LlmGateway,
    RemoteBackend,
    ScriptedBackend,
    parse_merge,
)
from morphoskill.orchestrator import (
    ConfigInvalid,
    RunConfig,
    SearchOrchestrator,
    SourceLibraryMissing,
    update_elites,
)
from morphoskill.skill_library import (
    SchemaViolation,
    SkillLibrary,
    import_for_transfer,
    skill_weight,
)
from morphoskill.voxelbody import Body, check_validity, upsample_tiling

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_SOURCE = 4
EXIT_SCHEMA = 5


def _build_backend(spec: str, seed: int):
    if spec == "heuristic":
        return HeuristicBackend(seed=seed)
    if spec.startswith("scripted:"):
        return ScriptedBackend(spec.split(":", 1)[1])
    if spec.startswith("remote:"):
        return RemoteBackend(
            base_url=spec.split(":", 1)[1],
            api_key=os.environ.get("MORPHOSKILL_API_KEY"),
        )
    raise ConfigInvalid(f"unknown backend {spec!r}")


def _build_evaluator(spec: str, profile: str | None):
    if spec == "surrogate":
        return SurrogateEvaluator(profile)
    if spec.startswith("external:tcp:"):
        _, _, host, port = spec.split(":", 3)
        return ExternalEvaluator.connect(host, int(port))
    if spec.startswith("external:cmd:"):
        return ExternalEvaluator.spawn(shlex.split(spec.split(":", 2)[2]))
    raise ConfigInvalid(f"unknown evaluator {spec!r}")


def _load_body_file(path: Path) -> Body:
    doc = json.loads(path.read_text())
    rows = doc.get("body") if isinstance(doc, dict) else doc
    try:
        return Body(rows)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path} does not hold an n x n integer matrix: {exc}") from exc


def _config_from_args(args) -> RunConfig:
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
    for key in ("task", "scale", "budget", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "no_diagnose", False):
        overrides["no_diagnose"] = True
    if getattr(args, "no_merge", False):
        overrides["no_merge"] = True
    if getattr(args, "pure_llm", False):
        overrides["pure_llm"] = True
    if getattr(args, "no_l2l3", False):
        overrides["no_l2_l3"] = True
    return RunConfig.from_json(overrides)


def _write_run_summary(run_dir: Path, baseline_dir: Path | None):
    """(Re)generate summary.csv for a run, optionally against a GA baseline."""
    curve = metrics.curve_from_csv((run_dir / "curve.csv").read_text())
    if baseline_dir is not None:
        base = metrics.curve_from_csv((baseline_dir / "curve.csv").read_text())
        budget = max(curve.budget, base.budget)
        curve = metrics.FitnessCurve(points=curve.points, budget=budget)
        base = metrics.FitnessCurve(points=base.points, budget=budget)
        config = json.loads((run_dir / "config.snapshot").read_text())
        summary = metrics.compare(config.get("task", "?"), curve, base)
        files = metrics.render_report([summary])
    else:
        config = json.loads((run_dir / "config.snapshot").read_text())
        header = "task,ga,ar,delta,speedup,lead_fraction\n"
        row = f"{config.get('task', '?')},,{curve.final!r},,,\n"
        files = {"summary.csv": header + row}
    for name, text in files.items():
        (run_dir / name).write_text(text)


def _execute_run(config: RunConfig, args, source_library=None, source_elites=None,
                 source_scale=None, provenance=None) -> int:
    backend = _build_backend(args.backend, config.master_seed)
    profile = getattr(args, "profile", None)
    evaluator = _build_evaluator(args.evaluator, profile)
    run_dir = Path(args.out)
    orch = SearchOrchestrator(
        config, backend, evaluator, run_dir=run_dir,
        source_library=source_library, source_elites=source_elites,
        source_scale=source_scale,
    )
    orch.run()
    if provenance:
        snapshot = json.loads((run_dir / "config.snapshot").read_text())
        snapshot["provenance"] = provenance
        (run_dir / "config.snapshot").write_text(
            json.dumps(snapshot, indent=2, sort_keys=True)
        )
    _write_run_summary(run_dir, None)
    best = orch.best_design()
    print(f"run complete: {orch.evals_used} evaluations, best fitness {best.fitness:.4f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    return _execute_run(_config_from_args(args), args)


def cmd_transfer(args) -> int:
    source_dir = Path(args.source_run_dir)
    library_path = source_dir / "library.json"
    if not library_path.exists():
        raise SourceLibraryMissing(f"no library.json in {source_dir}")
    source_library = SkillLibrary.load(library_path)

    source_config = {}
    snapshot = source_dir / "config.snapshot"
    if snapshot.exists():
        source_config = json.loads(snapshot.read_text())
    source_scale = source_config.get("scale", source_library.scale)

    config = _config_from_args(args)
    config.mode = "transfer_with_ref" if args.with_ref else "transfer_skill_only"

    source_elites = None
    if args.with_ref:
        source_elites = []
        state_path = source_dir / "state.json"
        if state_path.exists():
            state = json.loads(state_path.read_text())
            designs = [
                (Body(d["body"]), float(d["fitness"])) for d in state["population"]
            ]
            designs.sort(key=lambda bf: -bf[1])
            source_elites = designs[: config.static_elite_pool]
        elif (source_dir / "best_body.json").exists():
            doc = json.loads((source_dir / "best_body.json").read_text())
            source_elites = [(Body(doc["body"]), float(doc["fitness"]))]

    provenance = {"source_run": str(source_dir), "source_scale": source_scale}
    return _execute_run(
        config, args, source_library=source_library,
        source_elites=source_elites, source_scale=source_scale,
        provenance=provenance,
    )


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    config = RunConfig.from_json(json.loads((run_dir / "config.snapshot").read_text()))
    state = json.loads((run_dir / "state.json").read_text())
    backend = _build_backend(args.backend, config.master_seed)
    evaluator = _build_evaluator(args.evaluator, getattr(args, "profile", None))
    orch = SearchOrchestrator(config, backend, evaluator, run_dir=run_dir)
    orch.restore_state(state)
    while orch.evals_used < config.budget:
        orch.run_generation()
    orch.write_artifacts()
    _write_run_summary(run_dir, None)
    print(f"resumed run complete: {orch.evals_used} evaluations")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    baseline = Path(args.baseline) if args.baseline else None
    _write_run_summary(run_dir, baseline)
    print((run_dir / "summary.csv").read_text(), end="")
    summary_txt = run_dir / "summary.txt"
    if summary_txt.exists():
        print(summary_txt.read_text(), end="")
    return EXIT_OK


def cmd_library(args) -> int:
    library = SkillLibrary.load(args.library_path)
    if args.action == "inspect":
        print(f"library: task={library.task} scale={library.scale}")
        header = f"{'skill_id':<28} {'l1':<10} {'pos':>4} {'neg':>4} {'n_s':>5} {'weight':>7}"
        print(header)
        for skill in library.skills:
            print(
                f"{skill.skill_id:<28} {skill.l1_structure:<10} "
                f"{len(skill.l2_positive):>4} {len(skill.l2_negative):>4} "
                f"{len(skill.l3_observations):>5} "
                f"{skill_weight(skill, 2.0):>7.4f}"
            )
        total_pos = sum(len(s.l2_positive) for s in library.skills)
        total_neg = sum(len(s.l2_negative) for s in library.skills)
        print(
            f"totals: {len(library.skills)} / {total_pos} / {total_neg} "
            f"(skills / positive leaves / negative leaves)"
        )
        print(f"unassigned pool: {len(library.unassigned_pool)} observations")
        return EXIT_OK
    if args.action == "merge-dry-run":
        backend = _build_backend(args.backend, 0)
        gateway = LlmGateway(backend)
        skills_meta = [
            {"skill_id": s.skill_id, "l1_structure": s.l1_structure,
             "l1_condition": s.l1_condition}
            for s in library.skills
        ]
        lines = [
            f"skill_id={s.skill_id} l1.structure={s.l1_structure} "
            f"l1.condition={s.l1_condition}"
            for s in library.skills
        ]
        request, response = gateway.call(
            "merge",
            {"skills_full_content": "\n".join(lines), "_skills": skills_meta},
            generation=0,
        )
        print(request.rendered_text)
        outcome = parse_merge(response, set(library.skill_ids()))
        print("\nproposed clusters (not applied):")
        if not outcome.value:
            print("  (none)")
        for cluster in outcome.value:
            print(f"  {cluster.group_label}: {', '.join(cluster.skill_ids)} -- {cluster.reason}")
        return EXIT_OK
    if args.action == "export":
        out = Path(args.out) if args.out else Path(str(args.library_path) + ".export.json")
        import_for_transfer(library).save(out)
        print(f"transfer-ready library written to {out}")
        return EXIT_OK
    raise ConfigInvalid(f"unknown library action {args.action!r}")


def cmd_evaluate(args) -> int:
    body = _load_body_file(Path(args.body_path))
    report = check_validity(body)
    if not report.is_valid:
        print(f"body is invalid: {report}")
        return EXIT_CONFIG
    profile = args.profile or profile_for_task(args.task or "Walker-v0")
    fitness = surrogate_fitness(body, profile)
    print(f"profile={profile} fitness={fitness:.6f}")
    return EXIT_OK


def cmd_upsample(args) -> int:
    body = _load_body_file(Path(args.body_path))
    tiled = upsample_tiling(body, args.factor)
    out = Path(args.out) if args.out else Path(str(args.body_path) + f".x{args.factor}.json")
    out.write_text(json.dumps(tiled.to_rows()))
    for name, b in (("source", body), ("tiled", tiled)):
        rep = check_validity(b)
        print(
            f"{name}: size={b.size} valid={rep.is_valid} connected={rep.connected} "
            f"actuator={rep.has_actuator} components={rep.component_count}"
        )
    print(f"tiled body written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphoskill",
        description="Morphology search with a persistent skill library.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_run_flags(p, default_mode=None):
        p.add_argument("--task", default=None)
        p.add_argument("--scale", type=int, default=None)
        p.add_argument("--budget", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--evaluator", default="surrogate",
                       help="surrogate | external:tcp:HOST:PORT | external:cmd:CMD")
        p.add_argument("--backend", default="heuristic",
                       help="heuristic | scripted:DIR | remote:BASE_URL")
        p.add_argument("--profile", default=None, choices=sorted(TASK_PROFILES))
        p.add_argument("--no-diagnose", action="store_true", dest="no_diagnose")
        p.add_argument("--no-merge", action="store_true", dest="no_merge")
        p.add_argument("--pure-llm", action="store_true", dest="pure_llm")
        p.add_argument("--no-l2l3", action="store_true", dest="no_l2l3")
        if default_mode is None:
            p.add_argument("--mode", default=None,
                           choices=["cold_start", "ga_only"])

    p_run = sub.add_parser("run", help="launch a search run")
    add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_transfer = sub.add_parser("transfer", help="warm-start from a source run")
    p_transfer.add_argument("source_run_dir")
    group = p_transfer.add_mutually_exclusive_group(required=True)
    group.add_argument("--with-ref", action="store_true", dest="with_ref")
    group.add_argument("--skill-only", action="store_false", dest="with_ref")
    add_run_flags(p_transfer, default_mode="transfer")
    p_transfer.set_defaults(func=cmd_transfer)

    p_resume = sub.add_parser("resume", help="continue an interrupted run")
    p_resume.add_argument("run_dir")
    p_resume.add_argument("--evaluator", default="surrogate")
    p_resume.add_argument("--backend", default="heuristic")
    p_resume.add_argument("--profile", default=None, choices=sorted(TASK_PROFILES))
    p_resume.set_defaults(func=cmd_resume)

    p_report = sub.add_parser("report", help="regenerate summary files for a run")
    p_report.add_argument("run_dir")
    p_report.add_argument("--baseline", default=None,
                          help="baseline (GA) run directory for comparison metrics")
    p_report.set_defaults(func=cmd_report)

    p_library = sub.add_parser("library", help="inspect or export a skill library")
    p_library.add_argument("action", choices=["inspect", "merge-dry-run", "export"])
    p_library.add_argument("library_path")
    p_library.add_argument("--backend", default="heuristic")
    p_library.add_argument("--out", default=None)
    p_library.set_defaults(func=cmd_library)

    p_eval = sub.add_parser("evaluate", help="score a body file with the surrogate")
    p_eval.add_argument("body_path")
    p_eval.add_argument("--task", default=None)
    p_eval.add_argument("--profile", default=None, choices=sorted(TASK_PROFILES))
    p_eval.set_defaults(func=cmd_evaluate)

    p_up = sub.add_parser("upsample", help="tile a body to a larger grid")
    p_up.add_argument("body_path")
    p_up.add_argument("factor", type=int)
    p_up.add_argument("--out", default=None)
    p_up.set_defaults(func=cmd_upsample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SchemaViolation as exc:
        print(f"error: schema violation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SourceLibraryMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except (BackendUnavailable, EvaluatorUnavailable) as exc:
        print(f"error: backend/evaluator unavailable: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigInvalid, json.JSONDecodeError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
