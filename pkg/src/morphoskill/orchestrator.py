"""The generation loop: elite-pool parenting, skill-conditioned and GA
proposal slots, budget accounting, and per-generation library maintenance.

One orchestrator thread owns the run state. Each generation proposes
children (Path A: skill-conditioned backend edits of elite parents; Path B:
GA mutation), gates them for validity, evaluates the batch, then rewrites
the library: attribute -> pool-pressure re-attribution -> add -> diagnose
-> merge. Ablation switches skip or blind individual steps.

Named RNG streams keep proposal paths independent: changing the Path A slot
count never changes the Path B mutation sequence.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from morphoskill import prompt_templates
from morphoskill.evaluation import EvalRequest, evaluate_batch
from morphoskill.llm_gateway import (
    BackendResponse,
    LlmGateway,
    ProposeContext,
    SlotPlan,
    attribution_decisions,
    parse_add,
    parse_attribute,
    parse_diagnose,
    parse_merge,
    parse_propose,
)
from morphoskill.skill_library import (
    AttributionDecision,
    LeafAssignment,
    Observation,
    SkillLibrary,
    apply_add,
    apply_attribution,
    apply_diagnose,
    apply_merge,
    import_for_transfer,
    pool_pressure,
    retrieve,
    sample_skill,
)
from morphoskill.voxelbody import (
    Body,
    MutationExhausted,
    diff,
    ga_mutate,
    random_valid_body,
)

MODES = ("cold_start", "transfer_with_ref", "transfer_skill_only", "ga_only")

TASK_DESCRIPTIONS = {
    "Walker-v0": "Travel as far as possible over flat ground.",
    "BridgeWalker-v0": "Cross a flexible rope bridge without falling.",
    "Balancer-v0": "Stay balanced on top of a narrow beam.",
    "Carrier-v0": "Carry an object forward without dropping it.",
    "Climber-v0": "Climb as high as possible between vertical walls.",
    "Jumper-v0": "Jump as high as possible in place.",
    "Pusher-v0": "Push an object as far forward as possible.",
}

_STREAM_IDS = {"init": 0, "path_b": 1, "sampling": 2, "eval_seeds": 3, "fallback": 4}


class ConfigInvalid(ValueError):
    pass


class SourceLibraryMissing(FileNotFoundError):
    pass


class BudgetExhausted(RuntimeError):
    pass


def default_mutation_range(scale: int) -> tuple:
    return (1, 3) if scale <= 5 else (1, 10)


@dataclass
class RunConfig:
    task: str = "Walker-v0"
    scale: int = 5
    budget: int = 250
    generation_size: int = 25
    path_a_slots: int = 15
    path_b_slots: int = 10
    elite_pool_k: int = 5
    mutation_range: tuple | None = None
    delta_max: float = 2.0
    pool_threshold: int = 30
    prior_only_generations: int = 5
    static_elite_pool: int = 5
    mode: str = "cold_start"
    no_diagnose: bool = False
    no_merge: bool = False
    pure_llm: bool = False
    no_l2_l3: bool = False
    master_seed: int = 0
    ga_mutation_rate: float = 0.1
    ga_survivor_rate: float = 0.5  # truncation survival for the GA baseline
    task_desc: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalid(f"unknown mode {self.mode!r}")
        if self.pure_llm:
            self.path_a_slots = self.generation_size
            self.path_b_slots = 0
        if self.mode == "ga_only":
            self.path_a_slots = 0
            self.path_b_slots = self.generation_size
        if self.path_a_slots + self.path_b_slots != self.generation_size:
            raise ConfigInvalid(
                f"path_a_slots + path_b_slots must equal generation_size "
                f"({self.path_a_slots} + {self.path_b_slots} != {self.generation_size})"
            )
        if self.budget < 1 or self.generation_size < 1 or self.elite_pool_k < 1:
            raise ConfigInvalid("budget, generation_size, elite_pool_k must be positive")
        if self.mutation_range is None:
            self.mutation_range = default_mutation_range(self.scale)
        self.mutation_range = tuple(self.mutation_range)
        if not self.task_desc:
            base = self.task.replace("-10x10", "")
            self.task_desc = TASK_DESCRIPTIONS.get(base, f"Perform the {self.task} task.")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class DesignRecord:
    design_id: int  # 1-based eval index
    body: Body
    fitness: float
    parent_id: int | None
    generation: int

    def to_json(self) -> dict:
        return {
            "design_id": self.design_id,
            "body": self.body.to_rows(),
            "fitness": self.fitness,
            "parent_id": self.parent_id,
            "generation": self.generation,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DesignRecord":
        return cls(d["design_id"], Body(d["body"]), d["fitness"], d["parent_id"], d["generation"])


def update_elites(population, k: int) -> list:
    """Top-k designs by fitness; ties keep the earlier eval index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sorted(population, key=lambda d: (-d.fitness, d.design_id))[:k]


@dataclass
class _Slot:
    slot_index: int
    path: str  # "init" | "A" | "B"
    parent: DesignRecord | None = None
    skill_id: str | None = None
    intended_leaf_id: str | None = None
    body: Body | None = None
    reasoning: str = ""
    repaired: bool = False
    fallback_from_a: bool = False
    out_of_range: bool = False
    fitness: float | None = None
    gain: float | None = None
    eval_index: int | None = None


class SearchOrchestrator:
    """Owns one run: state, streams, gateway traffic, and artifacts."""

    def __init__(self, config: RunConfig, backend, evaluator, run_dir=None,
                 source_library: SkillLibrary | None = None,
                 source_elites: list | None = None,
                 source_scale: int | None = None):
        self.config = config
        self.evaluator = evaluator
        self.run_dir = Path(run_dir) if run_dir else None
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        audit = self.run_dir / "prompts.log.jsonl" if self.run_dir else None
        self.gateway = LlmGateway(backend, audit_path=audit)

        if config.mode in ("transfer_with_ref", "transfer_skill_only"):
            if source_library is None:
                raise SourceLibraryMissing("transfer modes need a source library")
            self.library = import_for_transfer(source_library, config.task, config.scale)
            self.source_scale = source_scale or source_library.scale
        else:
            self.library = SkillLibrary(task=config.task, scale=config.scale)
            self.source_scale = None
        self.reference_designs = []
        if config.mode == "transfer_with_ref":
            ranked = sorted(source_elites or [], key=lambda bf: -bf[1])
            self.reference_designs = ranked[: config.static_elite_pool]

        self.streams = {
            name: np.random.default_rng([config.master_seed, sid])
            for name, sid in _STREAM_IDS.items()
        }
        self.generation = 0
        self.population = []
        self.best_curve = []
        self.evals_used = 0
        self.children_of = {}
        self.generation_records = []

    # -- shared helpers ------------------------------------------------------

    def _grid(self) -> int:
        return self.config.scale

    def _draw_seed(self, stream: str) -> int:
        return int(self.streams[stream].integers(0, 2**63))

    def _transfer_block(self) -> str:
        if self.config.mode not in ("transfer_with_ref", "transfer_skill_only"):
            return ""
        subs = {
            "current_env": self.config.task,
            "current_grid": f"{self._grid()}x{self._grid()}",
            "source_grid": f"{self.source_scale}x{self.source_scale}",
            "source_exp": "source",
        }
        template = (
            prompt_templates.TRANSFER_CONTEXT_SAME_GRID
            if self.source_scale == self._grid()
            else prompt_templates.TRANSFER_CONTEXT_CROSS_GRID
        )
        text = template
        for key, value in subs.items():
            text = text.replace("{" + key + "}", str(value))
        return text

    def _reference_block(self) -> str:
        if not self.reference_designs:
            return ""
        addendum = (
            prompt_templates.REFERENCE_ADDENDUM_SAME_GRID
            if self.source_scale == self._grid()
            else prompt_templates.REFERENCE_ADDENDUM_CROSS_GRID.replace(
                "{source_grid}", f"{self.source_scale}x{self.source_scale}"
            )
        )
        parts = [addendum]
        for body, fitness in self.reference_designs:
            parts.append(f"Reference design (fitness={fitness:.3f}):\n{body.render()}")
        return "\n\n".join(parts)

    def _skill_summary(self, skill) -> dict:
        return {
            "skill_id": skill.skill_id,
            "l1_structure": skill.l1_structure,
            "l1_condition": skill.l1_condition,
            "positive_texts": [
                f"{l.claim} {l.description}" for l in skill.l2_positive
            ],
        }

    def _rules_block(self, skill) -> str:
        lines = [
            f"skill_id={skill.skill_id}",
            f"  l1.structure={skill.l1_structure}",
            f"  l1.condition={skill.l1_condition}",
        ]
        if self.config.no_l2_l3:
            return "\n".join(lines)
        for title, leaves in (("positive", skill.l2_positive), ("negative", skill.l2_negative)):
            if leaves:
                lines.append(f"  L2 {title} rules:")
                for leaf in leaves:
                    lines.append(
                        f"    leaf_id={leaf.leaf_id} claim={leaf.claim} "
                        f"support={leaf.support_count} avg_gain={leaf.mean_gain:.3f} "
                        f"desc={leaf.description}"
                    )
        return "\n".join(lines)

    def _record_best(self, fitness: float):
        prev = self.best_curve[-1][1] if self.best_curve else float("-inf")
        self.best_curve.append((self.evals_used, max(prev, fitness)))

    def _register_design(self, slot: _Slot):
        self.evals_used += 1
        slot.eval_index = self.evals_used
        record = DesignRecord(
            design_id=self.evals_used,
            body=slot.body,
            fitness=slot.fitness,
            parent_id=slot.parent.design_id if slot.parent else None,
            generation=self.generation,
        )
        self.population.append(record)
        if slot.parent:
            self.children_of.setdefault(slot.parent.design_id, []).append(record)
        self._record_best(slot.fitness)
        return record

    def _evaluate_slots(self, slots):
        requests = []
        for slot in slots:
            requests.append(
                EvalRequest(
                    request_id=f"g{self.generation}_s{slot.slot_index}",
                    body=slot.body,
                    task=self.config.task,
                    scale=self._grid(),
                    controller_seed=self._draw_seed("eval_seeds"),
                )
            )
        results = evaluate_batch(requests, self.evaluator, parallelism=1)
        for slot, result in zip(slots, results):
            # A failed evaluation still spent the attempt; score it at the
            # bottom of the scale so search routes away from it.
            slot.fitness = result.fitness if result.fitness is not None else 0.0
            if slot.parent is not None:
                slot.gain = slot.fitness - slot.parent.fitness
            self._register_design(slot)

    def _slot_record(self, slot: _Slot) -> dict:
        return {
            "eval_index": slot.eval_index,
            "path": slot.path,
            "parent_id": slot.parent.design_id if slot.parent else None,
            "skill_id": slot.skill_id,
            "intended_leaf_id": slot.intended_leaf_id,
            "body": slot.body.to_rows(),
            "repaired": slot.repaired,
            "fallback_from_a": slot.fallback_from_a,
            "out_of_range": slot.out_of_range,
            "fitness": slot.fitness,
            "gain": slot.gain,
        }

    # -- generation 0 --------------------------------------------------------

    def initialize(self) -> dict:
        """Evaluate the first batch: backend cold-start designs, or random
        valid bodies for the GA baseline. No parents, so no maintenance."""
        n = min(self.config.generation_size, self.config.budget)
        slots = [_Slot(slot_index=i, path="init") for i in range(n)]
        if self.config.mode != "ga_only":
            self._cold_start_proposals(slots)
        rng = self.streams["init"]
        for slot in slots:
            if slot.body is None:
                slot.body = random_valid_body(self._grid(), rng)
        self._evaluate_slots(slots)
        record = {
            "generation": 0,
            "partial": n < self.config.generation_size,
            "slots": [self._slot_record(s) for s in slots],
            "maintenance": None,
        }
        self._finish_generation(record)
        return record

    def _cold_start_proposals(self, slots):
        subs = {
            "task_desc": self.config.task_desc,
            "voxel_legend": prompt_templates.VOXEL_LEGEND,
            "n_designs": len(slots),
            "grid_size": self._grid(),
            "transfer_context_block": self._transfer_block(),
            "static_reference_block": self._reference_block(),
            "_grid_size": self._grid(),
            "_n_designs": len(slots),
            "_task": self.config.task,
        }
        _, response = self.gateway.call("propose_cold_start", subs, generation=0)
        plans = [SlotPlan(slot_index=s.slot_index) for s in slots]
        outcome = parse_propose(
            response, ProposeContext(grid_size=self._grid(), slots=plans)
        )
        for slot, parsed in zip(slots, outcome.value):
            if parsed.child is not None:
                slot.body = parsed.child
                slot.reasoning = parsed.reasoning
                slot.repaired = parsed.repaired

    # -- generations >= 1 ----------------------------------------------------

    def run_generation(self) -> dict:
        if self.evals_used >= self.config.budget:
            raise BudgetExhausted(f"budget {self.config.budget} already spent")
        self.generation += 1
        cfg = self.config
        remaining = cfg.budget - self.evals_used
        n_slots = min(cfg.generation_size, remaining)
        elites = update_elites(self.population, cfg.elite_pool_k)

        plan = (["A"] * cfg.path_a_slots + ["B"] * cfg.path_b_slots)[:n_slots]
        slots = [_Slot(slot_index=i, path=p) for i, p in enumerate(plan)]
        a_slots = [s for s in slots if s.path == "A"]
        b_slots = [s for s in slots if s.path == "B"]

        retrieved = retrieve(
            self.library, cfg.task, cfg.scale, self.generation, cfg.prior_only_generations
        )
        if a_slots and not retrieved and not cfg.pure_llm:
            # nothing to condition on: these slots run as plain GA mutation
            for slot in a_slots:
                slot.path = "B"
            b_slots = [s for s in slots if s.path == "B"]
            a_slots = []

        for i, slot in enumerate(a_slots):
            slot.parent = elites[i % len(elites)]
            if retrieved:
                skill = sample_skill(retrieved, cfg.delta_max, self._draw_seed("sampling"))
                slot.skill_id = skill.skill_id
        self._propose_a_slots(a_slots)

        breeding = self._breeding_pool(elites)
        for i, slot in enumerate(b_slots):
            slot.parent = breeding[i % len(breeding)]
            slot.body = self._ga_child(slot.parent.body, "path_b")

        for slot in a_slots:
            if slot.body is None:  # unrecoverable backend output: GA fallback
                slot.fallback_from_a = True
                slot.skill_id = None  # child is GA-made; attribution decides later
                slot.intended_leaf_id = None
                if not cfg.pure_llm:
                    slot.path = "B"
                slot.body = self._ga_child(slot.parent.body, "fallback")

        self._evaluate_slots(slots)
        # The GA baseline never touches the library or the backend.
        maintenance = None if cfg.mode == "ga_only" else self._maintain(slots)
        record = {
            "generation": self.generation,
            "partial": n_slots < cfg.generation_size,
            "slots": [self._slot_record(s) for s in slots],
            "maintenance": maintenance,
        }
        self._finish_generation(record)
        return record

    def _breeding_pool(self, elites):
        if self.config.mode != "ga_only":
            return elites
        # GA baseline: truncation survival over the evaluated population
        n = max(1, round(self.config.generation_size * self.config.ga_survivor_rate))
        return update_elites(self.population, n)

    def _ga_child(self, parent: Body, stream: str) -> Body:
        for _ in range(10):
            try:
                return ga_mutate(parent, self._draw_seed(stream), self.config.ga_mutation_rate)
            except MutationExhausted:
                continue
        raise MutationExhausted("persistent mutation failure")

    def _propose_a_slots(self, a_slots):
        if not a_slots:
            return
        cfg = self.config
        by_parent = {}
        for slot in a_slots:
            by_parent.setdefault(slot.parent.design_id, []).append(slot)
        for parent_id in sorted(by_parent):
            group = by_parent[parent_id]
            parent = group[0].parent
            history = self.children_of.get(parent_id, [])
            subs, plans = self._propose_substitutions(parent, group, history)
            _, response = self.gateway.call("propose", subs, generation=self.generation)
            outcome = parse_propose(
                response,
                ProposeContext(
                    grid_size=self._grid(),
                    slots=plans,
                    parent=parent.body,
                    history=tuple(h.body for h in history),
                    mutation_range=cfg.mutation_range,
                ),
            )
            for slot, parsed in zip(group, outcome.value):
                if parsed.child is not None:
                    slot.body = parsed.child
                    slot.reasoning = parsed.reasoning
                    slot.repaired = parsed.repaired
                    slot.out_of_range = parsed.out_of_range
                    slot.intended_leaf_id = parsed.intended_leaf_id

    def _propose_substitutions(self, parent, group, history):
        cfg = self.config
        lines = []
        slot_meta = []
        plans = []
        for slot in group:
            if slot.skill_id is not None:
                skill = self.library.get_skill(slot.skill_id)
                lines.append(f"slot_index={slot.slot_index}:\n{self._rules_block(skill)}")
                pos_rules = [] if cfg.no_l2_l3 else [
                    {
                        "leaf_id": l.leaf_id,
                        "claim": l.claim,
                        "description": l.description,
                        "mean_gain": l.mean_gain,
                    }
                    for l in skill.l2_positive
                ]
                neg_rules = [] if cfg.no_l2_l3 else [
                    {"leaf_id": l.leaf_id, "claim": l.claim, "description": l.description}
                    for l in skill.l2_negative
                ]
                slot_meta.append(
                    {
                        "slot_index": slot.slot_index,
                        "skill_id": skill.skill_id,
                        "l1_text": f"{skill.l1_structure} {skill.l1_condition}",
                        "pos_rules": pos_rules,
                        "neg_rules": neg_rules,
                    }
                )
                leaf_ids = tuple(l.leaf_id for l in skill.leaves())
                plans.append(SlotPlan(slot.slot_index, skill.skill_id, leaf_ids))
            else:
                lines.append(
                    f"slot_index={slot.slot_index}: no skill assigned (free structural mutation)"
                )
                slot_meta.append(
                    {"slot_index": slot.slot_index, "skill_id": None,
                     "l1_text": "", "pos_rules": [], "neg_rules": []}
                )
                plans.append(SlotPlan(slot.slot_index, None, ()))

        if cfg.no_l2_l3:
            history_block = "(history omitted)"
            history_meta = []
        elif history:
            entries = []
            for child in history:
                edits = diff(parent.body, child.body).edits
                entries.append(
                    f"child_fitness={child.fitness:.3f} voxel_diff={list(edits)}\n"
                    f"child_body:\n{child.body.render()}"
                )
            history_block = "\n\n".join(entries)
            history_meta = [c.body.to_rows() for c in history]
        else:
            history_block = "(no prior mutations of this parent)"
            history_meta = []

        low, high = cfg.mutation_range
        subs = {
            "task_desc": cfg.task_desc,
            "transfer_context_block": self._transfer_block(),
            "voxel_legend": prompt_templates.VOXEL_LEGEND,
            "parent_fitness": parent.fitness,
            "parent_body": parent.body.render(),
            "skill_assignments_block": "\n".join(lines),
            "static_reference_block": self._reference_block(),
            "history_block": history_block,
            "n_designs": len(group),
            "grid_size": self._grid(),
            "mutation_range": f"{low}-{high}",
            "_grid_size": self._grid(),
            "_parent": parent.body.to_rows(),
            "_mutation_range": [low, high],
            "_history": history_meta,
            "_slots": slot_meta,
            "_omit_rules": cfg.no_l2_l3,
        }
        return subs, plans

    # -- maintenance ---------------------------------------------------------

    def _maintain(self, slots) -> dict:
        cfg = self.config
        summary = {
            "attributed": 0, "pooled": 0, "reattributed": 0,
            "add": None, "diagnosed": [], "merged": [], "issues": [],
        }
        observations = []
        direct = []
        needs_attribution = []
        for slot in slots:
            obs = Observation(
                obs_id=self.library.new_pool_obs_id(),
                child_body=slot.body,
                parent_body=slot.parent.body,
                task=cfg.task,
                scale=cfg.scale,
                fitness=slot.fitness,
                gain=slot.gain,
                valid=True,
                proposal_path=slot.path if slot.path in ("A", "B") else "B",
                intended_leaf_id=slot.intended_leaf_id,
            )
            observations.append(obs)
            if slot.path == "A" and slot.skill_id is not None:
                direct.append(AttributionDecision(obs.obs_id, slot.skill_id, "proposal target"))
            else:
                needs_attribution.append(obs)

        decided = list(direct)
        decided += self._attribute_via_backend(needs_attribution, summary)
        apply_attribution(self.library, observations, decided)
        summary["attributed"] = sum(1 for d in decided if d.skill_id is not None)
        summary["pooled"] = sum(1 for d in decided if d.skill_id is None)

        new_evidence = list(observations)
        if pool_pressure(self.library.unassigned_pool, cfg.pool_threshold) and self.library.skills:
            pool_entries = list(self.library.unassigned_pool.entries)
            redecided = self._attribute_via_backend(pool_entries, summary)
            apply_attribution(self.library, pool_entries, redecided)
            summary["reattributed"] = sum(1 for d in redecided if d.skill_id is not None)
            new_evidence += pool_entries

        summary["add"] = self._run_add(observations, summary)
        if not cfg.no_diagnose:
            self._run_diagnose(new_evidence, observations, summary)
        if not cfg.no_merge and len(self.library.skills) >= 2:
            self._run_merge(summary)
        return summary

    def _attribute_via_backend(self, observations, summary) -> list:
        if not observations:
            return []
        if not self.library.skills:
            return [AttributionDecision(o.obs_id, None, "empty library") for o in observations]
        designs_meta = []
        designs_lines = []
        for i, obs in enumerate(observations):
            designs_meta.append({"local_index": i, "body": obs.child_body.to_rows()})
            designs_lines.append(f"local_index={i}\n{obs.child_body.render()}")
        skills_meta = [self._skill_summary(s) for s in self.library.skills]
        skills_lines = []
        for s in self.library.skills:
            top = sorted(s.l2_positive, key=lambda l: -l.mean_gain)[:2]
            top_txt = "; ".join(f"{l.claim}: {l.description}" for l in top) or "(none)"
            skills_lines.append(
                f"skill_id={s.skill_id} l1.structure={s.l1_structure}\n"
                f"  l1.condition={s.l1_condition}\n  top_positive_leaves: {top_txt}"
            )
        subs = {
            "skills_block": "\n".join(skills_lines),
            "designs_block": "\n\n".join(designs_lines),
            "_designs": designs_meta,
            "_skills": skills_meta,
        }
        _, response = self.gateway.call("attribute", subs, generation=self.generation)
        outcome = parse_attribute(
            response, list(range(len(observations))), set(self.library.skill_ids())
        )
        summary["issues"].extend(outcome.issues)
        index_to_obs = {i: o.obs_id for i, o in enumerate(observations)}
        return attribution_decisions(outcome.value, index_to_obs)

    def _run_add(self, observations, summary):
        cfg = self.config
        ranked = sorted(observations, key=lambda o: -o.fitness)
        def block(entries):
            parts = []
            for o in entries:
                parts.append(
                    f"obs_id={o.obs_id} fitness={o.fitness:.3f} gain={o.gain:+.3f}\n"
                    f"{o.child_body.render()}"
                )
            return "\n\n".join(parts) or "(none)"
        pool_meta = [
            {"obs_id": o.obs_id, "gain": o.gain, "body": o.child_body.to_rows()}
            for o in self.library.unassigned_pool.entries
        ]
        existing_meta = [
            {"skill_id": s.skill_id, "l1_structure": s.l1_structure,
             "l1_condition": s.l1_condition}
            for s in self.library.skills
        ]
        existing_lines = [
            f"skill_id={s.skill_id} l1.structure={s.l1_structure} "
            f"l1.condition={s.l1_condition}"
            for s in self.library.skills
        ] or ["(no skills yet)"]
        subs = {
            "high_designs": block(ranked[:6]),
            "low_designs": block(ranked[-6:][::-1]),
            "existing_skills_block": "\n".join(existing_lines),
            "task_name": cfg.task,
            "low_skill_hint": "",
            "_pool": pool_meta,
            "_existing": existing_meta,
            "_task": cfg.task,
        }
        _, response = self.gateway.call("add", subs, generation=self.generation)
        pool_ids = [o.obs_id for o in self.library.unassigned_pool.entries]
        outcome = parse_add(response, set(self.library.skill_ids()), pool_ids, cfg.task)
        summary["issues"].extend(outcome.issues)
        if outcome.value.action == "add":
            apply_add(self.library, self.library.unassigned_pool, outcome.value)
            return outcome.value.skill_id
        return None

    def _run_diagnose(self, new_evidence, observations, summary):
        new_by_skill = {o.attributed_skill for o in new_evidence if o.attributed_skill}
        gains = [o.gain for o in observations]
        gen_mean = float(np.mean(gains)) if gains else 0.0
        gen_p25 = float(np.percentile(gains, 25)) if gains else 0.0
        for skill_id in sorted(new_by_skill):
            skill = self.library.get_skill(skill_id)
            eligible = skill.eligible_observations()
            if not eligible:
                continue
            leaves_meta = [
                {"leaf_id": l.leaf_id, "polarity": l.polarity, "claim": l.claim,
                 "description": l.description, "support_count": l.support_count,
                 "mean_gain": l.mean_gain}
                for l in skill.leaves()
            ]
            unassigned_meta = [
                {"obs_id": o.obs_id, "gain": o.gain, "fitness": o.fitness,
                 "child_body": o.child_body.to_rows(),
                 "parent_body": o.parent_body.to_rows()}
                for o in eligible
            ]
            context_meta = [
                {"obs_id": o.obs_id, "gain": o.gain, "assigned_leaf_id": o.assigned_leaf_id}
                for o in skill.l3_observations
                if o.assigned_leaf_id is not None
            ]
            subs = {
                "l1_condition": skill.l1_condition,
                "leaves_json": json.dumps(leaves_meta),
                "unassigned_json": json.dumps(unassigned_meta),
                "context_json": json.dumps(context_meta),
                "gen_mean": gen_mean,
                "gen_p25": gen_p25,
                "cold_start_note": (
                    "This skill has no L2 leaves yet; seed leaves only from clear patterns."
                    if not skill.leaves() else ""
                ),
                "_l1_condition": skill.l1_condition,
                "_leaves": leaves_meta,
                "_unassigned": unassigned_meta,
            }
            _, response = self.gateway.call("diagnose", subs, generation=self.generation)
            eligible_ids = [o.obs_id for o in eligible]
            outcome = parse_diagnose(
                response, eligible_ids, [l.leaf_id for l in skill.leaves()]
            )
            if outcome.value is None:
                # whole decision dropped: burn one no_leaf attempt everywhere
                summary["issues"].extend(outcome.issues)
                assignments = [LeafAssignment(oid, "no_leaf") for oid in eligible_ids]
                standalone = ()
            else:
                assignments, standalone = outcome.value
            result = apply_diagnose(skill, assignments, standalone)
            summary["diagnosed"].append(
                {"skill_id": skill_id, "matched": result.matched,
                 "new_leaves": result.new_leaves, "no_leaf": result.no_leaf,
                 "frozen": result.frozen,
                 "coordinate_downgrades": result.coordinate_downgrades}
            )

    def _run_merge(self, summary):
        skills_meta = [
            {"skill_id": s.skill_id, "l1_structure": s.l1_structure,
             "l1_condition": s.l1_condition}
            for s in self.library.skills
        ]
        lines = [
            f"skill_id={s.skill_id} l1.structure={s.l1_structure} "
            f"l1.condition={s.l1_condition}"
            for s in self.library.skills
        ]
        subs = {
            "skills_full_content": "\n".join(lines),
            "_skills": skills_meta,
        }
        _, response = self.gateway.call("merge", subs, generation=self.generation)
        outcome = parse_merge(response, set(self.library.skill_ids()))
        summary["issues"].extend(outcome.issues)
        if outcome.value:
            merged = apply_merge(self.library, outcome.value)
            summary["merged"] = [m.skill_id for m in merged]

    # -- persistence ---------------------------------------------------------

    def _finish_generation(self, record):
        self.generation_records.append(record)
        if self.run_dir:
            with (self.run_dir / "run.log.jsonl").open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._save_state()

    def _save_state(self):
        state = {
            "generation": self.generation,
            "evals_used": self.evals_used,
            "population": [d.to_json() for d in self.population],
            "best_curve": self.best_curve,
            "library": self.library.to_json(),
            "streams": {name: g.bit_generator.state for name, g in self.streams.items()},
        }
        (self.run_dir / "state.json").write_text(json.dumps(state, sort_keys=True))

    def restore_state(self, state: dict):
        self.generation = state["generation"]
        self.evals_used = state["evals_used"]
        self.population = [DesignRecord.from_json(d) for d in state["population"]]
        self.best_curve = [tuple(p) for p in state["best_curve"]]
        self.library = SkillLibrary.from_json(state["library"])
        for name, gen_state in state["streams"].items():
            self.streams[name].bit_generator.state = gen_state
        self.children_of = {}
        by_id = {d.design_id: d for d in self.population}
        for d in self.population:
            if d.parent_id in by_id:
                self.children_of.setdefault(d.parent_id, []).append(d)

    def best_design(self) -> DesignRecord:
        return update_elites(self.population, 1)[0]

    def write_artifacts(self):
        if not self.run_dir:
            return
        self.library.save(self.run_dir / "library.json")
        best = self.best_design()
        (self.run_dir / "best_body.json").write_text(
            json.dumps(
                {
                    "task": self.config.task,
                    "scale": self.config.scale,
                    "body": best.body.to_rows(),
                    "fitness": best.fitness,
                    "eval_index": best.design_id,
                },
                indent=2, sort_keys=True,
            )
        )
        lines = ["eval_index,best_fitness"]
        lines += [f"{e},{v!r}" for e, v in self.best_curve]
        (self.run_dir / "curve.csv").write_text("\n".join(lines) + "\n")

    def run(self):
        """Full run: initialize, loop generations to budget, write artifacts."""
        if self.run_dir:
            (self.run_dir / "config.snapshot").write_text(
                json.dumps(self.config.to_json(), indent=2, sort_keys=True)
            )
        if self.evals_used == 0:
            self.initialize()
        while self.evals_used < self.config.budget:
            self.run_generation()
        self.write_artifacts()
        return self
