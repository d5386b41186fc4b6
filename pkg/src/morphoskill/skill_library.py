"""Persistent three-level skill memory.

A skill stores an archetype (L1), positive/negative rule leaves with running
gain statistics (L2), and the evaluated observations supporting them (L3).
Library maintenance mutates skills through attribution, add, diagnose, and
merge; sampling reads them through an evidence-weighted usefulness score.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from morphoskill.voxelbody import Body

SCHEMA_VERSION = 1

DEFAULT_DELTA_MAX = 2.0
DEFAULT_POOL_THRESHOLD = 30
DEFAULT_PRIOR_ONLY_GENERATIONS = 5
MAX_NO_LEAF_ATTEMPTS = 3


class EmptyCandidates(ValueError):
    pass


class UnknownSkillId(KeyError):
    pass


class DuplicateSkillId(ValueError):
    pass


class MalformedSkillId(ValueError):
    pass


class DuplicateDecision(ValueError):
    pass


class UnknownLeafId(KeyError):
    pass


class UnknownObsId(KeyError):
    pass


class SingletonCluster(ValueError):
    pass


class OverlappingClusters(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


_SKILL_ID_RE = re.compile(r"^[a-z][a-z0-9]*(_[a-z][a-z0-9]*){0,2}$")
_CLAIM_RE = re.compile(r"^[a-z][a-z0-9]*(_[a-z][a-z0-9]*){0,3}$")
_VERSION_WORD_RE = re.compile(r"^v\d+$")

# Rule text must stay at the level of regions/shapes/counts; absolute cell
# coordinates make a rule untransferable and are rejected outright.
_COORDINATE_PATTERNS = (
    re.compile(r"\(\s*\d+\s*,\s*\d+\s*\)"),
    re.compile(r"\brows?\s+\d+", re.IGNORECASE),
    re.compile(r"\bcolumns?\s+\d+", re.IGNORECASE),
    re.compile(r"\bcols?\s+\d+", re.IGNORECASE),
)


def validate_skill_id(skill_id: str):
    if not isinstance(skill_id, str) or not _SKILL_ID_RE.match(skill_id):
        raise MalformedSkillId(
            f"skill_id must be snake_case with at most 3 words: {skill_id!r}"
        )
    if _VERSION_WORD_RE.match(skill_id.split("_")[-1]):
        raise MalformedSkillId(f"skill_id must not carry a version suffix: {skill_id!r}")


def leaks_coordinates(text: str) -> bool:
    return any(p.search(text or "") for p in _COORDINATE_PATTERNS)


@dataclass
class Observation:
    """One evaluated child: the evidence unit feeding rule statistics."""

    obs_id: str
    child_body: Body
    parent_body: Body | None
    task: str
    scale: int
    fitness: float
    gain: float
    valid: bool = True
    proposal_path: str = "A"  # A (skill-conditioned) or B (GA mutation)
    attributed_skill: str | None = None
    intended_leaf_id: str | None = None
    assigned_leaf_id: str | None = None
    no_leaf_attempts: int = 0

    def to_json(self) -> dict:
        return {
            "obs_id": self.obs_id,
            "child_body": self.child_body.to_rows(),
            "parent_body": None if self.parent_body is None else self.parent_body.to_rows(),
            "task": self.task,
            "scale": self.scale,
            "fitness": self.fitness,
            "gain": self.gain,
            "valid": self.valid,
            "proposal_path": self.proposal_path,
            "attributed_skill": self.attributed_skill,
            "intended_leaf_id": self.intended_leaf_id,
            "assigned_leaf_id": self.assigned_leaf_id,
            "no_leaf_attempts": self.no_leaf_attempts,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Observation":
        return cls(
            obs_id=d["obs_id"],
            child_body=Body(d["child_body"]),
            parent_body=None if d.get("parent_body") is None else Body(d["parent_body"]),
            task=d["task"],
            scale=int(d["scale"]),
            fitness=float(d["fitness"]),
            gain=float(d["gain"]),
            valid=bool(d.get("valid", True)),
            proposal_path=d.get("proposal_path", "A"),
            attributed_skill=d.get("attributed_skill"),
            intended_leaf_id=d.get("intended_leaf_id"),
            assigned_leaf_id=d.get("assigned_leaf_id"),
            no_leaf_attempts=int(d.get("no_leaf_attempts", 0)),
        )


@dataclass
class RuleLeaf:
    """A positive or negative structural rule with running gain statistics."""

    leaf_id: str
    polarity: str  # "positive" | "negative"
    claim: str
    description: str
    support_count: int = 0
    mean_gain: float = 0.0
    supporting_obs_ids: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "leaf_id": self.leaf_id,
            "polarity": self.polarity,
            "claim": self.claim,
            "description": self.description,
            "support_count": self.support_count,
            "mean_gain": self.mean_gain,
            "supporting_obs_ids": list(self.supporting_obs_ids),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RuleLeaf":
        return cls(
            leaf_id=d["leaf_id"],
            polarity=d["polarity"],
            claim=d["claim"],
            description=d["description"],
            support_count=int(d["support_count"]),
            mean_gain=float(d["mean_gain"]),
            supporting_obs_ids=list(d.get("supporting_obs_ids", [])),
        )


@dataclass
class Skill:
    skill_id: str
    task_family: list
    l1_structure: str
    l1_condition: str
    l2_positive: list = field(default_factory=list)
    l2_negative: list = field(default_factory=list)
    l3_observations: list = field(default_factory=list)
    next_leaf_id_counter: int = 0
    next_obs_id_counter: int = 0
    imported: bool = False

    def leaves(self) -> list:
        return list(self.l2_positive) + list(self.l2_negative)

    def find_leaf(self, leaf_id: str) -> RuleLeaf:
        for leaf in self.leaves():
            if leaf.leaf_id == leaf_id:
                return leaf
        raise UnknownLeafId(leaf_id)

    def find_observation(self, obs_id: str) -> Observation:
        for obs in self.l3_observations:
            if obs.obs_id == obs_id:
                return obs
        raise UnknownObsId(obs_id)

    def new_leaf_id(self, polarity: str) -> str:
        prefix = "pos" if polarity == "positive" else "neg"
        leaf_id = f"{prefix}_{self.next_leaf_id_counter}"
        self.next_leaf_id_counter += 1
        return leaf_id

    def new_obs_id(self) -> str:
        obs_id = f"obs_{self.next_obs_id_counter}"
        self.next_obs_id_counter += 1
        return obs_id

    def eligible_observations(self) -> list:
        """Observations still awaiting a leaf decision (not frozen)."""
        return [
            o
            for o in self.l3_observations
            if o.assigned_leaf_id is None and o.no_leaf_attempts < MAX_NO_LEAF_ATTEMPTS
        ]

    def to_json(self) -> dict:
        return {
            "skill_id": self.skill_id,
            "task_family": list(self.task_family),
            "condition": self.l1_condition,
            "l1": {"structure": self.l1_structure, "condition": self.l1_condition},
            "l2": {
                "positive": [l.to_json() for l in self.l2_positive],
                "negative": [l.to_json() for l in self.l2_negative],
                "next_leaf_id_counter": self.next_leaf_id_counter,
            },
            "l3": {
                "observations": [o.to_json() for o in self.l3_observations],
                "next_obs_id_counter": self.next_obs_id_counter,
            },
            "imported": self.imported,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Skill":
        try:
            return cls(
                skill_id=d["skill_id"],
                task_family=list(d["task_family"]),
                l1_structure=d["l1"]["structure"],
                l1_condition=d["l1"]["condition"],
                l2_positive=[RuleLeaf.from_json(x) for x in d["l2"]["positive"]],
                l2_negative=[RuleLeaf.from_json(x) for x in d["l2"]["negative"]],
                l3_observations=[Observation.from_json(x) for x in d["l3"]["observations"]],
                next_leaf_id_counter=int(d["l2"]["next_leaf_id_counter"]),
                next_obs_id_counter=int(d["l3"]["next_obs_id_counter"]),
                imported=bool(d.get("imported", False)),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"malformed skill record: {exc}") from exc


@dataclass
class UnassignedPool:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def remove(self, obs: Observation):
        self.entries = [o for o in self.entries if o is not obs]


@dataclass
class SkillLibrary:
    task: str
    scale: int
    skills: list = field(default_factory=list)
    unassigned_pool: UnassignedPool = field(default_factory=UnassignedPool)
    next_pool_obs_id: int = 0
    schema_version: int = SCHEMA_VERSION

    def skill_ids(self) -> list:
        return [s.skill_id for s in self.skills]

    def get_skill(self, skill_id: str) -> Skill:
        for s in self.skills:
            if s.skill_id == skill_id:
                return s
        raise UnknownSkillId(skill_id)

    def new_pool_obs_id(self) -> str:
        obs_id = f"p{self.next_pool_obs_id}"
        self.next_pool_obs_id += 1
        return obs_id

    def total_observations(self) -> int:
        return sum(len(s.l3_observations) for s in self.skills)

    def total_leaves(self) -> int:
        return sum(len(s.l2_positive) + len(s.l2_negative) for s in self.skills)

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "task": self.task,
            "scale": self.scale,
            "skills": [s.to_json() for s in self.skills],
            "unassigned_pool": [o.to_json() for o in self.unassigned_pool.entries],
            "counters": {"next_pool_obs_id": self.next_pool_obs_id},
        }

    @classmethod
    def from_json(cls, d: dict) -> "SkillLibrary":
        try:
            lib = cls(
                task=d["task"],
                scale=int(d["scale"]),
                skills=[Skill.from_json(x) for x in d["skills"]],
                unassigned_pool=UnassignedPool(
                    entries=[Observation.from_json(x) for x in d["unassigned_pool"]]
                ),
                next_pool_obs_id=int(d["counters"]["next_pool_obs_id"]),
                schema_version=int(d["schema_version"]),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"malformed library document: {exc}") from exc
        validate_library(lib)
        return lib

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SkillLibrary":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"library file is not valid JSON: {exc}") from exc
        return cls.from_json(doc)


def validate_library(lib: SkillLibrary):
    """Structural checks on ids and statistics; raises SchemaViolation."""
    seen = set()
    for skill in lib.skills:
        validate_skill_id(skill.skill_id)
        if skill.skill_id in seen:
            raise SchemaViolation(f"duplicate skill_id {skill.skill_id!r}")
        seen.add(skill.skill_id)
        leaf_ids = [l.leaf_id for l in skill.leaves()]
        if len(leaf_ids) != len(set(leaf_ids)):
            raise SchemaViolation(f"duplicate leaf ids in {skill.skill_id}")
        obs_ids = [o.obs_id for o in skill.l3_observations]
        if len(obs_ids) != len(set(obs_ids)):
            raise SchemaViolation(f"duplicate obs ids in {skill.skill_id}")
        for leaf in skill.leaves():
            if leaf.support_count != len(leaf.supporting_obs_ids):
                raise SchemaViolation(
                    f"{skill.skill_id}/{leaf.leaf_id}: support_count mismatch"
                )
    for obs in lib.unassigned_pool.entries:
        if obs.attributed_skill is not None:
            raise SchemaViolation(f"pool entry {obs.obs_id} carries an attribution")


# ---------------------------------------------------------------------------
# Sampling and retrieval
# ---------------------------------------------------------------------------

def skill_weight(skill: Skill, delta_max: float = DEFAULT_DELTA_MAX) -> float:
    """Smoothed usefulness estimate in (0, 1].

    (1 + sum_i clip(g_i / delta_max, 0, 1)) / (2 + n), over the gains of the
    skill's attributed observations. A skill with no evidence scores 0.5.
    """
    if delta_max <= 0:
        raise ValueError("delta_max must be positive")
    gains = [o.gain for o in skill.l3_observations]
    clipped = sum(min(max(g / delta_max, 0.0), 1.0) for g in gains)
    return (1.0 + clipped) / (2.0 + len(gains))


def sample_skill(candidates, delta_max: float, rng_seed: int) -> Skill:
    """Sample one candidate proportionally to its normalized weight."""
    if not candidates:
        raise EmptyCandidates("no candidate skills to sample from")
    weights = np.array([skill_weight(s, delta_max) for s in candidates])
    probs = weights / weights.sum()
    rng = np.random.default_rng(rng_seed)
    return candidates[int(rng.choice(len(candidates), p=probs))]


def retrieve(
    library: SkillLibrary,
    task: str,
    scale: int,
    generation: int,
    prior_only_horizon: int = DEFAULT_PRIOR_ONLY_GENERATIONS,
) -> list:
    """Skills whose task_family covers the task.

    While imported skills are present and the generation index is inside the
    prior-only horizon, only imported skills are returned, so early target
    search is guided by transferred priors. Scale is carried as metadata and
    does not constrain the match.
    """
    matches = [s for s in library.skills if task in s.task_family]
    imported = [s for s in matches if s.imported]
    if imported and generation < prior_only_horizon:
        return imported
    return matches


def pool_pressure(pool: UnassignedPool, threshold: int = DEFAULT_POOL_THRESHOLD) -> bool:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return len(pool) >= threshold


# ---------------------------------------------------------------------------
# Maintenance operations
# ---------------------------------------------------------------------------

def update_rule_mean(leaf: RuleLeaf, gain: float) -> RuleLeaf:
    """Welford-style running mean: m += 1; mean += (g - mean) / m."""
    leaf.support_count += 1
    leaf.mean_gain += (gain - leaf.mean_gain) / leaf.support_count
    return leaf


@dataclass(frozen=True)
class AttributionDecision:
    obs_id: str
    skill_id: str | None
    reason: str = ""


def apply_attribution(library: SkillLibrary, observations, decisions) -> UnassignedPool:
    """Route each observation into exactly one skill's L3 or the pool.

    Routing is structural only; the decisions come from the attribution step
    and never consult fitness here. Observations assigned to a skill receive
    a fresh skill-local obs id; null decisions land in (or stay in) the pool.
    """
    by_obs = {}
    for d in decisions:
        if d.obs_id in by_obs:
            raise DuplicateDecision(d.obs_id)
        by_obs[d.obs_id] = d
    input_ids = {o.obs_id for o in observations}
    if set(by_obs) != input_ids:
        raise ValueError("decisions must cover every observation exactly once")

    for obs in observations:
        decision = by_obs[obs.obs_id]
        if decision.skill_id is None:
            obs.attributed_skill = None
            if obs not in library.unassigned_pool.entries:
                library.unassigned_pool.entries.append(obs)
            continue
        skill = library.get_skill(decision.skill_id)
        library.unassigned_pool.remove(obs)
        obs.obs_id = skill.new_obs_id()
        obs.attributed_skill = skill.skill_id
        skill.l3_observations.append(obs)
    return library.unassigned_pool


@dataclass(frozen=True)
class AddDecision:
    action: str  # "add" | "no_add"
    skill_id: str | None = None
    task_family: tuple = ()
    l1_structure: str = ""
    l1_condition: str = ""
    inspired_obs_ids: tuple = ()
    reasoning: str = ""


def apply_add(library: SkillLibrary, pool: UnassignedPool, decision: AddDecision) -> Skill | None:
    """Insert at most one new archetype; its L2 and L3 are born empty.

    Inspiring observations stay in the pool: they are evidence for later
    attribution, never auto-assigned to the newborn skill.
    """
    if decision.action == "no_add":
        return None
    if decision.action != "add":
        raise ValueError(f"unknown add action {decision.action!r}")
    validate_skill_id(decision.skill_id)
    if decision.skill_id in library.skill_ids():
        raise DuplicateSkillId(decision.skill_id)
    skill = Skill(
        skill_id=decision.skill_id,
        task_family=list(decision.task_family) or [library.task],
        l1_structure=decision.l1_structure,
        l1_condition=decision.l1_condition,
    )
    library.skills.append(skill)
    return skill


@dataclass(frozen=True)
class LeafAssignment:
    obs_id: str
    decision: str  # "match_existing" | "new_leaf" | "no_leaf"
    leaf_id: str | None = None
    polarity: str | None = None
    claim: str | None = None
    description: str | None = None
    description_update_mode: str | None = None  # "overwrite" | "append"
    description_update_text: str | None = None


@dataclass(frozen=True)
class StandaloneLeaf:
    polarity: str
    claim: str
    description: str
    supporting_obs_ids: tuple


@dataclass
class DiagnoseOutcome:
    matched: int = 0
    new_leaves: int = 0
    no_leaf: int = 0
    frozen: int = 0
    coordinate_downgrades: list = field(default_factory=list)
    standalone_created: int = 0
    standalone_rejected: list = field(default_factory=list)


def _mark_no_leaf(obs: Observation, outcome: DiagnoseOutcome):
    obs.no_leaf_attempts += 1
    outcome.no_leaf += 1
    if obs.no_leaf_attempts >= MAX_NO_LEAF_ATTEMPTS:
        outcome.frozen += 1


def apply_diagnose(skill: Skill, assignments, standalone=()) -> DiagnoseOutcome:
    """Distill undecided observations into rule leaves.

    match_existing folds the gain into the leaf's running mean; new_leaf
    seeds a leaf from one observation; no_leaf burns one of three attempts,
    after which the observation is frozen. Texts with coordinate leakage are
    downgraded to no_leaf. Standalone leaves need >= 2 supporting obs.
    """
    outcome = DiagnoseOutcome()
    for a in assignments:
        obs = skill.find_observation(a.obs_id)
        if obs.assigned_leaf_id is not None:
            raise ValueError(f"{a.obs_id} already has a leaf assignment")
        if a.decision == "no_leaf":
            _mark_no_leaf(obs, outcome)
            continue
        if a.decision == "match_existing":
            leaf = skill.find_leaf(a.leaf_id)
            new_text = a.description_update_text
            if a.description_update_mode and leaks_coordinates(new_text or ""):
                outcome.coordinate_downgrades.append(a.obs_id)
                _mark_no_leaf(obs, outcome)
                continue
            leaf.supporting_obs_ids.append(obs.obs_id)
            update_rule_mean(leaf, obs.gain)
            if a.description_update_mode == "overwrite" and new_text:
                leaf.description = new_text
            elif a.description_update_mode == "append" and new_text:
                leaf.description = f"{leaf.description} {new_text}"
            obs.assigned_leaf_id = leaf.leaf_id
            outcome.matched += 1
            continue
        if a.decision == "new_leaf":
            if leaks_coordinates(a.description or "") or leaks_coordinates(a.claim or ""):
                outcome.coordinate_downgrades.append(a.obs_id)
                _mark_no_leaf(obs, outcome)
                continue
            if a.polarity not in ("positive", "negative"):
                raise ValueError(f"bad polarity {a.polarity!r} for {a.obs_id}")
            leaf = RuleLeaf(
                leaf_id=skill.new_leaf_id(a.polarity),
                polarity=a.polarity,
                claim=a.claim,
                description=a.description,
                support_count=1,
                mean_gain=obs.gain,
                supporting_obs_ids=[obs.obs_id],
            )
            (skill.l2_positive if a.polarity == "positive" else skill.l2_negative).append(leaf)
            obs.assigned_leaf_id = leaf.leaf_id
            outcome.new_leaves += 1
            continue
        raise ValueError(f"unknown diagnose decision {a.decision!r}")

    for s in standalone:
        if len(s.supporting_obs_ids) < 2:
            outcome.standalone_rejected.append(s.claim)
            continue
        if leaks_coordinates(s.description) or leaks_coordinates(s.claim):
            outcome.standalone_rejected.append(s.claim)
            continue
        obs_list = [skill.find_observation(oid) for oid in s.supporting_obs_ids]
        if any(o.assigned_leaf_id is not None for o in obs_list):
            outcome.standalone_rejected.append(s.claim)
            continue
        leaf = RuleLeaf(
            leaf_id=skill.new_leaf_id(s.polarity),
            polarity=s.polarity,
            claim=s.claim,
            description=s.description,
        )
        for o in obs_list:
            leaf.supporting_obs_ids.append(o.obs_id)
            update_rule_mean(leaf, o.gain)
            o.assigned_leaf_id = leaf.leaf_id
        (skill.l2_positive if s.polarity == "positive" else skill.l2_negative).append(leaf)
        outcome.standalone_created += 1
    return outcome


@dataclass(frozen=True)
class MergeCluster:
    group_label: str
    skill_ids: tuple
    reason: str = ""


def apply_merge(library: SkillLibrary, clusters) -> list:
    """Collapse each cluster into one skill, preserving all rules and evidence.

    The merged L1 comes from the member with the most observations (ties go
    to the lexicographically smallest id). Leaf and obs ids are re-issued
    and every supporting reference is remapped, so nothing dangles.
    """
    all_ids = []
    for cluster in clusters:
        if len(cluster.skill_ids) < 2:
            raise SingletonCluster(cluster.group_label)
        for sid in cluster.skill_ids:
            library.get_skill(sid)
            all_ids.append(sid)
    if len(all_ids) != len(set(all_ids)):
        raise OverlappingClusters("a skill appears in more than one cluster")

    merged_skills = []
    for cluster in clusters:
        # Members sorted by id so max() resolves observation-count ties to
        # the lexicographically smallest skill_id.
        members = sorted(
            (library.get_skill(sid) for sid in cluster.skill_ids),
            key=lambda s: s.skill_id,
        )
        anchor = max(members, key=lambda s: len(s.l3_observations))
        label = cluster.group_label
        validate_skill_id(label)
        if label in set(library.skill_ids()) - {m.skill_id for m in members}:
            raise DuplicateSkillId(label)

        merged = Skill(
            skill_id=label,
            task_family=sorted({t for m in members for t in m.task_family}),
            l1_structure=anchor.l1_structure,
            l1_condition=anchor.l1_condition,
            imported=all(m.imported for m in members),
        )
        obs_map = {}  # (member_id, old_obs_id) -> new_obs_id
        obs_origin = []  # (obs, member_id) pairs, for leaf-reference remapping
        for m in members:
            for obs in m.l3_observations:
                new_id = merged.new_obs_id()
                obs_map[(m.skill_id, obs.obs_id)] = new_id
                obs_origin.append((obs, m.skill_id))
                obs.obs_id = new_id
                obs.attributed_skill = label
                merged.l3_observations.append(obs)
        leaf_map = {}  # (member_id, old_leaf_id) -> new_leaf_id
        for polarity, bucket in (("positive", merged.l2_positive), ("negative", merged.l2_negative)):
            for m in members:
                source = m.l2_positive if polarity == "positive" else m.l2_negative
                for leaf in source:
                    old_leaf_id = leaf.leaf_id
                    leaf.leaf_id = merged.new_leaf_id(polarity)
                    leaf_map[(m.skill_id, old_leaf_id)] = leaf.leaf_id
                    # Unmapped ids are frozen references from an imported
                    # source run; keep them verbatim.
                    leaf.supporting_obs_ids = [
                        obs_map.get((m.skill_id, oid), oid) for oid in leaf.supporting_obs_ids
                    ]
                    bucket.append(leaf)
        for obs, member_id in obs_origin:
            for attr in ("assigned_leaf_id", "intended_leaf_id"):
                val = getattr(obs, attr)
                if val is not None:
                    setattr(obs, attr, leaf_map.get((member_id, val), val))

        member_ids = {m.skill_id for m in members}
        library.skills = [s for s in library.skills if s.skill_id not in member_ids]
        library.skills.append(merged)
        merged_skills.append(merged)
    return merged_skills


def import_for_transfer(
    source_library: SkillLibrary,
    target_task: str | None = None,
    target_scale: int | None = None,
) -> SkillLibrary:
    """Build a transfer library: keep L1 and L2, drop raw source observations.

    Leaf mean_gain / support_count survive as frozen prior statistics, but
    with no L3 observations every imported skill starts at weight 0.5; only
    target-scale evidence moves the usefulness score.
    """
    validate_library(source_library)
    target = SkillLibrary(
        task=target_task if target_task is not None else source_library.task,
        scale=target_scale if target_scale is not None else source_library.scale,
    )
    for skill in source_library.skills:
        clone = Skill.from_json(copy.deepcopy(skill.to_json()))
        clone.l3_observations = []
        clone.next_obs_id_counter = 0
        clone.imported = True
        target.skills.append(clone)
    return target
