"""Prompt rendering, backend dispatch, and response parsing/validation.

Three backends are supported: a remote chat-completion endpoint, a scripted
backend replaying fixture files, and a deterministic heuristic backend (see
heuristic.py). Backend output is never trusted: proposals pass the validity
gate (with repair) before evaluation, and malformed maintenance decisions
degrade to no-ops instead of aborting the generation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import requests

from morphoskill import prompt_templates
from morphoskill.skill_library import (
    AddDecision,
    AttributionDecision,
    LeafAssignment,
    MergeCluster,
    StandaloneLeaf,
    validate_skill_id,
)
from morphoskill.voxelbody import Body, Unrepairable, check_validity, diff, repair

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MODEL_NAME = "gpt-5.5"
DEFAULT_TIMEOUT_S = 120.0

_TOKEN_RE = re.compile(r"\{([a-z][a-z0-9_]*)(:[^{}]*)?\}")
_LEAF_ID_RE = re.compile(r"^(pos|neg)_\d+$")
_CLAIM_RE = re.compile(r"^[a-z][a-z0-9]*(_[a-z][a-z0-9]*){0,3}$")


class MissingPlaceholder(KeyError):
    pass


class BackendUnavailable(Exception):
    pass


class BackendTimeout(BackendUnavailable):
    pass


class _TransportError(Exception):
    """Internal: a failure worth one retry before giving up."""

    def __init__(self, message, timed_out=False):
        super().__init__(message)
        self.timed_out = timed_out


@dataclass
class PromptRequest:
    op_kind: str  # propose | attribute | add | diagnose | merge
    rendered_text: str
    expected_schema: str
    generation: int
    ordinal: int
    metadata: dict = field(default_factory=dict)


@dataclass
class BackendResponse:
    raw_text: str
    parsed: object = None
    valid_schema: bool = False


@dataclass
class ProposalSlot:
    slot_index: int
    assigned_skill: str | None
    intended_leaf_id: str | None
    child: Body | None
    reasoning: str = ""
    repaired: bool = False
    fallback: bool = False
    out_of_range: bool = False


@dataclass
class ParseOutcome:
    """Validated decision value plus any degradations applied on the way."""

    value: object
    ok: bool
    issues: list = field(default_factory=list)


def render_prompt(template_key: str, substitutions: dict,
                  generation: int = 0, ordinal: int = 0) -> PromptRequest:
    """Inline substitutions into a template; byte-identical otherwise.

    The `<BODY_REQUIREMENTS>` marker expands first, so grid_size reaches the
    shared requirements block. Raises MissingPlaceholder if the template
    needs a key the map does not provide.
    """
    if template_key not in prompt_templates.TEMPLATES:
        raise KeyError(f"unknown template {template_key!r}")
    text = prompt_templates.TEMPLATES[template_key].replace(
        "<BODY_REQUIREMENTS>", prompt_templates.BODY_REQUIREMENTS_BLOCK
    )
    required = {m.group(1) for m in _TOKEN_RE.finditer(text)}
    missing = required - set(substitutions)
    if missing:
        raise MissingPlaceholder(", ".join(sorted(missing)))

    def _sub(m):
        name, fmt = m.group(1), m.group(2)
        value = substitutions[name]
        return format(value, fmt[1:]) if fmt else str(value)

    rendered = _TOKEN_RE.sub(_sub, text)

    op_kind = "propose" if template_key.startswith("propose") else template_key
    if template_key == "propose_cold_start":
        prefix = ""
        for key in ("transfer_context_block", "static_reference_block"):
            block = substitutions.get(key) or ""
            if block:
                prefix += block + "\n\n"
        rendered = prefix + rendered

    metadata = {k: v for k, v in substitutions.items() if _json_safe(v)}
    return PromptRequest(
        op_kind=op_kind,
        rendered_text=rendered,
        expected_schema=template_key,
        generation=generation,
        ordinal=ordinal,
        metadata=metadata,
    )


def _json_safe(value) -> bool:
    try:
        json.dumps(value)
        return True
    except (TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class ScriptedBackend:
    """Replays fixture files named {op_kind}_{generation}_{ordinal}.txt."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)

    def complete(self, request: PromptRequest) -> str:
        path = self.fixture_dir / f"{request.op_kind}_{request.generation}_{request.ordinal}.txt"
        if not path.exists():
            raise BackendUnavailable(f"missing fixture {path.name}")
        return path.read_text()


class RemoteBackend:
    """Chat-completion endpoint speaking the usual /chat/completions shape."""

    def __init__(self, base_url, model_name=DEFAULT_MODEL_NAME,
                 temperature=DEFAULT_TEMPERATURE, timeout=DEFAULT_TIMEOUT_S,
                 api_key=None):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.temperature = temperature
        self.timeout = timeout
        self.api_key = api_key

    def complete(self, request: PromptRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model_name,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": request.rendered_text}],
        }
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload, headers=headers, timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except requests.Timeout as exc:
            raise _TransportError(str(exc), timed_out=True) from exc
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise _TransportError(str(exc)) from exc


def dispatch(request: PromptRequest, backend) -> BackendResponse:
    """One transport retry, then BackendUnavailable/BackendTimeout."""
    last = None
    for _ in range(2):
        try:
            return BackendResponse(raw_text=backend.complete(request))
        except _TransportError as exc:
            last = exc
    if last is not None and last.timed_out:
        raise BackendTimeout(str(last))
    raise BackendUnavailable(str(last))


# ---------------------------------------------------------------------------
# Response parsing and validation
# ---------------------------------------------------------------------------

def extract_first_json(text: str):
    """First balanced JSON object in the text, tolerant of surrounding prose."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    return None


@dataclass
class SlotPlan:
    slot_index: int
    skill_id: str | None = None
    leaf_ids: tuple = ()


@dataclass
class ProposeContext:
    grid_size: int
    slots: list
    parent: Body | None = None            # None for cold start
    history: tuple = ()                   # prior child bodies of this parent
    mutation_range: tuple | None = None   # (low, high) edit counts


def _parse_body(raw, grid_size: int) -> Body | None:
    try:
        body = Body(raw)
    except (ValueError, TypeError):
        return None
    return body if body.size == grid_size else None


def _gate_body(body: Body, slot: ProposalSlot):
    """Validity gate with repair; on failure mark the slot for GA fallback."""
    report = check_validity(body)
    if report.is_valid:
        slot.child = body
        return
    try:
        slot.child = repair(body)
        slot.repaired = True
    except Unrepairable:
        slot.child = None
        slot.fallback = True


def mutation_range_check(parent: Body, child: Body, range_low: int, range_high: int) -> str:
    """Classify the edit distance against the prompted mutation range."""
    count = diff(parent, child).count
    return "within" if range_low <= count <= range_high else "outside"


def parse_propose(response: BackendResponse, context: ProposeContext) -> ParseOutcome:
    """Validate a Propose response into per-slot bodies.

    Invalid bodies are repaired when possible; unrecoverable slots and
    parent-duplicates are flagged for GA fallback. Out-of-range edit counts
    are accepted but flagged. A leaf reference that is not a real leaf_id of
    the assigned skill is nulled, keeping the slot.
    """
    issues = []
    doc = extract_first_json(response.raw_text or "")
    designs = doc.get("designs") if isinstance(doc, dict) else None
    if not isinstance(designs, list):
        issues.append("no designs array found")
        designs = []
    else:
        response.parsed = doc
        response.valid_schema = True

    by_index = {}
    for i, entry in enumerate(designs):
        if not isinstance(entry, dict):
            continue
        idx = entry.get("slot_index", i)
        if isinstance(idx, int) and idx not in by_index:
            by_index[idx] = entry

    slots = []
    for plan in context.slots:
        slot = ProposalSlot(
            slot_index=plan.slot_index,
            assigned_skill=plan.skill_id,
            intended_leaf_id=None,
            child=None,
        )
        entry = by_index.get(plan.slot_index)
        if entry is None:
            slot.fallback = True
            issues.append(f"slot {plan.slot_index}: missing design")
            slots.append(slot)
            continue
        slot.reasoning = str(entry.get("reasoning", ""))

        leaf_ref = entry.get("intended_leaf_id")
        if isinstance(leaf_ref, str) and _LEAF_ID_RE.match(leaf_ref) and leaf_ref in plan.leaf_ids:
            slot.intended_leaf_id = leaf_ref
        elif leaf_ref is not None:
            issues.append(f"slot {plan.slot_index}: intended_leaf_id {leaf_ref!r} nulled")

        body = _parse_body(entry.get("body"), context.grid_size)
        if body is None:
            slot.fallback = True
            issues.append(f"slot {plan.slot_index}: unparseable body")
            slots.append(slot)
            continue
        _gate_body(body, slot)
        if slot.child is None:
            issues.append(f"slot {plan.slot_index}: unrepairable body")
            slots.append(slot)
            continue

        if context.parent is not None:
            count = diff(context.parent, slot.child).count
            if count == 0:
                # duplicates of the parent carry no information; GA takes the slot
                slot.child = None
                slot.fallback = True
                issues.append(f"slot {plan.slot_index}: child duplicates parent")
            elif context.mutation_range is not None:
                low, high = context.mutation_range
                if not (low <= count <= high):
                    slot.out_of_range = True
        slots.append(slot)

    return ParseOutcome(value=slots, ok=not issues, issues=issues)


def parse_attribute(response: BackendResponse, local_indices, known_skill_ids) -> ParseOutcome:
    """Map each local index to a skill id or None; unknown ids degrade to None."""
    issues = []
    doc = extract_first_json(response.raw_text or "")
    entries = doc.get("assignments") if isinstance(doc, dict) else None
    decided = {}
    if isinstance(entries, list):
        response.parsed = doc
        response.valid_schema = True
        for entry in entries:
            if not isinstance(entry, dict) or not isinstance(entry.get("local_index"), int):
                continue
            idx = entry["local_index"]
            sid = entry.get("skill_id")
            if sid is not None and sid not in known_skill_ids:
                issues.append(f"design {idx}: unknown skill {sid!r} nulled")
                sid = None
            decided[idx] = (sid, str(entry.get("reason", "")))
    else:
        issues.append("no assignments array found")
    result = {}
    for idx in local_indices:
        if idx not in decided:
            issues.append(f"design {idx}: no decision, defaulting to null")
            result[idx] = (None, "missing decision")
        else:
            result[idx] = decided[idx]
    return ParseOutcome(value=result, ok=not issues, issues=issues)


_NO_ADD = AddDecision(action="no_add")


def parse_add(response: BackendResponse, existing_skill_ids, pool_obs_ids, task: str) -> ParseOutcome:
    """Validate an Add decision; any schema violation degrades to no_add."""
    issues = []
    doc = extract_first_json(response.raw_text or "")
    decision = doc.get("decision") if isinstance(doc, dict) else None
    if not isinstance(decision, dict):
        return ParseOutcome(_NO_ADD, False, ["no decision object found"])
    response.parsed = doc
    action = decision.get("action")
    if action == "no_add":
        response.valid_schema = True
        return ParseOutcome(_NO_ADD, True, [])
    if action != "add":
        return ParseOutcome(_NO_ADD, False, [f"bad action {action!r}"])
    skill = decision.get("skill")
    if not isinstance(skill, dict):
        return ParseOutcome(_NO_ADD, False, ["add without skill payload"])
    l2 = skill.get("l2", {})
    l3 = skill.get("l3", {})
    if l2.get("positive") != [] or l2.get("negative") != [] or l3.get("observations") != []:
        return ParseOutcome(_NO_ADD, False, ["new skill must be born with empty L2/L3"])
    skill_id = skill.get("skill_id")
    try:
        validate_skill_id(skill_id)
    except Exception as exc:
        return ParseOutcome(_NO_ADD, False, [f"malformed skill_id: {exc}"])
    if skill_id in existing_skill_ids:
        return ParseOutcome(_NO_ADD, False, [f"duplicate skill_id {skill_id!r}"])
    l1 = skill.get("l1", {})
    structure = l1.get("structure")
    condition = l1.get("condition")
    if not isinstance(structure, str) or not isinstance(condition, str) or not condition:
        return ParseOutcome(_NO_ADD, False, ["missing l1 structure/condition"])
    inspired = tuple(
        str(i) for i in decision.get("inspired_obs_ids", []) if str(i) in set(pool_obs_ids)
    )
    family = skill.get("task_family") or [task]
    value = AddDecision(
        action="add",
        skill_id=skill_id,
        task_family=tuple(str(t) for t in family),
        l1_structure=structure,
        l1_condition=condition,
        inspired_obs_ids=inspired,
        reasoning=json.dumps(decision.get("reasoning", {}), sort_keys=True),
    )
    response.valid_schema = True
    return ParseOutcome(value, True, issues)


def parse_diagnose(response: BackendResponse, eligible_obs_ids, leaf_ids) -> ParseOutcome:
    """Validate Diagnose output; any violation drops the whole decision.

    A dropped decision is reported as value None; the caller then treats
    every eligible observation as no_leaf for this generation.
    """
    eligible = set(eligible_obs_ids)
    known_leaves = set(leaf_ids)
    doc = extract_first_json(response.raw_text or "")
    if not isinstance(doc, dict) or not isinstance(doc.get("leaf_assignments"), list):
        return ParseOutcome(None, False, ["no leaf_assignments array found"])
    assignments = []
    seen = set()
    for entry in doc["leaf_assignments"]:
        if not isinstance(entry, dict):
            return ParseOutcome(None, False, ["non-object leaf assignment"])
        obs_id = str(entry.get("obs_id"))
        if obs_id not in eligible or obs_id in seen:
            return ParseOutcome(None, False, [f"bad obs reference {obs_id!r}"])
        seen.add(obs_id)
        kind = entry.get("decision")
        if kind == "no_leaf":
            assignments.append(LeafAssignment(obs_id, "no_leaf"))
        elif kind == "match_existing":
            leaf_id = entry.get("leaf_id")
            if leaf_id not in known_leaves:
                return ParseOutcome(None, False, [f"unknown leaf_id {leaf_id!r}"])
            update = entry.get("description_update") or {}
            mode = update.get("mode")
            if mode not in (None, "overwrite", "append"):
                return ParseOutcome(None, False, [f"bad description_update mode {mode!r}"])
            assignments.append(
                LeafAssignment(
                    obs_id, "match_existing", leaf_id=leaf_id,
                    description_update_mode=mode,
                    description_update_text=update.get("text"),
                )
            )
        elif kind == "new_leaf":
            polarity = entry.get("polarity")
            claim = entry.get("claim")
            description = entry.get("description")
            if polarity not in ("positive", "negative"):
                return ParseOutcome(None, False, [f"bad polarity {polarity!r}"])
            if not isinstance(claim, str) or not _CLAIM_RE.match(claim):
                return ParseOutcome(None, False, [f"malformed claim {claim!r}"])
            if not isinstance(description, str) or not description:
                return ParseOutcome(None, False, ["missing leaf description"])
            assignments.append(
                LeafAssignment(obs_id, "new_leaf", polarity=polarity,
                               claim=claim, description=description)
            )
        else:
            return ParseOutcome(None, False, [f"unknown decision {kind!r}"])

    standalone = []
    for entry in doc.get("standalone_new_leaves", []) or []:
        if not isinstance(entry, dict):
            return ParseOutcome(None, False, ["non-object standalone leaf"])
        polarity = entry.get("polarity")
        claim = entry.get("claim")
        description = entry.get("description")
        support = [str(i) for i in entry.get("supporting_obs_ids", [])]
        if polarity not in ("positive", "negative"):
            return ParseOutcome(None, False, [f"bad standalone polarity {polarity!r}"])
        if not isinstance(claim, str) or not _CLAIM_RE.match(claim):
            return ParseOutcome(None, False, [f"malformed standalone claim {claim!r}"])
        if not isinstance(description, str) or not description:
            return ParseOutcome(None, False, ["missing standalone description"])
        if not set(support) <= eligible:
            return ParseOutcome(None, False, ["standalone references unknown obs"])
        standalone.append(
            StandaloneLeaf(polarity=polarity, claim=claim,
                           description=description, supporting_obs_ids=tuple(support))
        )
    response.parsed = doc
    response.valid_schema = True
    return ParseOutcome((assignments, standalone), True, [])


def parse_merge(response: BackendResponse, known_skill_ids) -> ParseOutcome:
    """Validate Merge clusters; any violation degrades to no clusters."""
    known = set(known_skill_ids)
    doc = extract_first_json(response.raw_text or "")
    if not isinstance(doc, dict) or not isinstance(doc.get("clusters"), list):
        return ParseOutcome([], False, ["no clusters array found"])
    clusters = []
    used = set()
    for entry in doc["clusters"]:
        if not isinstance(entry, dict):
            return ParseOutcome([], False, ["non-object cluster"])
        ids = entry.get("skill_ids")
        label = entry.get("group_label")
        if not isinstance(ids, list) or len(ids) < 2 or len(set(ids)) != len(ids):
            return ParseOutcome([], False, [f"bad cluster membership {ids!r}"])
        if not set(ids) <= known:
            return ParseOutcome([], False, [f"cluster references unknown skills {ids!r}"])
        if used & set(ids):
            return ParseOutcome([], False, ["overlapping clusters"])
        try:
            validate_skill_id(label)
        except Exception as exc:
            return ParseOutcome([], False, [f"bad group_label: {exc}"])
        used |= set(ids)
        clusters.append(
            MergeCluster(group_label=label, skill_ids=tuple(ids),
                         reason=str(entry.get("reason", "")))
        )
    response.parsed = doc
    response.valid_schema = True
    return ParseOutcome(clusters, True, [])


def attribution_decisions(parse_result: dict, index_to_obs_id: dict) -> list:
    """Convert attribute parse output into library attribution decisions."""
    return [
        AttributionDecision(obs_id=index_to_obs_id[idx], skill_id=sid, reason=reason)
        for idx, (sid, reason) in parse_result.items()
    ]


# ---------------------------------------------------------------------------
# Gateway: render -> dispatch -> audit log
# ---------------------------------------------------------------------------

class LlmGateway:
    """Tracks call ordinals per (op_kind, generation) and audits all traffic."""

    def __init__(self, backend, audit_path=None):
        self.backend = backend
        self.audit_path = Path(audit_path) if audit_path else None
        self._ordinals = {}

    def call(self, template_key: str, substitutions: dict, generation: int):
        op_kind = "propose" if template_key.startswith("propose") else template_key
        key = (op_kind, generation)
        ordinal = self._ordinals.get(key, 0)
        self._ordinals[key] = ordinal + 1
        request = render_prompt(template_key, substitutions,
                                generation=generation, ordinal=ordinal)
        response = dispatch(request, self.backend)
        if self.audit_path:
            record = {
                "op_kind": request.op_kind,
                "template": template_key,
                "generation": generation,
                "ordinal": ordinal,
                "prompt": request.rendered_text,
                "response": response.raw_text,
            }
            with self.audit_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return request, response
