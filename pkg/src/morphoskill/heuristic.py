"""Deterministic heuristic proposal backend.

Synthesizes schema-valid responses for every op kind without a network,
enabling no-LLM operation, reproducible end-to-end tests, and the control
arm of the all-LLM ablation. It reads the structured mirror entries
(underscore-prefixed keys) of the substitution map, so its behavior tracks
exactly the information the text blocks carry.

The backend is keyword-driven: rule text is matched against a small, fixed
motif vocabulary, and each motif maps to a concrete edit operator, an
attribution token, and an archetype it may propose to Add. All randomness
derives from (backend seed, op kind, generation, ordinal), so identical
requests always produce identical responses.
"""

from __future__ import annotations

import json
import re

import numpy as np

from morphoskill.voxelbody import (
    EMPTY,
    H_ACT,
    RIGID,
    SOFT,
    V_ACT,
    Body,
    Unrepairable,
    check_validity,
    random_valid_body,
    repair,
)

_OP_SALT = {"propose": 1, "attribute": 2, "add": 3, "diagnose": 4, "merge": 5}

# The motif vocabulary: every token here is computable from a body and
# findable in rule text. Attribution and proposal both speak this language.
MOTIF_VOCABULARY = (
    "actuator", "rigid", "soft", "support", "bottom", "base",
    "contact", "frame", "column", "spine", "balance",
)

_WORD_RE = re.compile(r"[a-z]+")


def text_tokens(text: str) -> set:
    """Motif-vocabulary words present in free text (case-insensitive)."""
    words = set(_WORD_RE.findall((text or "").lower()))
    return words & set(MOTIF_VOCABULARY)


def body_motif_tokens(body: Body) -> set:
    """Structural motif tokens of a body, from fixed documented predicates.

    actuator: any actuator cell            rigid/soft: >=20% of material
    support: >=half of actuators touch a rigid 4-neighbor
    bottom+base: bottom row >=60% filled   contact: soft cell in bottom row
    frame: >=3 rigid cells on the perimeter
    column+spine: some column fully non-empty
    balance: actuator fraction of material in [0.35, 0.65]
    """
    cells = body.cells
    n = body.size
    non_empty = int(np.count_nonzero(cells))
    tokens = set()
    if non_empty == 0:
        return tokens
    act_mask = (cells == H_ACT) | (cells == V_ACT)
    n_act = int(act_mask.sum())
    if n_act:
        tokens.add("actuator")
    if int((cells == RIGID).sum()) >= 0.2 * non_empty:
        tokens.add("rigid")
    if int((cells == SOFT).sum()) >= 0.2 * non_empty:
        tokens.add("soft")
    if n_act:
        supported = 0
        for r, c in zip(*np.nonzero(act_mask)):
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= nr < n and 0 <= nc < n and cells[nr, nc] == RIGID:
                    supported += 1
                    break
        if supported >= 0.5 * n_act:
            tokens.add("support")
    bottom = cells[n - 1]
    if int(np.count_nonzero(bottom)) >= 0.6 * n:
        tokens.update(("bottom", "base"))
    if bool(np.any(bottom == SOFT)):
        tokens.add("contact")
    perimeter = np.concatenate([cells[0], cells[-1], cells[1:-1, 0], cells[1:-1, -1]])
    if int((perimeter == RIGID).sum()) >= 3:
        tokens.add("frame")
    if bool(np.any(np.all(cells != EMPTY, axis=0))):
        tokens.update(("column", "spine"))
    if n_act and 0.35 <= n_act / non_empty <= 0.65:
        tokens.add("balance")
    return tokens


# Archetypes the Add step may propose, in fixed priority order:
# (required tokens, skill_id, structure word, L1 condition 10-25 words).
ADD_CATALOG = (
    ({"support"}, "actuator_support_frame", "frame",
     "rigid support material placed directly beside actuator cells so actuation "
     "pushes against a braced load path"),
    ({"bottom", "contact"}, "soft_contact_base", "base",
     "a soft contact band along the lowest body surface backed by firmer "
     "material above it"),
    ({"bottom"}, "solid_lower_base", "base",
     "a mostly filled lowest band that carries body weight and keeps ground "
     "contact stable"),
    ({"column"}, "vertical_spine", "column",
     "a full-height connected column of material forming a central spine "
     "through the body"),
    ({"frame"}, "perimeter_frame", "frame",
     "a rigid outer frame along the body boundary enclosing softer or active "
     "interior cells"),
    ({"balance"}, "balanced_actuation", "band",
     "a roughly even split between actuator cells and passive cells spread "
     "across the body"),
)

# Edit-pattern classification for Diagnose: pattern key ->
# (positive claim/description, negative claim/description).
DIAGNOSE_CATALOG = {
    "support": (
        ("rigid_actuator_support",
         "rigid cells placed beside actuators bracing actuation against a stiff load path"),
        ("overbraced_actuators",
         "excess rigid material around actuators that stiffens the body without useful motion"),
    ),
    "bottom": (
        ("stronger_lower_base",
         "additional material along the lowest band improving ground support"),
        ("brittle_bottom_band",
         "edits along the lowest band that break stable ground support"),
    ),
    "contact": (
        ("soft_contact_pad",
         "soft cells added at the ground surface forming a compliant contact pad"),
        ("mushy_contact_layer",
         "soft ground-surface cells without firm backing that absorb actuation"),
    ),
    "actuator": (
        ("extra_actuation",
         "additional actuator cells extending the active region of the body"),
        ("unanchored_actuation",
         "added actuators without neighboring support producing wasted deformation"),
    ),
    "removal": (
        ("trimmed_material",
         "removal of cells thinning the body while keeping its working structure"),
        ("weakened_structure",
         "removed cells that cut load paths or thin the body past usefulness"),
    ),
    "mixed": (
        ("mixed_structural_edit",
         "a combined structural edit without one dominant pattern"),
        ("incoherent_edit",
         "a combined edit that disrupts several regions at once"),
    ),
}

NEGATIVE_GAIN_THRESHOLD = -0.5


def classify_edit(parent: Body, child: Body) -> str:
    """Dominant pattern of the parent->child edit, in DIAGNOSE_CATALOG keys."""
    n = child.size
    added_rigid_near_act = 0
    added_bottom = 0
    added_soft_bottom = 0
    added_act = 0
    removed = 0
    pc, cc = parent.cells, child.cells
    for r in range(n):
        for c in range(n):
            old, new = int(pc[r, c]), int(cc[r, c])
            if old == new:
                continue
            if new == EMPTY:
                removed += 1
                continue
            if new == RIGID:
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < n and 0 <= nc < n and cc[nr, nc] in (H_ACT, V_ACT):
                        added_rigid_near_act += 1
                        break
            if new in (H_ACT, V_ACT):
                added_act += 1
            if r == n - 1:
                added_bottom += 1
                if new == SOFT:
                    added_soft_bottom += 1
    scores = (
        ("support", added_rigid_near_act),
        ("contact", added_soft_bottom),
        ("bottom", added_bottom),
        ("actuator", added_act),
        ("removal", removed),
    )
    best = max(scores, key=lambda kv: kv[1])
    return best[0] if best[1] > 0 else "mixed"


def _neighbors(r, c, n):
    return [(nr, nc) for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
            if 0 <= nr < n and 0 <= nc < n]


class HeuristicBackend:
    """Deterministic stand-in proposer; see module docstring."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    # -- entry point --------------------------------------------------------

    def complete(self, request) -> str:
        rng = np.random.default_rng(
            [self.seed, _OP_SALT[request.op_kind], request.generation, request.ordinal]
        )
        meta = request.metadata
        if request.op_kind == "propose":
            if request.expected_schema == "propose_cold_start":
                return self._cold_start(meta, rng)
            return self._propose(meta, rng)
        if request.op_kind == "attribute":
            return self._attribute(meta)
        if request.op_kind == "add":
            return self._add(meta)
        if request.op_kind == "diagnose":
            return self._diagnose(meta)
        if request.op_kind == "merge":
            return self._merge(meta)
        raise ValueError(f"unsupported op kind {request.op_kind!r}")

    # -- propose ------------------------------------------------------------

    def _cold_start(self, meta, rng) -> str:
        grid = int(meta["_grid_size"])
        n_designs = int(meta["_n_designs"])
        designs = []
        for i in range(n_designs):
            density = 0.45 + 0.5 * rng.random()
            p_act = 0.2 + 0.35 * rng.random()
            body = self._structured_random(grid, density, p_act, rng)
            designs.append(
                {
                    "body": body.to_rows(),
                    "reasoning": f"seed design {i}: density {density:.2f}, actuator share {p_act:.2f}",
                }
            )
        return json.dumps({"designs": designs})

    def _structured_random(self, grid, density, p_act, rng) -> Body:
        # Designer prior: bodies get denser toward the ground so they stand
        # and touch the floor, with actuators mixed throughout.
        for _ in range(30):
            cells = np.zeros((grid, grid), dtype=np.int64)
            for r in range(grid):
                row_fill = density * (0.55 + 0.65 * (r + 1) / grid)
                for c in range(grid):
                    if rng.random() >= min(row_fill, 0.97):
                        continue
                    if rng.random() < p_act:
                        cells[r, c] = H_ACT if rng.random() < 0.5 else V_ACT
                    else:
                        cells[r, c] = RIGID if rng.random() < 0.55 else SOFT
            body = Body(cells)
            if check_validity(body).is_valid:
                return body
            try:
                return repair(body)
            except Unrepairable:
                continue
        return random_valid_body(grid, rng)

    def _propose(self, meta, rng) -> str:
        grid = int(meta["_grid_size"])
        parent = Body(meta["_parent"])
        lo, hi = meta["_mutation_range"]
        history = {Body(rows).key() for rows in meta.get("_history", [])}
        omit_rules = bool(meta.get("_omit_rules", False))
        designs = []
        taken = {parent.key()} | history
        for slot in meta["_slots"]:
            rule_text = slot.get("l1_text", "")
            pos_rules = slot.get("pos_rules", [])
            if not omit_rules:
                rule_text += " " + " ".join(
                    f"{r.get('claim', '')} {r.get('description', '')}" for r in pos_rules
                )
            keywords = text_tokens(rule_text)
            n_edits = int(rng.integers(lo, hi + 1))
            child = self._edit_toward(parent, keywords, n_edits, rng, taken)
            taken.add(child.key())
            intended = None
            if pos_rules and not omit_rules:
                ranked = sorted(
                    pos_rules, key=lambda r: (-float(r.get("mean_gain", 0.0)), r["leaf_id"])
                )
                intended = ranked[0]["leaf_id"]
            designs.append(
                {
                    "slot_index": slot["slot_index"],
                    "body": child.to_rows(),
                    "reasoning": "edit toward " + (" ".join(sorted(keywords)) or "free mutation"),
                    "based_on_skill": slot.get("skill_id"),
                    "intended_leaf_id": intended,
                }
            )
        return json.dumps({"designs": designs})

    def _edit_toward(self, parent, keywords, n_edits, rng, taken) -> Body:
        """Apply n_edits keyword-directed edits; guarantee a valid, new child."""
        for _ in range(40):
            cells = np.array(parent.cells)
            for _ in range(max(1, n_edits)):
                self._one_edit(cells, keywords, rng)
            child = Body(cells)
            if not check_validity(child).is_valid:
                try:
                    child = repair(child)
                except Unrepairable:
                    continue
            if child.key() not in taken:
                return child
        # deterministic last resort: free random edits until unseen
        for _ in range(200):
            cells = np.array(parent.cells)
            for _ in range(max(1, n_edits)):
                r, c = rng.integers(0, parent.size, 2)
                cells[r, c] = rng.integers(0, 5)
            child = Body(cells)
            if check_validity(child).is_valid and child.key() not in taken:
                return child
        return parent

    def _one_edit(self, cells, keywords, rng):
        n = cells.shape[0]
        act_cells = list(zip(*np.nonzero((cells == H_ACT) | (cells == V_ACT))))
        ops = []
        if "support" in keywords or ({"rigid", "actuator"} <= keywords):
            ops.append("brace_actuator")
        if keywords & {"bottom", "base"}:
            ops.append("fill_bottom")
        if "contact" in keywords or ({"soft", "bottom"} <= keywords):
            ops.append("soft_bottom")
        if keywords & {"column", "spine"}:
            ops.append("grow_column")
        if "actuator" in keywords and "support" not in keywords:
            ops.append("grow_actuator")
        if "balance" in keywords:
            ops.append("rebalance")
        if "frame" in keywords:
            ops.append("frame_edge")
        if not ops:
            ops.append("free")
        op = ops[int(rng.integers(0, len(ops)))]

        def adjacent_empty_of(targets):
            spots = []
            for r, c in targets:
                for nr, nc in _neighbors(r, c, n):
                    if cells[nr, nc] == EMPTY:
                        spots.append((nr, nc))
            return spots

        material = list(zip(*np.nonzero(cells)))
        if op == "brace_actuator" and act_cells:
            spots = adjacent_empty_of(act_cells)
            if spots:
                r, c = spots[int(rng.integers(0, len(spots)))]
                cells[r, c] = RIGID
                return
        if op == "fill_bottom":
            empties = [(n - 1, c) for c in range(n) if cells[n - 1, c] == EMPTY]
            anchored = [p for p in empties if any(cells[q] != EMPTY for q in _neighbors(*p, n))]
            if anchored:
                r, c = anchored[int(rng.integers(0, len(anchored)))]
                cells[r, c] = RIGID if rng.random() < 0.6 else V_ACT
                return
        if op == "soft_bottom":
            spots = [(n - 1, c) for c in range(n)]
            anchored = [
                p for p in spots
                if cells[p] in (EMPTY, RIGID) and any(cells[q] != EMPTY for q in _neighbors(*p, n))
            ]
            if anchored:
                r, c = anchored[int(rng.integers(0, len(anchored)))]
                cells[r, c] = SOFT
                return
        if op == "grow_column" and material:
            counts = [int(np.count_nonzero(cells[:, c])) for c in range(n)]
            c = int(np.argmax(counts))
            empties = [(r, c) for r in range(n) if cells[r, c] == EMPTY
                       and any(cells[q] != EMPTY for q in _neighbors(r, c, n))]
            if empties:
                r, c = empties[int(rng.integers(0, len(empties)))]
                cells[r, c] = RIGID if rng.random() < 0.5 else V_ACT
                return
        if op == "grow_actuator" and material:
            spots = adjacent_empty_of(act_cells or material)
            if spots:
                r, c = spots[int(rng.integers(0, len(spots)))]
                cells[r, c] = H_ACT if rng.random() < 0.5 else V_ACT
                return
        if op == "rebalance" and material:
            non_act = [p for p in material if cells[p] in (RIGID, SOFT)]
            n_act = len(act_cells)
            if n_act < len(material) / 2 and non_act:
                r, c = non_act[int(rng.integers(0, len(non_act)))]
                cells[r, c] = H_ACT if rng.random() < 0.5 else V_ACT
                return
            if act_cells:
                r, c = act_cells[int(rng.integers(0, len(act_cells)))]
                cells[r, c] = RIGID
                return
        if op == "frame_edge" and material:
            edge = [(r, c) for r in range(n) for c in range(n)
                    if (r in (0, n - 1) or c in (0, n - 1)) and cells[r, c] == EMPTY
                    and any(cells[q] != EMPTY for q in _neighbors(r, c, n))]
            if edge:
                r, c = edge[int(rng.integers(0, len(edge)))]
                cells[r, c] = RIGID
                return
        # fallback: resample one cell adjacent to material, keeps connectivity likely
        if material:
            spots = adjacent_empty_of(material) or material
            r, c = spots[int(rng.integers(0, len(spots)))]
            cells[r, c] = rng.integers(1, 5)
        else:
            cells[int(rng.integers(0, n)), int(rng.integers(0, n))] = H_ACT

    # -- attribute ----------------------------------------------------------

    def _skill_tokens(self, skill) -> set:
        text = f"{skill.get('l1_structure', '')} {skill.get('l1_condition', '')} " + " ".join(
            skill.get("positive_texts", [])
        )
        return text_tokens(text)

    def _attribute(self, meta) -> str:
        skills = meta["_skills"]
        assignments = []
        for design in meta["_designs"]:
            tokens = body_motif_tokens(Body(design["body"])) | text_tokens(
                design.get("reasoning", "")
            )
            best, best_score = None, 0
            for skill in sorted(skills, key=lambda s: s["skill_id"]):
                score = len(tokens & self._skill_tokens(skill))
                if score > best_score:
                    best, best_score = skill["skill_id"], score
            if best_score < 2:
                best = None
            assignments.append(
                {
                    "local_index": design["local_index"],
                    "skill_id": best,
                    "reason": f"keyword overlap {best_score}",
                }
            )
        return json.dumps({"assignments": assignments})

    # -- add ----------------------------------------------------------------

    def _add(self, meta) -> str:
        existing = meta["_existing"]
        existing_ids = {s["skill_id"] for s in existing}
        pool = [o for o in meta["_pool"] if float(o["gain"]) > 0]
        no_add = {"decision": {"action": "no_add", "inspired_obs_ids": [], "skill": None}}
        for required, skill_id, structure, condition in ADD_CATALOG:
            if skill_id in existing_ids:
                continue
            cond_tokens = set(_WORD_RE.findall(condition))
            if any(
                _jaccard(cond_tokens, set(_WORD_RE.findall(s.get("l1_condition", "")))) >= 0.5
                for s in existing
            ):
                continue
            inspired = [
                o["obs_id"] for o in pool
                if required <= body_motif_tokens(Body(o["body"]))
            ]
            if len(inspired) >= 2:
                skill = {
                    "skill_id": skill_id,
                    "task_family": [meta["_task"]],
                    "condition": condition,
                    "l1": {"structure": structure, "condition": condition},
                    "l2": {"positive": [], "negative": [], "next_leaf_id_counter": 0},
                    "l3": {"observations": [], "next_obs_id_counter": 0},
                }
                decision = {
                    "action": "add",
                    "inspired_obs_ids": inspired[:6],
                    "skill": skill,
                    "reasoning": {
                        "supporting_high_labels": [],
                        "contrast_signal": f"{'+'.join(sorted(required))} recurs in positive-gain designs",
                        "nearest_existing_skill": None,
                        "duplicate_risk": "none",
                        "why_add_or_no_add": "recurring structure not yet represented",
                    },
                }
                return json.dumps({"decision": decision})
        return json.dumps(no_add)

    # -- diagnose -----------------------------------------------------------

    def _diagnose(self, meta) -> str:
        leaves = meta["_leaves"]
        claim_to_leaf = {(l["polarity"], l["claim"]): l["leaf_id"] for l in leaves}
        pending = set()  # claims created earlier in this same call
        assignments = []
        for obs in meta["_unassigned"]:
            gain = float(obs["gain"])
            pattern = classify_edit(Body(obs["parent_body"]), Body(obs["child_body"]))
            pos, neg = DIAGNOSE_CATALOG[pattern]
            if gain > 0:
                polarity, (claim, description) = "positive", pos
            elif gain < NEGATIVE_GAIN_THRESHOLD:
                polarity, (claim, description) = "negative", neg
            else:
                assignments.append({"obs_id": obs["obs_id"], "decision": "no_leaf"})
                continue
            leaf_id = claim_to_leaf.get((polarity, claim))
            if leaf_id:
                assignments.append(
                    {
                        "obs_id": obs["obs_id"],
                        "decision": "match_existing",
                        "leaf_id": leaf_id,
                        "description_update": {"mode": None, "text": None},
                    }
                )
            elif (polarity, claim) in pending:
                # the leaf id does not exist yet; reconsider next generation
                assignments.append({"obs_id": obs["obs_id"], "decision": "no_leaf"})
            else:
                pending.add((polarity, claim))
                assignments.append(
                    {
                        "obs_id": obs["obs_id"],
                        "decision": "new_leaf",
                        "polarity": polarity,
                        "claim": claim,
                        "description": description,
                    }
                )
        return json.dumps({"leaf_assignments": assignments, "standalone_new_leaves": []})

    # -- merge --------------------------------------------------------------

    def _merge(self, meta) -> str:
        skills = sorted(meta["_skills"], key=lambda s: s["skill_id"])
        clusters = []
        used = set()
        for i, a in enumerate(skills):
            if a["skill_id"] in used:
                continue
            group = [a["skill_id"]]
            a_tokens = set(_WORD_RE.findall(a.get("l1_condition", "")))
            for b in skills[i + 1 :]:
                if b["skill_id"] in used:
                    continue
                if a.get("l1_structure") != b.get("l1_structure"):
                    continue
                b_tokens = set(_WORD_RE.findall(b.get("l1_condition", "")))
                if _jaccard(a_tokens, b_tokens) >= 0.6:
                    group.append(b["skill_id"])
            if len(group) >= 2:
                used.update(group)
                clusters.append(
                    {
                        "group_label": group[0],
                        "skill_ids": group,
                        "reason": "same structure word and near-identical condition",
                    }
                )
        return json.dumps({"clusters": clusters})


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
