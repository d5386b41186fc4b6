"""Prompt templates for the proposal and library-maintenance calls.

Curly-brace fields like {task_desc} are runtime substitutions; everything
else is sent to the backend as is. The `<BODY_REQUIREMENTS>` marker expands
to the shared body-requirements block before substitution.
"""

VOXEL_LEGEND = """\
Voxel type integers (robot body):
  0 = EMPTY   (no robot voxel)
  1 = RIGID   (structural, cannot actuate)
  2 = SOFT    (deformable, passive)
  3 = H_ACT   (horizontal actuator -- expands/contracts horizontally)
  4 = V_ACT   (vertical actuator -- expands/contracts vertically)
  5 = FIXED   (environment geometry only; do not use in robot bodies)"""

BODY_REQUIREMENTS_BLOCK = """\
- body is a {grid_size} x {grid_size} integer grid (rows top-to-bottom, columns left-to-right)
- robot-body entries must be 0, 1, 2, 3, or 4
- the robot MUST be fully connected (all non-empty voxels reachable via 4-connectivity, no isolated groups)
- MUST contain at least one actuator (3=H_ACT or 4=V_ACT)
- do not use 5=FIXED in robot bodies"""

PROPOSE_COLD_START_TEMPLATE = """\
You are an expert soft-robot morphology designer for the EvoGym simulation platform.

Task: {task_desc}

Voxel grid legend:
{voxel_legend}

Generate exactly {n_designs} diverse robot designs as a JSON object with this schema:
{
  "designs": [
    {
      "body": <{grid_size}x{grid_size} integer matrix>,
      "reasoning": "brief explanation of design choices"
    }
  ]
}

Requirements:
<BODY_REQUIREMENTS>
- Explore diverse structures -- vary leg count, body shape, actuator placement, symmetry
- Every design must be structurally different from the others"""

PROPOSE_MUTATION_TEMPLATE = """\
You are an expert soft-robot morphology designer for the EvoGym simulation platform.

Task: {task_desc}

{transfer_context_block}
Voxel grid legend:
{voxel_legend}

Here is the parent design to mutate (fitness={parent_fitness:.3f}):
{parent_body}

Skill assignments for this proposal batch:
{skill_assignments_block}

{static_reference_block}
Previous mutation history on this exact parent:
{history_block}

Your task:
Propose exactly {n_designs} new mutations of this parent, one for each assigned slot above,
using a two-part process:

1. Direction from the assigned skill:
   Use the skill's L1 condition as the target structural archetype for that slot.
   If the skill has no L2 rules yet, still move the parent toward the L1 condition.

2. Tactics from L2 rules and exact-parent history:
   Use L2 positive rules as helpful sub-patterns when they fit this parent.
   Avoid L2 negative rules when relevant.
   Use exact-parent history to avoid repeats and avoid edits that already failed on this parent.

Each history entry gives you raw evidence only:
- the exact child_fitness achieved on this parent
- the voxel_diff from parent to child
- the full child_body after that mutation

Use this evidence directly to judge which edits seem promising, harmful, or ambiguous.

Hard constraints:
- You must produce new child bodies distinct from all history entries listed above.
- For each slot, use the specific assigned skill for that slot only.
- For each slot, also output `intended_leaf_id`: the L2 leaf you are trying to instantiate.
  IMPORTANT: this MUST be the leaf_id (e.g. "pos_0", "neg_1") shown in the skill's L2 rules block, NOT the claim string. Look for "leaf_id=..." in the rules listing.
  If the assigned skill has no leaves yet, output null.
- If an assigned skill is not a natural fit for this parent, propose the smallest edit that still moves in that skill direction without destroying the parent's core structure.
- Do not refuse to propose. An imperfect mutation is still useful learning material.

Generate exactly {n_designs} mutated variations of this parent as a JSON object with this schema:
{
  "designs": [
    {
      "slot_index": 0,
      "body": <{grid_size}x{grid_size} integer matrix>,
      "reasoning": "what you changed from the parent and why",
      "based_on_skill": "skill_id string or null",
      "intended_leaf_id": "leaf_id string or null"
    }
  ]
}

Requirements:
<BODY_REQUIREMENTS>
- Each design should modify {mutation_range} voxels from the parent -- keep what works, change what could improve
- L1 chooses the mutation direction; L2 rules and exact-parent history choose the concrete edits
- History can veto repeated or clearly harmful edits, but it should not replace the assigned L1 direction
- Do not repeat any exact child body already present in the history block
- Return exactly one design per slot_index listed above
- Every mutation must be structurally different from the parent and from the other mutations"""

ATTRIBUTE_TEMPLATE = """\
You are classifying robot designs by their main structural archetype.

Skill library (each skill is described by its L1 archetype plus top positive sub-patterns):
{skills_block}

Designs to classify:
{designs_block}

For each design, determine which skill it structurally matches.

Use L1 condition as the PRIMARY criterion: does the design exhibit the main
load-bearing arrangement described by L1? Use top_positive_leaves as supplementary
evidence to recognize concrete instances of successful sub-patterns within
that archetype.

If the design does not clearly match any skill's L1 archetype, return null.

Constraints:
- Use structural matching only -- do not consider fitness or task performance.
- A design may match at most one skill (return the best match).
- Prefer null over a weak match. Skills that don't fit will not gain useful evidence.
- L1 dominates over L2: if a design clearly matches one skill's L1 but somewhat
  resembles another skill's positive leaves, attribute by L1.

Return JSON:
{
  "assignments": [
    {"local_index": 0, "skill_id": "skill_id" or null, "reason": "short structural reason"}
  ]
}"""

ADD_TEMPLATE = """\
You are a robot design analyst. Your job is to add useful L1 structural skill identities for robot morphology search.

High-fitness designs (top 6 from this generation, body grids + fitness):
{high_designs}

Low-fitness designs (bottom 6 from this generation, body grids + fitness):
{low_designs}

Existing skills for this task (each with L1 condition + top 2 positive L2 leaves):
{existing_skills_block}

Look for at most ONE new L1 structural archetype in this generation.
Start from the high-fitness designs. If several share a simple main structure,
you may add it as a new skill. Use the low-fitness designs only as a light contrast
signal: it is enough if the structure is absent, broken, weaker, or less coherent there.
Be willing to add a new L1 when the high designs show a reusable structure that is not
an obvious duplicate of an existing L1 condition. Return no_add only when there is no
clear nameable structure in the high designs, or the best candidate is almost the same
as an existing L1 condition.

L1 should describe the robot's main connected load-bearing arrangement. Use simple
structure words such as frame, rail, column, bridge, arch, tripod, fork, wedge, tail,
crawler, shell, or beam. Avoid both performance goals and exact voxel-level details.
The Add step creates only the L1 identity; L2 and L3 must stay empty at birth.

Return JSON:
{
  "decision": {
    "action": "add" or "no_add",
    "inspired_obs_ids": [<int>, ...],
    "skill": {
      "skill_id": "short_name (max 3 words, snake_case, no version suffix)",
      "task_family": ["{task_name}"],
      "condition": "same text as l1.condition",
      "l1": {
        "structure": "one coarse structure word",
        "condition": "10-25 words describing one concrete structural archetype"
      },
      "l2": {
        "positive": [],
        "negative": [],
        "next_leaf_id_counter": 0
      },
      "l3": {
        "observations": [],
        "next_obs_id_counter": 0
      }
    } or null,
    "reasoning": {
      "supporting_high_labels": [<int>, ...],
      "contrast_signal": "short explanation of the high-vs-low structural difference",
      "nearest_existing_skill": "skill_id string or null",
      "duplicate_risk": "none" or "low" or "high",
      "why_add_or_no_add": "short explanation"
    }
  }
}

Rules:
- This is a lightweight discovery step, not a strict filter.
- Add when high-fitness designs reveal a simple reusable L1 structure and duplicate_risk is not high.
- Reject only generation-level summaries, performance goals, local patches, voxel-coordinate descriptions, and near-duplicate L1 conditions.
- skill_id must be max 3 words in snake_case, with no version suffix.
- If action is "add", inspired_obs_ids must list the observations that best exemplify this pattern; if no_add, set skill to null and inspired_obs_ids to [].
- For any added skill, l2.positive, l2.negative, and l3.observations MUST be empty lists.
- reasoning is audit-only. It will not be shown to later stages, so be explicit and honest.
- Candidates have gain > 0 (computed as child_fitness - parent_fitness). Only consider these for new L1 archetypes.
- When evaluating duplicate_risk, compare against both L1 conditions AND top_positive_leaves of existing skills.
  Two skills with similar archetype but different positive sub-patterns may still be distinct.
- inspired_obs_ids must list the obs_ids from the input that best exemplify this pattern (use the obs_id values shown).
{low_skill_hint}"""

DIAGNOSE_TEMPLATE = """\
You are diagnosing L2 leaves for a robot design skill.

Skill L1 condition: {l1_condition}

Existing L2 leaves (with current statistics):
{leaves_json}

Unassigned observations (need leaf decisions):
{unassigned_json}

Context observations (already assigned this generation; for distribution awareness only):
{context_json}

Generation statistics: gen_mean={gen_mean:.3f}, p25={gen_p25:.3f} (context only, not primary criterion).

{cold_start_note}

For each unassigned observation, decide its leaf assignment. Optionally propose new standalone leaves
that capture cross-cutting patterns visible across multiple obs.

Decision rules:
- Primary criterion: gain (= child_fitness - parent_fitness). gen_mean / p25 are weak context.
- Positive leaf creation (lenient): obs.gain > 0 AND reusable structural sub-pattern.
- Negative leaf creation (strict): obs.gain << 0 (significantly negative) AND obvious failure structure.
- Prefer "no_leaf" when there is no clear sub-pattern; the observation will be reconsidered in future generations
  (up to a hard cap of 3 attempts).
- standalone_new_leaves: only when >= 2 obs share the same not-yet-captured sub-pattern.
- description_update applies only to "match_existing" decisions.

Refinement granularity rules (apply to all claim/description text including standalone leaves):
- ALLOWED: relative regions ("lower-right corner", "upper half", "leftmost column"),
  shape language ("U-shape opening upward", "tapered top"),
  counts and proportions ("4 H_ACT", "30% soft voxels"),
  structural relations ("anchor connects to lower rail").
- FORBIDDEN: exact voxel coordinates ("voxel at (5,4)"), numeric row/column indices
  ("row 0", "column 4"), full-body matrix templates.
- Prefer "approximately N" / "at least N" over rigid "exactly N".

Return JSON:
{
  "leaf_assignments": [
    {"obs_id": <int>, "decision": "match_existing", "leaf_id": "<id>",
      "description_update": {"mode": "overwrite" | "append" | null, "text": "..." or null}},
    {"obs_id": <int>, "decision": "new_leaf", "polarity": "positive" | "negative",
      "claim": "snake_case_1_to_4_words", "description": "structural sentence"},
    {"obs_id": <int>, "decision": "no_leaf"}
  ],
  "standalone_new_leaves": [
    {"polarity": "positive" | "negative", "claim": "...", "description": "...",
      "supporting_obs_ids": [<int>, <int>, ...]}
  ]
}"""

MERGE_TEMPLATE = """\
You are checking a robot design skill library for obvious duplicate L1 skill identities.

Skills in the library (L1 identity only):
{skills_full_content}

Return merge clusters only for obvious duplicate or near-duplicate L1 skill identities.
The main comparison target is L1 condition: merge skills only when they describe the
same main structural archetype in different words.

L1 structure is only a weak hint. Two skills may both use "frame", "rail", or "column"
and still be different if their L1 conditions describe different connected layouts.

Return JSON:
{
  "clusters": [
    {"group_label": "short_name (max 3 words)", "skill_ids": ["id1", "id2"], "reason": "why these are the same mechanism"}
  ]
}

Rules:
- group_label must be max 3 words, descriptive, snake_case
- Return only multi-skill clusters that should be merged; return [] if no obvious duplicates exist
- Do not create single-skill groups
- Do not merge skills just because they share the same performance goal, same task, or same broad structure word
- If there is any meaningful doubt, keep the skills separate"""

TRANSFER_CONTEXT_SAME_GRID = """\
=== Transfer Context ===
The skill library below comes from a prior run on the same task
({current_env}, {source_grid} grid, source experiment "{source_exp}").
Treat the L1/L2 rules as validated patterns from previous experimentation.
Note: avg_gain values reflect the prior run's parent fitness distribution;
treat them as relative ranking signals, not absolute predictions."""

TRANSFER_CONTEXT_CROSS_GRID = """\
=== Transfer Context ===
Current task: {current_env} ({current_grid} voxel grid).
The skill library below comes from a prior run on a related task with a
{source_grid} voxel grid (source experiment "{source_exp}").

The skills' L1/L2 rules describe abstract structural principles (e.g.
"vertical rails joined by horizontal crossbeam") that should generalize
across grid sizes. The current {current_grid} grid affords richer / more
redundant structures than {source_grid}."""

REFERENCE_ADDENDUM_SAME_GRID = """\
Reference designs (top-fitness exemplars from the source run) are also
provided below. Use them as concrete examples of what the L1/L2 rules
look like in practice."""

REFERENCE_ADDENDUM_CROSS_GRID = """\
Reference designs (top-fitness exemplars) are also provided below as
concrete {source_grid} examples -- extract structural patterns from them,
do NOT copy voxel-level arrangements directly."""

TEMPLATES = {
    "propose_cold_start": PROPOSE_COLD_START_TEMPLATE,
    "propose": PROPOSE_MUTATION_TEMPLATE,
    "attribute": ATTRIBUTE_TEMPLATE,
    "add": ADD_TEMPLATE,
    "diagnose": DIAGNOSE_TEMPLATE,
    "merge": MERGE_TEMPLATE,
}
