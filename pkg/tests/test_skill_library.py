import json

import numpy as np
import pytest

from morphoskill.skill_library import (
    AddDecision,
    AttributionDecision,
    DuplicateDecision,
    DuplicateSkillId,
    EmptyCandidates,
    LeafAssignment,
    MalformedSkillId,
    MergeCluster,
    Observation,
    OverlappingClusters,
    RuleLeaf,
    SchemaViolation,
    SingletonCluster,
    Skill,
    SkillLibrary,
    StandaloneLeaf,
    UnassignedPool,
    UnknownSkillId,
    apply_add,
    apply_attribution,
    apply_diagnose,
    apply_merge,
    import_for_transfer,
    pool_pressure,
    retrieve,
    sample_skill,
    skill_weight,
    update_rule_mean,
    validate_library,
)
from morphoskill.voxelbody import Body


def tiny_body(code=3):
    cells = [[0, 0, 0], [0, code, 0], [0, 0, 0]]
    return Body(cells)


def make_obs(obs_id, gain, task="Walker-v0", path="B"):
    return Observation(
        obs_id=obs_id,
        child_body=tiny_body(),
        parent_body=tiny_body(4),
        task=task,
        scale=3,
        fitness=1.0 + gain,
        gain=gain,
        proposal_path=path,
    )


def make_skill(skill_id="portal_frame", gains=(), task="Walker-v0", imported=False):
    skill = Skill(
        skill_id=skill_id,
        task_family=[task],
        l1_structure="frame",
        l1_condition="rigid load-bearing arch wrapped around central actuators with grounded legs",
        imported=imported,
    )
    for g in gains:
        obs = make_obs(skill.new_obs_id(), g)
        obs.attributed_skill = skill_id
        skill.l3_observations.append(obs)
    return skill


def weight_oracle(gains, delta_max):
    """Direct transcription of the smoothed usefulness formula."""
    total = 0.0
    for g in gains:
        x = g / delta_max
        total += 0.0 if x < 0 else (1.0 if x > 1 else x)
    return (1.0 + total) / (2.0 + len(gains))


class TestSkillWeight:
    def test_no_evidence_is_half(self):
        assert skill_weight(make_skill(), 2.0) == 0.5

    def test_hand_computed(self):
        assert skill_weight(make_skill(gains=[2.0, 2.0]), 2.0) == 0.75
        assert skill_weight(make_skill(gains=[-1.0]), 2.0) == pytest.approx(1 / 3)

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            gains = rng.uniform(-5, 5, size=rng.integers(0, 51)).tolist()
            w = skill_weight(make_skill(gains=gains), 2.0)
            assert w == weight_oracle(gains, 2.0)
            assert 0.0 < w <= 1.0

    def test_nondecreasing_in_gain(self):
        base = [0.5, -0.2, 1.1]
        for bump in (0.1, 1.0, 10.0):
            w0 = skill_weight(make_skill(gains=base), 2.0)
            bumped = [base[0] + bump] + base[1:]
            assert skill_weight(make_skill(gains=bumped), 2.0) >= w0


class TestSampleSkill:
    def test_single_candidate(self):
        s = make_skill()
        assert sample_skill([s], 2.0, rng_seed=0) is s

    def test_empty_raises(self):
        with pytest.raises(EmptyCandidates):
            sample_skill([], 2.0, rng_seed=0)

    def test_uniform_pair_frequency(self):
        a, b = make_skill("skill_a"), make_skill("skill_b")
        hits = sum(sample_skill([a, b], 2.0, rng_seed=i) is a for i in range(10000))
        assert abs(hits / 10000 - 0.5) < 0.02

    def test_weighted_frequency(self):
        heavy = make_skill("heavy", gains=[2.0, 2.0])  # weight 0.75
        light = make_skill("light")  # weight 0.5... normalized 0.6 / 0.4
        p_heavy = 0.75 / (0.75 + 0.5)
        hits = sum(sample_skill([heavy, light], 2.0, rng_seed=i) is heavy for i in range(10000))
        assert abs(hits / 10000 - p_heavy) < 0.02

    def test_deterministic(self):
        a, b = make_skill("skill_a"), make_skill("skill_b")
        picks1 = [sample_skill([a, b], 2.0, rng_seed=i).skill_id for i in range(50)]
        picks2 = [sample_skill([a, b], 2.0, rng_seed=i).skill_id for i in range(50)]
        assert picks1 == picks2


class TestRetrieve:
    def library(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        lib.skills = [
            make_skill("lower_bridge"),
            make_skill("portal_frame"),
            make_skill("twin_spine"),
        ]
        return lib

    def test_task_family_match(self):
        lib = self.library()
        assert len(retrieve(lib, "Walker-v0", 5, generation=3)) == 3
        assert retrieve(lib, "Pusher-v0", 5, generation=3) == []

    def test_prior_only_horizon(self):
        lib = self.library()
        lib.skills[0].imported = True
        lib.skills[1].imported = True
        got = retrieve(lib, "Walker-v0", 10, generation=2, prior_only_horizon=5)
        assert sorted(s.skill_id for s in got) == ["lower_bridge", "portal_frame"]
        got = retrieve(lib, "Walker-v0", 10, generation=6, prior_only_horizon=5)
        assert len(got) == 3


class TestUpdateRuleMean:
    def test_first_observation(self):
        leaf = RuleLeaf(leaf_id="pos_0", polarity="positive", claim="c", description="d")
        update_rule_mean(leaf, 3.2)
        assert leaf.support_count == 1
        assert leaf.mean_gain == 3.2

    def test_hand_example(self):
        leaf = RuleLeaf(
            leaf_id="pos_0", polarity="positive", claim="c", description="d",
            support_count=1, mean_gain=1.0, supporting_obs_ids=["obs_0"],
        )
        leaf.supporting_obs_ids.append("obs_1")
        update_rule_mean(leaf, 3.0)
        assert leaf.support_count == 2
        assert leaf.mean_gain == 2.0

    def test_sequence_equals_mean(self):
        leaf = RuleLeaf(leaf_id="pos_0", polarity="positive", claim="c", description="d")
        for g in (1.0, 2.0, 3.0):
            update_rule_mean(leaf, g)
        assert leaf.mean_gain == pytest.approx(2.0, abs=1e-12)

    def test_random_sequences_against_arithmetic_mean(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            gains = rng.uniform(-5, 5, size=rng.integers(1, 40))
            leaf = RuleLeaf(leaf_id="pos_0", polarity="positive", claim="c", description="d")
            for g in gains:
                update_rule_mean(leaf, float(g))
            assert leaf.mean_gain == pytest.approx(float(np.mean(gains)), abs=1e-9)


class TestAttribution:
    def test_null_goes_to_pool(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        obs = make_obs("p0", 1.0)
        apply_attribution(lib, [obs], [AttributionDecision("p0", None)])
        assert len(lib.unassigned_pool) == 1
        assert lib.get_skill("skill_a").l3_observations == []

    def test_assignment_changes_weight(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        before = skill_weight(lib.get_skill("skill_a"), 2.0)
        obs = make_obs("p0", 2.0)
        apply_attribution(lib, [obs], [AttributionDecision("p0", "skill_a")])
        skill = lib.get_skill("skill_a")
        assert len(skill.l3_observations) == 1
        after = skill_weight(skill, 2.0)
        assert after == weight_oracle([2.0], 2.0) != before
        assert skill.l3_observations[0].obs_id == "obs_0"

    def test_two_obs_two_skills(self):
        lib = SkillLibrary(
            task="Walker-v0", scale=5, skills=[make_skill("skill_a"), make_skill("skill_b")]
        )
        observations = [make_obs("p0", 1.0), make_obs("p1", 2.0)]
        apply_attribution(
            lib,
            observations,
            [AttributionDecision("p0", "skill_a"), AttributionDecision("p1", "skill_b")],
        )
        assert len(lib.get_skill("skill_a").l3_observations) == 1
        assert len(lib.get_skill("skill_b").l3_observations) == 1

    def test_unknown_skill(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        with pytest.raises(UnknownSkillId):
            apply_attribution(lib, [make_obs("p0", 1.0)], [AttributionDecision("p0", "nope")])

    def test_duplicate_decision(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        with pytest.raises(DuplicateDecision):
            apply_attribution(
                lib,
                [make_obs("p0", 1.0)],
                [AttributionDecision("p0", "skill_a"), AttributionDecision("p0", None)],
            )

    def test_reattribution_moves_out_of_pool(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        obs = make_obs("p0", 1.0)
        apply_attribution(lib, [obs], [AttributionDecision("p0", None)])
        assert pool_pressure(lib.unassigned_pool, 1)
        apply_attribution(lib, [obs], [AttributionDecision("p0", "skill_a")])
        assert len(lib.unassigned_pool) == 0
        assert len(lib.get_skill("skill_a").l3_observations) == 1


class TestAdd:
    def test_no_add(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        assert apply_add(lib, lib.unassigned_pool, AddDecision(action="no_add")) is None
        assert lib.skills == []

    def test_add_creates_empty_skill(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        decision = AddDecision(
            action="add",
            skill_id="portal_frame",
            task_family=("Walker-v0",),
            l1_structure="frame",
            l1_condition="a rigid arch frame bridging over actuators near the base",
        )
        skill = apply_add(lib, lib.unassigned_pool, decision)
        assert len(lib.skills) == 1
        assert skill.l2_positive == [] and skill.l2_negative == []
        assert skill.l3_observations == []
        assert skill_weight(skill, 2.0) == 0.5

    def test_inspired_obs_stay_in_pool(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        obs = make_obs("p0", 1.5)
        apply_attribution(lib, [obs], [AttributionDecision("p0", None)])
        apply_add(
            lib,
            lib.unassigned_pool,
            AddDecision(
                action="add", skill_id="lower_bridge", l1_structure="bridge",
                l1_condition="a connected lower bridge of material along the ground line",
                inspired_obs_ids=("p0",),
            ),
        )
        assert len(lib.unassigned_pool) == 1
        assert lib.get_skill("lower_bridge").l3_observations == []

    @pytest.mark.parametrize("bad", ["a_b_c_d", "CamelCase", "has space", "", "skill_v2_x_y"])
    def test_malformed_ids(self, bad):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        with pytest.raises(MalformedSkillId):
            apply_add(lib, lib.unassigned_pool, AddDecision(action="add", skill_id=bad))

    def test_duplicate_id(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("portal_frame")])
        with pytest.raises(DuplicateSkillId):
            apply_add(
                lib, lib.unassigned_pool, AddDecision(action="add", skill_id="portal_frame")
            )


def skill_with_pending_obs(gains):
    skill = make_skill("portal_frame")
    for g in gains:
        obs = make_obs(skill.new_obs_id(), g)
        obs.attributed_skill = skill.skill_id
        skill.l3_observations.append(obs)
    return skill


class TestDiagnose:
    def test_match_existing_updates_mean(self):
        skill = skill_with_pending_obs([1.5])
        leaf = RuleLeaf(
            leaf_id=skill.new_leaf_id("positive"), polarity="positive",
            claim="rigid_leg_pair", description="two rigid legs under the torso",
            support_count=1, mean_gain=0.5, supporting_obs_ids=["obs_x"],
        )
        skill.l2_positive.append(leaf)
        apply_diagnose(skill, [LeafAssignment("obs_0", "match_existing", leaf_id=leaf.leaf_id)])
        assert leaf.support_count == 2
        assert leaf.mean_gain == pytest.approx(1.0)
        assert skill.l3_observations[0].assigned_leaf_id == leaf.leaf_id

    def test_new_negative_leaf(self):
        skill = skill_with_pending_obs([-2.0])
        apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="negative",
                    claim="brittle_bottom_row",
                    description="a sparse lowest band that buckles under body weight",
                )
            ],
        )
        assert len(skill.l2_negative) == 1
        leaf = skill.l2_negative[0]
        assert leaf.support_count == 1
        assert leaf.mean_gain == -2.0
        assert leaf.leaf_id.startswith("neg_")

    def test_no_leaf_freezes_after_three(self):
        skill = skill_with_pending_obs([0.1])
        for i in range(3):
            assert skill.eligible_observations() != []
            apply_diagnose(skill, [LeafAssignment("obs_0", "no_leaf")])
        assert skill.l3_observations[0].no_leaf_attempts == 3
        assert skill.eligible_observations() == []

    def test_coordinate_leakage_downgraded(self):
        skill = skill_with_pending_obs([1.0])
        outcome = apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="anchored_corner",
                    description="place a rigid voxel at (5,4) next to the actuator",
                )
            ],
        )
        assert outcome.coordinate_downgrades == ["obs_0"]
        assert skill.l2_positive == []
        assert skill.l3_observations[0].no_leaf_attempts == 1

    def test_row_index_leakage(self):
        skill = skill_with_pending_obs([1.0])
        outcome = apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="solid_base",
                    description="fill row 0 completely with rigid voxels",
                )
            ],
        )
        assert outcome.coordinate_downgrades == ["obs_0"]

    def test_relative_region_language_allowed(self):
        skill = skill_with_pending_obs([1.0])
        apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="solid_base",
                    description="fill the lowest band with rigid voxels under the actuators",
                )
            ],
        )
        assert len(skill.l2_positive) == 1

    def test_standalone_needs_two_obs(self):
        skill = skill_with_pending_obs([1.0, 1.2])
        out = apply_diagnose(
            skill,
            [],
            standalone=[
                StandaloneLeaf(
                    polarity="positive", claim="paired_spine",
                    description="two vertical actuator lines braced by a shared rigid side",
                    supporting_obs_ids=("obs_0",),
                )
            ],
        )
        assert out.standalone_created == 0
        out = apply_diagnose(
            skill,
            [],
            standalone=[
                StandaloneLeaf(
                    polarity="positive", claim="paired_spine",
                    description="two vertical actuator lines braced by a shared rigid side",
                    supporting_obs_ids=("obs_0", "obs_1"),
                )
            ],
        )
        assert out.standalone_created == 1
        leaf = skill.l2_positive[0]
        assert leaf.support_count == 2
        assert leaf.mean_gain == pytest.approx(1.1)


class TestMerge:
    def test_empty_cluster_list(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        apply_merge(lib, [])
        assert lib.skill_ids() == ["skill_a"]

    def test_union_conserves_counts(self):
        a = skill_with_pending_obs([1.0, 2.0])
        a.skill_id = "arch_a"
        b = skill_with_pending_obs([0.5, 1.5, 2.5])
        b.skill_id = "arch_b"
        apply_diagnose(
            b,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="low_bridge",
                    description="a connected bridge along the lower body",
                )
            ],
        )
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[a, b])
        total_obs = lib.total_observations()
        total_leaves = lib.total_leaves()
        apply_merge(lib, [MergeCluster("merged_arch", ("arch_a", "arch_b"))])
        assert lib.skill_ids() == ["merged_arch"]
        assert lib.total_observations() == total_obs == 5
        assert lib.total_leaves() == total_leaves == 1
        merged = lib.get_skill("merged_arch")
        # anchor is arch_b (3 obs > 2 obs)
        assert merged.l1_condition == b.l1_condition
        # leaf support references stay resolvable after re-issuing
        leaf = merged.l2_positive[0]
        ids = {o.obs_id for o in merged.l3_observations}
        assert set(leaf.supporting_obs_ids) <= ids
        supporting = [merged.find_observation(i) for i in leaf.supporting_obs_ids]
        assert leaf.mean_gain == pytest.approx(np.mean([o.gain for o in supporting]))

    def test_merged_weight_is_union_weight(self):
        a = make_skill("arch_a", gains=[1.0, -1.0])
        b = make_skill("arch_b", gains=[2.0])
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[a, b])
        apply_merge(lib, [MergeCluster("merged_arch", ("arch_a", "arch_b"))])
        w = skill_weight(lib.get_skill("merged_arch"), 2.0)
        assert w == weight_oracle([1.0, -1.0, 2.0], 2.0)

    def test_anchor_tiebreak_lexicographic(self):
        a = make_skill("zeta_arch", gains=[1.0])
        a.l1_condition = "zeta condition text for the arch archetype with enough words"
        b = make_skill("alpha_arch", gains=[1.0])
        b.l1_condition = "alpha condition text for the arch archetype with enough words"
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[a, b])
        apply_merge(lib, [MergeCluster("merged_arch", ("zeta_arch", "alpha_arch"))])
        assert lib.get_skill("merged_arch").l1_condition.startswith("alpha")

    def test_singleton_rejected(self):
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[make_skill("skill_a")])
        with pytest.raises(SingletonCluster):
            apply_merge(lib, [MergeCluster("solo", ("skill_a",))])

    def test_overlap_rejected(self):
        lib = SkillLibrary(
            task="Walker-v0", scale=5,
            skills=[make_skill("skill_a"), make_skill("skill_b"), make_skill("skill_c")],
        )
        with pytest.raises(OverlappingClusters):
            apply_merge(
                lib,
                [
                    MergeCluster("m_one", ("skill_a", "skill_b")),
                    MergeCluster("m_two", ("skill_b", "skill_c")),
                ],
            )

    def test_task_family_union(self):
        a = make_skill("arch_a", task="Walker-v0")
        b = make_skill("arch_b", task="Pusher-v0")
        lib = SkillLibrary(task="Walker-v0", scale=5, skills=[a, b])
        apply_merge(lib, [MergeCluster("merged_arch", ("arch_a", "arch_b"))])
        assert lib.get_skill("merged_arch").task_family == ["Pusher-v0", "Walker-v0"]


class TestImportForTransfer:
    def source(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        skill = skill_with_pending_obs([1.0] * 10)
        apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="rigid_side_frame",
                    description="a rigid side frame stabilizing the vertical actuators",
                )
            ],
        )
        lib.skills = [skill]
        return lib

    def test_drops_observations_keeps_leaves(self):
        src = self.source()
        out = import_for_transfer(src, target_task="Walker-v0-10x10", target_scale=10)
        skill = out.skills[0]
        assert skill.l3_observations == []
        assert skill.imported
        assert len(skill.l2_positive) == 1
        assert skill.l2_positive[0].description == src.skills[0].l2_positive[0].description
        assert skill.l2_positive[0].mean_gain == src.skills[0].l2_positive[0].mean_gain
        assert skill_weight(skill, 2.0) == 0.5

    def test_empty_source(self):
        out = import_for_transfer(SkillLibrary(task="Walker-v0", scale=5))
        assert out.skills == []

    def test_source_not_mutated(self):
        src = self.source()
        n = len(src.skills[0].l3_observations)
        import_for_transfer(src)
        assert len(src.skills[0].l3_observations) == n

    def test_at_least_as_many_leaves(self):
        src = self.source()
        out = import_for_transfer(src)
        assert out.total_leaves() >= src.total_leaves()


class TestPoolPressure:
    def test_thresholds(self):
        pool = UnassignedPool(entries=[make_obs(f"p{i}", 0.0) for i in range(29)])
        assert not pool_pressure(pool, 30)
        pool.entries.append(make_obs("p29", 0.0))
        assert pool_pressure(pool, 30)
        assert not pool_pressure(UnassignedPool(), 30)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        skill = skill_with_pending_obs([1.0, -0.5])
        apply_diagnose(
            skill,
            [
                LeafAssignment(
                    "obs_0", "new_leaf", polarity="positive", claim="braced_spine",
                    description="a braced central spine of actuators with rigid sides",
                )
            ],
        )
        lib.skills = [skill]
        apply_attribution(lib, [make_obs("p0", 0.3)], [AttributionDecision("p0", None)])
        path = tmp_path / "library.json"
        lib.save(path)
        back = SkillLibrary.load(path)
        assert back.to_json() == lib.to_json()

    def test_schema_field_names(self):
        doc = make_skill("portal_frame", gains=[1.0]).to_json()
        assert set(doc) == {"skill_id", "task_family", "condition", "l1", "l2", "l3", "imported"}
        assert set(doc["l1"]) == {"structure", "condition"}
        assert set(doc["l2"]) == {"positive", "negative", "next_leaf_id_counter"}
        assert set(doc["l3"]) == {"observations", "next_obs_id_counter"}
        assert doc["condition"] == doc["l1"]["condition"]

    def test_schema_violation(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"task": "Walker-v0"}))
        with pytest.raises(SchemaViolation):
            SkillLibrary.load(path)

    def test_support_count_mismatch_detected(self):
        lib = SkillLibrary(task="Walker-v0", scale=5)
        skill = make_skill("skill_a")
        skill.l2_positive.append(
            RuleLeaf(
                leaf_id="pos_0", polarity="positive", claim="c", description="d",
                support_count=2, mean_gain=1.0, supporting_obs_ids=["obs_0"],
            )
        )
        lib.skills = [skill]
        with pytest.raises(SchemaViolation):
            validate_library(lib)
