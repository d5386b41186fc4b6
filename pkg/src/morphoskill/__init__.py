"""morphoskill: morphology search over voxel robot bodies with a persistent,
evidence-grounded skill library, a GA baseline, and convergence metrics."""

from morphoskill.evaluation import (
    EvalRequest,
    EvalResult,
    ExternalEvaluator,
    SurrogateEvaluator,
    evaluate_batch,
    surrogate_fitness,
)
from morphoskill.heuristic import HeuristicBackend
from morphoskill.llm_gateway import LlmGateway, RemoteBackend, ScriptedBackend
from morphoskill.metrics import FitnessCurve, compare, lead_fraction, speedup
from morphoskill.orchestrator import RunConfig, SearchOrchestrator, update_elites
from morphoskill.skill_library import (
    Observation,
    RuleLeaf,
    Skill,
    SkillLibrary,
    import_for_transfer,
    retrieve,
    sample_skill,
    skill_weight,
)
from morphoskill.voxelbody import (
    Body,
    ValidityReport,
    VoxelDiff,
    check_validity,
    diff,
    ga_mutate,
    repair,
    upsample_tiling,
)

__version__ = "0.1.0"

__all__ = [
    "Body",
    "ValidityReport",
    "VoxelDiff",
    "check_validity",
    "diff",
    "ga_mutate",
    "repair",
    "upsample_tiling",
    "Skill",
    "RuleLeaf",
    "Observation",
    "SkillLibrary",
    "skill_weight",
    "sample_skill",
    "retrieve",
    "import_for_transfer",
    "LlmGateway",
    "HeuristicBackend",
    "ScriptedBackend",
    "RemoteBackend",
    "EvalRequest",
    "EvalResult",
    "SurrogateEvaluator",
    "ExternalEvaluator",
    "evaluate_batch",
    "surrogate_fitness",
    "FitnessCurve",
    "compare",
    "speedup",
    "lead_fraction",
    "RunConfig",
    "SearchOrchestrator",
    "update_elites",
]
