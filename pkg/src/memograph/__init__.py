"""Trainable layered graph memory for tool-using agents."""

from .fsm import (
    FsmSpec,
    LlmAssistedGrounder,
    RuleBasedGrounder,
    default_fsm,
    format_path,
    ground_trajectory,
    load_fsm,
    parse_path,
    validate_path,
)
from .gateway import (
    ChatTransport,
    ScriptedTransport,
    Trajectory,
    chat,
    exact_match_reward,
    parse_agent_response,
    run_tool_loop,
)
from .graph import (
    Edge,
    MemoryGraph,
    MetaNode,
    PathNode,
    Principle,
    QueryNode,
    export_graph,
    import_graph,
)
from .induction import (
    LlmAnalyst,
    MetaProposal,
    ScriptedAnalyst,
    induce_contrastive,
    induce_speculative,
    resolve_proposal,
    update_memory_graph,
)
from .optimizer import (
    GradientReport,
    OptimizerConfig,
    RewardGap,
    TrainingQuery,
    compute_gradients,
    optimize_weights,
    reinforce_step,
)
from .retrieval import AugmentedPrompt, RankedMeta, augment_prompt, rank_metas
from .scoring import (
    ActivatedSubgraph,
    HashedEmbedder,
    SelectionDistribution,
    activate_subgraph,
    propagate,
    relevance,
    selection_distribution,
    similarity,
)
from .simulate import (
    SyntheticWorld,
    build_synthetic_world,
    run_ablations,
    run_convergence,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
