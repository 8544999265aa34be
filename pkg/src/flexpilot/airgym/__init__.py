"""Point-to-point navigation environment and DQN training for the policy."""

from __future__ import annotations

from .arena import MAX_OBSTACLES, Arena, ArenaGenerationError, ArenaSpec, Obstacle, generate_env
from .dqn import (
    DivergenceError,
    DQNHyper,
    DQNTrainer,
    EpisodeRecord,
    TrainingLog,
    ZoneCurriculum,
    build_q_network,
    dqn_train,
    module_from_weights,
    weights_from_module,
)
from .dynamics import (
    DEFAULT_ACTIONS,
    STEP_LIMIT,
    Action,
    ActionError,
    ActionTable,
    AgentState,
    EpisodeFinishedError,
    Outcome,
    RewardParams,
    StepResult,
    reset_episode,
    reward,
    step,
)
from .evaluate import (
    EvaluationReport,
    arena_factory,
    evaluate,
    evaluate_policy,
    greedy_policy,
    random_policy,
    sample_observations,
    toward_goal_policy,
)
from .sensors import MAX_RANGE_M, NUM_RAYS, OBSERVATION_DIM, ray_angles, sense

__all__ = [
    "Arena",
    "ArenaSpec",
    "Obstacle",
    "generate_env",
    "sense",
    "step",
    "reward",
    "reset_episode",
    "dqn_train",
    "evaluate",
    "evaluate_policy",
    "sample_observations",
    "ActionTable",
    "AgentState",
    "RewardParams",
    "DQNHyper",
    "TrainingLog",
    "EvaluationReport",
    "ArenaGenerationError",
    "ActionError",
    "EpisodeFinishedError",
    "DivergenceError",
    "OBSERVATION_DIM",
]
