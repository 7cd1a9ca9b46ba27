"""Instinct-regulated reinforcement learning in a 2D hazard world.

A pre-trained "instinct" network watches the observation and the task
policy's proposed action, and blends in its own action through a learned
suppression signal whenever the agent strays near hazards. The package
bundles the dense-network core, the simulator, the three tasks, PPO
training, the pre-training/transfer pipeline, and a CLI.
"""

from .agent import (
    InstinctAgent,
    InstinctOutput,
    PolicyAgent,
    instinct_act,
    instinct_reward,
    load_checkpoint,
    make_instinct_agent,
    make_policy_agent,
    mix_actions,
    policy_act,
    save_checkpoint,
)
from .errors import (
    ConfigurationError,
    InstinctRlError,
    LayoutError,
    NumericalError,
    ShapeError,
    UsageError,
)
from .neural import (
    AdamState,
    GradientBundle,
    MlpParams,
    adam_init,
    adam_step,
    gaussian_entropy,
    gaussian_logprob,
    gaussian_sample,
    mlp_backward,
    mlp_forward,
    mlp_init,
)
from .pipeline import (
    MODE_IR2L,
    MODE_PRETRAINED,
    MODE_RANDOM,
    EvalStats,
    PhaseConfig,
    RunResult,
    SuiteCell,
    evaluate,
    evaluate_checkpoint,
    pretrain_baseline_policy,
    pretrain_instinct_phase2,
    pretrain_policy_phase1,
    run_experiment_suite,
    train_transfer,
)
from .rl import (
    PpoHyper,
    RolloutBatch,
    collect_rollout,
    compute_returns_advantages,
    discounted_return,
    play_episode,
    ppo_update,
)
from .tasks import StepOutcome, TaskConfig, TaskEnv, TaskKind, make_layout, shaped_transfer_reward
from .world import AgentPose, WorldLayout, WorldState, assemble_observation

__version__ = "0.1.0"
