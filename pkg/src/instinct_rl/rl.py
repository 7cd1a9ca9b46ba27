"""PPO machinery: episode rollouts, return/advantage estimation, updates.

One episode loop serves every phase of the program. Exactly one of the two
networks explores at a time: the learner acts stochastically and trains on
its own reward stream, while the partner (when present) acts
deterministically and is treated as part of the environment.

* policy learner  -- reward is the shaped task reward r_t - h * H_t.
* instinct learner -- reward is (1 - h * H) * m * r_t * D.

Rollouts are reproducible and worker-count invariant: trajectory i of
update e draws everything from a generator seeded by
(master_seed, epoch, i), so the concatenated batch does not depend on how
collection was scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import agent as agent_mod
from . import tasks, world
from .agent import (
    ActResult,
    InstinctAgent,
    PolicyAgent,
    instinct_act,
    instinct_input,
    instinct_reward,
    mix_actions,
    policy_act,
)
from .errors import ConfigurationError, NumericalError, ShapeError
from .neural import (
    AdamState,
    adam_init,
    adam_step,
    clip_grad_norm,
    gaussian_entropy,
    gaussian_logprob,
    mlp_backward,
    mlp_forward,
)
from .tasks import StepOutcome, TaskConfig, TaskEnv, shaped_transfer_reward

ADV_NORM_EPS = 1e-8

LEARNER_POLICY = "policy"
LEARNER_INSTINCT = "instinct"


@dataclass
class PpoHyper:
    gamma: float = 0.99
    clip: float = 0.2
    ppo_epochs: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 1e-3
    gae_lambda: float = 0.95
    minibatches: int = 32
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.clip <= 0.0:
            raise ConfigurationError(f"clip must be positive, got {self.clip}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.ppo_epochs < 1 or self.minibatches < 1:
            raise ConfigurationError("ppo_epochs and minibatches must be >= 1")


@dataclass
class RolloutBatch:
    """Flat per-step arrays over all collected episodes, in trajectory order."""

    obs: np.ndarray  # (N, d) what the learner's networks consumed
    actions: np.ndarray  # (N, k) raw pre-clamp learner samples
    logprobs: np.ndarray  # (N,)
    values: np.ndarray  # (N,)
    rewards: np.ndarray  # (N,) learner-specific rewards
    hazards: np.ndarray  # (N,) 0/1 per step
    task_rewards: np.ndarray  # (N,) raw r_t
    policy_actions: np.ndarray  # (N, 2) executed policy actions
    final_actions: np.ndarray  # (N, 2) executed mixed actions
    modulations: np.ndarray | None  # (N,) executed m, None without instinct
    episode_lengths: np.ndarray  # (E,)
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    adv_normalized: bool = False

    @property
    def total_steps(self) -> int:
        return len(self.rewards)


@dataclass
class EpisodeResult:
    task_return: float
    shaped_return: float
    collisions: int
    steps: int
    mean_modulation: float | None
    arrays: dict | None = None  # per-step learner arrays when collecting
    trajectory: list | None = None  # export records when requested
    layout: world.WorldLayout | None = None


@dataclass
class UpdateStats:
    actor_loss: float = math.nan
    value_loss: float = math.nan
    entropy: float = math.nan
    clip_fraction: float = math.nan
    approx_kl: float = math.nan
    kl_per_epoch: list = field(default_factory=list)
    grad_norm: float = math.nan
    aborted: bool = False
    message: str | None = None


def trajectory_rng(master_seed: int, epoch: int, index: int) -> np.random.Generator:
    """The one generator behind trajectory ``index`` of update ``epoch``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(epoch), int(index)]))


def play_episode(
    cfg: TaskConfig,
    policy: PolicyAgent,
    instinct: InstinctAgent | None,
    rng: np.random.Generator,
    learner: str | None = None,
    collect: bool = False,
    hazard_penalty: float = agent_mod.INSTINCT_HAZARD_PENALTY,
    task_gain: float = agent_mod.INSTINCT_TASK_GAIN,
    record_trajectory: bool = False,
) -> EpisodeResult:
    """Run one full fixed-horizon episode.

    ``learner`` picks who explores: "policy" or "instinct" act stochastically
    (the other, if present, deterministically); None runs fully
    deterministic evaluation. With ``collect`` the learner's training arrays
    are returned; with ``record_trajectory`` a per-step export log is kept.
    """
    if learner not in (None, LEARNER_POLICY, LEARNER_INSTINCT):
        raise ConfigurationError(f"unknown learner {learner!r}")
    if learner == LEARNER_INSTINCT and instinct is None:
        raise ConfigurationError("instinct learner requested but no instinct present")

    env = TaskEnv(cfg, rng)
    obs = world.assemble_observation(env.state)
    horizon = cfg.horizon
    punishment = cfg.hazard_punishment

    if collect:
        n_obs = agent_mod.INSTINCT_OBS_DIM if learner == LEARNER_INSTINCT else world.OBS_DIM
        n_act = agent_mod.INSTINCT_OUT_DIM if learner == LEARNER_INSTINCT else agent_mod.ACTION_DIM
        col_obs = np.empty((horizon, n_obs))
        col_actions = np.empty((horizon, n_act))
        col_logprobs = np.empty(horizon)
        col_values = np.empty(horizon)
        col_rewards = np.empty(horizon)
        col_policy_actions = np.empty((horizon, 2))
        col_final_actions = np.empty((horizon, 2))
    col_hazards = np.zeros(horizon, dtype=np.int64)
    col_task_rewards = np.empty(horizon)
    col_modulations = np.empty(horizon) if instinct is not None else None

    trajectory = [] if record_trajectory else None
    layout0 = env.state.layout if record_trajectory else None
    task_return = 0.0
    shaped_return = 0.0

    for i in range(horizon):
        pol = policy_act(
            policy, obs, stochastic=(learner == LEARNER_POLICY), rng=rng,
            with_value=collect and learner == LEARNER_POLICY,
        )
        if instinct is not None:
            inst_out, inst = instinct_act(
                instinct, obs, pol.action, stochastic=(learner == LEARNER_INSTINCT), rng=rng,
                with_value=collect and learner == LEARNER_INSTINCT,
            )
            m = inst_out.modulation
            final = mix_actions(pol.action, inst_out.action, m)
            col_modulations[i] = m
        else:
            m = 1.0
            final = pol.action
        out = env.step(final)
        col_hazards[i] = out.hazard
        col_task_rewards[i] = out.reward
        task_return += out.reward
        shaped_return += out.reward - out.hazard * punishment

        if collect:
            if learner == LEARNER_POLICY:
                col_obs[i] = obs
                col_actions[i] = pol.sample
                col_logprobs[i] = pol.logprob
                col_values[i] = pol.value
                col_rewards[i] = shaped_transfer_reward(out.reward, out.hazard, punishment)
            else:
                col_obs[i] = instinct_input(obs, pol.action)
                col_actions[i] = inst.sample
                col_logprobs[i] = inst.logprob
                col_values[i] = inst.value
                col_rewards[i] = instinct_reward(out.hazard, m, out.reward, hazard_penalty, task_gain)
            col_policy_actions[i] = pol.action
            col_final_actions[i] = final
        if record_trajectory:
            st = env.state
            trajectory.append(
                {
                    "step": i,
                    "x": st.agent.x,
                    "y": st.agent.y,
                    "heading": st.agent.heading,
                    "action": [float(final[0]), float(final[1])],
                    "m": m,
                    "h": int(out.hazard),
                    "r": out.reward,
                    "event": out.event.value if out.event else None,
                    "goal": None if st.layout.goal_center is None else [float(st.layout.goal_center[0]), float(st.layout.goal_center[1])],
                    "box": None if st.box_xy is None else [float(st.box_xy[0]), float(st.box_xy[1])],
                }
            )
        obs = out.observation

    arrays = None
    if collect:
        arrays = {
            "obs": col_obs,
            "actions": col_actions,
            "logprobs": col_logprobs,
            "values": col_values,
            "rewards": col_rewards,
            "hazards": col_hazards,
            "task_rewards": col_task_rewards,
            "policy_actions": col_policy_actions,
            "final_actions": col_final_actions,
            "modulations": col_modulations,
        }
    return EpisodeResult(
        task_return=task_return,
        shaped_return=shaped_return,
        collisions=int(col_hazards.sum()),
        steps=horizon,
        mean_modulation=None if col_modulations is None else float(col_modulations.mean()),
        arrays=arrays,
        trajectory=trajectory,
        layout=layout0,
    )


def _collect_one(args) -> dict:
    (cfg, policy, instinct, learner, master_seed, epoch, index, hazard_penalty, task_gain) = args
    rng = trajectory_rng(master_seed, epoch, index)
    result = play_episode(
        cfg, policy, instinct, rng, learner=learner, collect=True,
        hazard_penalty=hazard_penalty, task_gain=task_gain,
    )
    return result.arrays


def collect_rollout(
    cfg: TaskConfig,
    policy: PolicyAgent,
    instinct: InstinctAgent | None,
    learner: str,
    n_trajectories: int,
    master_seed: int,
    epoch: int,
    hazard_penalty: float = agent_mod.INSTINCT_HAZARD_PENALTY,
    task_gain: float = agent_mod.INSTINCT_TASK_GAIN,
    workers: int = 1,
) -> RolloutBatch:
    """Collect ``n_trajectories`` full episodes for one update.

    With ``workers > 1`` trajectories fan out over processes; the result is
    identical to the serial run because each trajectory owns its rng.
    """
    if n_trajectories < 1:
        raise ConfigurationError("need at least one trajectory")
    args = [
        (cfg, policy, instinct, learner, master_seed, epoch, i, hazard_penalty, task_gain)
        for i in range(n_trajectories)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_arrays = list(pool.map(_collect_one, args, chunksize=max(1, n_trajectories // (4 * workers))))
    else:
        all_arrays = [_collect_one(a) for a in args]

    def cat(key):
        return np.concatenate([a[key] for a in all_arrays], axis=0)

    modulations = None
    if instinct is not None:
        modulations = cat("modulations")
    return RolloutBatch(
        obs=cat("obs"),
        actions=cat("actions"),
        logprobs=cat("logprobs"),
        values=cat("values"),
        rewards=cat("rewards"),
        hazards=cat("hazards"),
        task_rewards=cat("task_rewards"),
        policy_actions=cat("policy_actions"),
        final_actions=cat("final_actions"),
        modulations=modulations,
        episode_lengths=np.full(n_trajectories, cfg.horizon, dtype=np.int64),
    )


def discounted_return(rewards, gamma: float) -> np.ndarray:
    """Suffix-recursive discounted returns: R_i = r_i + gamma * R_{i+1}."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def compute_returns_advantages(batch: RolloutBatch, hyper: PpoHyper) -> RolloutBatch:
    """GAE within each episode, then batch-wide advantage normalization.

    The value past the horizon bootstraps to zero (episodes truly end).
    Return targets are advantage + value.
    """
    if batch.total_steps == 0:
        raise ValueError("empty batch")
    adv = np.empty(batch.total_steps)
    gamma = hyper.gamma
    lam = hyper.gae_lambda
    start = 0
    for length in batch.episode_lengths:
        end = start + int(length)
        values = batch.values[start:end]
        rewards = batch.rewards[start:end]
        acc = 0.0
        for i in range(int(length) - 1, -1, -1):
            v_next = values[i + 1] if i + 1 < length else 0.0
            delta = rewards[i] + gamma * v_next - values[i]
            acc = delta + gamma * lam * acc
            adv[i + start] = acc
        start = end
    returns = adv + batch.values
    normalized = (adv - adv.mean()) / (adv.std() + ADV_NORM_EPS)
    return replace(batch, returns=returns, advantages=normalized, adv_normalized=True)


def _gather_params(learner) -> list[np.ndarray]:
    return [
        *learner.actor.weights,
        *learner.actor.biases,
        learner.log_sigma,
        *learner.critic.weights,
        *learner.critic.biases,
    ]


def _rebuild(learner, arrays: list[np.ndarray]):
    n_a = len(learner.actor.weights)
    n_c = len(learner.critic.weights)
    actor = type(learner.actor)(
        weights=arrays[:n_a],
        biases=arrays[n_a : 2 * n_a],
        out_scale=learner.actor.out_scale,
        out_offset=learner.actor.out_offset,
    )
    log_sigma = arrays[2 * n_a]
    critic = type(learner.critic)(
        weights=arrays[2 * n_a + 1 : 2 * n_a + 1 + n_c],
        biases=arrays[2 * n_a + 1 + n_c :],
        out_scale=None,
        out_offset=None,
    )
    return type(learner)(actor=actor, log_sigma=log_sigma, critic=critic)


def ppo_update(
    learner,
    batch: RolloutBatch,
    hyper: PpoHyper,
    adam_state: AdamState | None = None,
    rng: np.random.Generator | None = None,
):
    """Clipped-surrogate PPO over one collected batch.

    Runs ``ppo_epochs`` passes of shuffled minibatches; each minibatch
    optimizes actor + value_coef * critic - entropy_coef * entropy with one
    gradient-clipped Adam step. A non-finite loss aborts the whole update
    and hands back the original parameters with diagnostics in the stats.
    """
    if batch.returns is None or batch.advantages is None:
        raise ValueError("batch needs compute_returns_advantages first")
    if rng is None:
        rng = np.random.default_rng(0)
    params = _gather_params(learner)
    if adam_state is None:
        adam_state = adam_init(params)
    initial_adam = adam_state
    current = learner
    n = batch.total_steps

    sums = {"actor_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip": 0.0, "kl": 0.0}
    grad_norms = []
    kl_per_epoch = []
    count = 0
    for _ in range(hyper.ppo_epochs):
        order = rng.permutation(n)
        epoch_kl = 0.0
        epoch_count = 0
        for idx in np.array_split(order, hyper.minibatches):
            if len(idx) == 0:
                continue
            b = len(idx)
            obs = batch.obs[idx]
            actions = batch.actions[idx]
            old_lp = batch.logprobs[idx]
            adv = batch.advantages[idx]
            ret = batch.returns[idx]

            sigma = np.exp(current.log_sigma)
            mean, cache_a = mlp_forward(current.actor, obs)
            z = (actions - mean) / sigma
            new_lp = gaussian_logprob(mean, sigma, actions)
            ratio = np.exp(new_lp - old_lp)
            clipped = np.clip(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip)
            surr1 = ratio * adv
            surr2 = clipped * adv
            actor_loss = -float(np.mean(np.minimum(surr1, surr2)))

            v_out, cache_c = mlp_forward(current.critic, obs)
            v = v_out[:, 0]
            verr = v - ret
            value_loss = float(np.mean(verr * verr))
            entropy = gaussian_entropy(sigma)
            total = actor_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy
            if not math.isfinite(total):
                # discard the whole update: hand back the original parameters
                return learner, initial_adam, UpdateStats(
                    aborted=True,
                    message=f"non-finite loss (actor {actor_loss}, value {value_loss})",
                    kl_per_epoch=kl_per_epoch,
                )

            # d actor_loss / d log pi_new, flowing only through the active
            # min() branch (the clipped branch is flat outside the clip range)
            use_raw = surr1 <= surr2
            inside = (ratio > 1.0 - hyper.clip) & (ratio < 1.0 + hyper.clip)
            dmin_dratio = np.where(use_raw, adv, np.where(inside, adv, 0.0))
            dlp = (-1.0 / b) * dmin_dratio * ratio
            dmean = dlp[:, None] * (z / sigma)
            dlog_sigma = np.sum(dlp[:, None] * (z * z - 1.0), axis=0) - hyper.entropy_coef
            actor_grads = mlp_backward(current.actor, cache_a, dmean)
            dv = (hyper.value_coef * 2.0 / b) * verr
            critic_grads = mlp_backward(current.critic, cache_c, dv[:, None])

            grads = [
                *actor_grads.weights,
                *actor_grads.biases,
                dlog_sigma,
                *critic_grads.weights,
                *critic_grads.biases,
            ]
            grads, norm = clip_grad_norm(grads, hyper.max_grad_norm)
            params, adam_state = adam_step(params, grads, adam_state, hyper.lr)
            current = _rebuild(learner, params)
            grad_norms.append(norm)

            kl = float(np.mean(old_lp - new_lp))
            sums["actor_loss"] += actor_loss * b
            sums["value_loss"] += value_loss * b
            sums["entropy"] += entropy * b
            sums["clip"] += float(np.mean(np.abs(ratio - 1.0) > hyper.clip)) * b
            sums["kl"] += kl * b
            epoch_kl += kl * b
            epoch_count += b
            count += b
        kl_per_epoch.append(epoch_kl / max(epoch_count, 1))

    stats = UpdateStats(
        actor_loss=sums["actor_loss"] / count,
        value_loss=sums["value_loss"] / count,
        entropy=sums["entropy"] / count,
        clip_fraction=sums["clip"] / count,
        approx_kl=sums["kl"] / count,
        kl_per_epoch=kl_per_epoch,
        grad_norm=float(np.mean(grad_norms)) if grad_norms else math.nan,
    )
    return current, adam_state, stats
