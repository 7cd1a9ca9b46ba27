"""The two-network agent: task policy, protective instinct, action mixing.

The policy proposes a noisy action a_p. The instinct sees the observation
*and* that proposal, and answers with its own action a_i plus a suppression
signal m in [0, 1]. The executed action blends the two:

    a_final = m * a_p + (1 - m) * a_i

so m = 1 hands control to the policy and m = 0 to the instinct. During its
pre-training the instinct is paid

    (1 - h * H) * m * r_t * D

which rewards staying out of the way (m high) while the task reward flows
and punishes hazard contact hard whenever it failed to take over.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalError
from .neural import (
    MlpParams,
    gaussian_logprob,
    gaussian_sample,
    mlp_forward,
    mlp_from_dict,
    mlp_init,
    mlp_to_dict,
)
from .world import ACTION_LIMIT, OBS_DIM

ACTION_DIM = 2
INSTINCT_OUT_DIM = 3  # two action dims plus the modulation signal
INSTINCT_OBS_DIM = OBS_DIM + ACTION_DIM

SIGMA_INIT = 0.6
INSTINCT_HAZARD_PENALTY = 100.0  # H
INSTINCT_TASK_GAIN = 15.0  # D

CHECKPOINT_FORMAT_VERSION = 1
ROLE_POLICY_ONLY = "policy_only"
ROLE_POLICY_PLUS_INSTINCT = "policy_plus_instinct"


@dataclass
class PolicyAgent:
    """Task actor-critic: actor obs -> 2 (tanh scaled to +-0.1), critic obs -> 1."""

    actor: MlpParams
    log_sigma: np.ndarray  # (2,)
    critic: MlpParams


@dataclass
class InstinctAgent:
    """Protective actor-critic over (obs, policy action) inputs.

    The actor's three outputs map to two action dims in +-0.1 and one
    modulation mean in (0, 1) via 0.5 * tanh + 0.5.
    """

    actor: MlpParams
    log_sigma: np.ndarray  # (3,)
    critic: MlpParams


@dataclass
class InstinctOutput:
    action: np.ndarray  # (2,), clamped
    modulation: float  # in [0, 1] after clipping


@dataclass
class ActResult:
    """What acting produced: the executed value, the raw pre-clamp sample
    (what the Gaussian head is trained on), its log-prob, and the critic value."""

    action: np.ndarray
    sample: np.ndarray
    logprob: float
    value: float


def make_policy_agent(
    hidden_sizes,
    rng: np.random.Generator,
    obs_dim: int = OBS_DIM,
    action_dim: int = ACTION_DIM,
    sigma_init: float = SIGMA_INIT,
    action_scale: float = ACTION_LIMIT,
) -> PolicyAgent:
    actor = mlp_init([obs_dim, *hidden_sizes, action_dim], rng, out_scale=action_scale)
    critic = mlp_init([obs_dim, *hidden_sizes, 1], rng)
    return PolicyAgent(
        actor=actor,
        log_sigma=np.full(action_dim, math.log(sigma_init)),
        critic=critic,
    )


def make_instinct_agent(
    hidden_sizes,
    rng: np.random.Generator,
    obs_dim: int = OBS_DIM,
    sigma_init: float = SIGMA_INIT,
    m_bias: float = 0.0,
) -> InstinctAgent:
    """Fresh instinct. ``m_bias`` pre-loads the modulation unit's bias so the
    zero-input modulation mean starts at 0.5 * tanh(m_bias) + 0.5 instead of 0.5."""
    in_dim = obs_dim + ACTION_DIM
    scale = np.array([ACTION_LIMIT, ACTION_LIMIT, 0.5])
    offset = np.array([0.0, 0.0, 0.5])
    actor = mlp_init([in_dim, *hidden_sizes, INSTINCT_OUT_DIM], rng, out_scale=scale, out_offset=offset)
    if m_bias:
        actor.biases[-1][2] = float(m_bias)
    critic = mlp_init([in_dim, *hidden_sizes, 1], rng)
    return InstinctAgent(
        actor=actor,
        log_sigma=np.full(INSTINCT_OUT_DIM, math.log(sigma_init)),
        critic=critic,
    )


def _checked(vec: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise NumericalError(f"non-finite {what}")
    return vec


def _head_bounds(actor: MlpParams):
    """Per-dim clamp range of a scaled-tanh head: offset +- scale."""
    scale = actor.out_scale
    offset = actor.out_offset if actor.out_offset is not None else 0.0
    return offset - scale, offset + scale


def policy_act(
    agent: PolicyAgent,
    obs: np.ndarray,
    stochastic: bool,
    rng: np.random.Generator | None = None,
    with_value: bool = True,
) -> ActResult:
    """One policy decision.

    Stochastic mode samples around the tanh-squashed mean and clamps the
    executed action to +-0.1; the log-prob is taken on the *unclamped*
    sample. Deterministic mode returns the mean and touches no rng.
    """
    mean, _ = mlp_forward(agent.actor, obs)
    _checked(mean, "policy actor output")
    lo, hi = _head_bounds(agent.actor)
    if stochastic:
        sigma = np.exp(agent.log_sigma)
        sample = gaussian_sample(mean, sigma, rng)
        action = np.clip(sample, lo, hi)
        logprob = float(gaussian_logprob(mean, sigma, sample))
    else:
        sample = mean
        action = np.clip(mean, lo, hi)
        logprob = float(gaussian_logprob(mean, np.exp(agent.log_sigma), mean))
    value = 0.0
    if with_value:
        v, _ = mlp_forward(agent.critic, obs)
        value = float(_checked(v, "policy critic output")[0])
    return ActResult(action=action, sample=sample, logprob=logprob, value=value)


def instinct_input(obs: np.ndarray, policy_action: np.ndarray) -> np.ndarray:
    """The instinct's view: observation with the policy's proposal appended."""
    return np.concatenate([obs, policy_action])


def instinct_act(
    agent: InstinctAgent,
    obs: np.ndarray,
    policy_action: np.ndarray,
    stochastic: bool,
    rng: np.random.Generator | None = None,
    with_value: bool = True,
) -> tuple[InstinctOutput, ActResult]:
    """One instinct decision given the policy's proposed action.

    All three heads share the Gaussian noise treatment; after sampling, the
    action dims clamp to +-0.1 and the modulation clips to [0, 1], while the
    log-prob is evaluated on the raw sample.
    """
    x = instinct_input(obs, policy_action)
    mean, _ = mlp_forward(agent.actor, x)
    _checked(mean, "instinct actor output")
    if stochastic:
        sigma = np.exp(agent.log_sigma)
        sample = gaussian_sample(mean, sigma, rng)
        logprob = float(gaussian_logprob(mean, sigma, sample))
    else:
        sample = mean
        logprob = float(gaussian_logprob(mean, np.exp(agent.log_sigma), mean))
    lo, hi = _head_bounds(agent.actor)  # +-0.1 action dims, [0, 1] modulation
    clipped = np.clip(sample, lo, hi)
    action = clipped[:2]
    modulation = float(clipped[2])
    value = 0.0
    if with_value:
        v, _ = mlp_forward(agent.critic, x)
        value = float(_checked(v, "instinct critic output")[0])
    out = InstinctOutput(action=action, modulation=modulation)
    return out, ActResult(action=action, sample=sample, logprob=logprob, value=value)


def mix_actions(policy_action, instinct_action, modulation: float) -> np.ndarray:
    """Blend the two proposals: m * a_p + (1 - m) * a_i, componentwise.

    A convex combination of clamped actions needs no further clamping.
    """
    m = float(modulation)
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"modulation {m} outside [0, 1]")
    return m * np.asarray(policy_action, dtype=float) + (1.0 - m) * np.asarray(
        instinct_action, dtype=float
    )


def instinct_reward(
    hazard: int,
    modulation: float,
    task_reward: float,
    hazard_penalty: float = INSTINCT_HAZARD_PENALTY,
    task_gain: float = INSTINCT_TASK_GAIN,
) -> float:
    """Per-step instinct reward: (1 - h * H) * m * r_t * D.

    Safe steps pay the instinct for letting task reward through (m high);
    hazard steps flip the sign hard for any m > 0, so suppressing fully is
    the only way to avoid punishment when contact happens anyway.
    """
    return (1.0 - hazard * hazard_penalty) * modulation * task_reward * task_gain


# --- checkpoint serialization -------------------------------------------------

def _agent_to_dict(actor: MlpParams, log_sigma: np.ndarray, critic: MlpParams) -> dict:
    return {
        "actor": mlp_to_dict(actor),
        "log_sigma": log_sigma.tolist(),
        "critic": mlp_to_dict(critic),
    }


def _policy_from_dict(data: dict) -> PolicyAgent:
    return PolicyAgent(
        actor=mlp_from_dict(data["actor"]),
        log_sigma=np.asarray(data["log_sigma"], dtype=float),
        critic=mlp_from_dict(data["critic"]),
    )


def _instinct_from_dict(data: dict) -> InstinctAgent:
    return InstinctAgent(
        actor=mlp_from_dict(data["actor"]),
        log_sigma=np.asarray(data["log_sigma"], dtype=float),
        critic=mlp_from_dict(data["critic"]),
    )


def save_checkpoint(path, policy: PolicyAgent, instinct: InstinctAgent | None = None) -> str:
    """Write one self-describing JSON checkpoint (atomically: tmp + rename).

    The role tag records whether an instinct rides along; floats use
    Python's shortest round-trip decimal form, so reloading is bit-exact.
    """
    role = ROLE_POLICY_PLUS_INSTINCT if instinct is not None else ROLE_POLICY_ONLY
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "role": role,
        "policy": _agent_to_dict(policy.actor, policy.log_sigma, policy.critic),
        "instinct": None
        if instinct is None
        else _agent_to_dict(instinct.actor, instinct.log_sigma, instinct.critic),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return role


def load_checkpoint(path) -> tuple[str, PolicyAgent, InstinctAgent | None]:
    """Read a checkpoint; returns (role, policy, instinct-or-None)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format_version {version!r}")
    role = doc.get("role")
    if role not in (ROLE_POLICY_ONLY, ROLE_POLICY_PLUS_INSTINCT):
        raise ConfigurationError(f"unknown checkpoint role {role!r}")
    policy = _policy_from_dict(doc["policy"])
    instinct = None
    if role == ROLE_POLICY_PLUS_INSTINCT:
        if doc.get("instinct") is None:
            raise ConfigurationError("role says instinct present but none stored")
        instinct = _instinct_from_dict(doc["instinct"])
    return role, policy, instinct


def params_digest(*agents) -> str:
    """Stable hash of all parameter bytes; used to assert frozen components."""
    import hashlib

    h = hashlib.sha256()
    for agent in agents:
        if agent is None:
            h.update(b"none")
            continue
        for arr in (*agent.actor.weights, *agent.actor.biases, agent.log_sigma,
                    *agent.critic.weights, *agent.critic.biases):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
