"""Experiment orchestration: the two pre-training phases, transfer, evaluation.

The program mirrors a three-stage curriculum:

1. phase 1 -- train a plain policy on the goal task with hazards removed.
2. phase 2 -- freeze that policy, add the hazard grid, and train a fresh
   instinct (stochastic) against it on the instinct reward.
3. transfer -- train a policy from scratch on buttons or push under the
   shaped reward r_t - h * H_t, either protected by the frozen phase-2
   instinct (ir2l) or bare (random / pretrained baselines).

Each training run logs one metrics row per update (collisions are counted
over the exploration batch; the eval return comes from a single
deterministic episode on a freshly seeded layout) and ends in an atomic
JSON checkpoint.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import (
    INSTINCT_HAZARD_PENALTY,
    INSTINCT_TASK_GAIN,
    ROLE_POLICY_ONLY,
    ROLE_POLICY_PLUS_INSTINCT,
    SIGMA_INIT,
    InstinctAgent,
    PolicyAgent,
    load_checkpoint,
    make_instinct_agent,
    make_policy_agent,
    save_checkpoint,
)
from .errors import ConfigurationError
from .metrics import MetricsRow, MetricsWriter
from .rl import (
    LEARNER_INSTINCT,
    LEARNER_POLICY,
    PpoHyper,
    collect_rollout,
    compute_returns_advantages,
    play_episode,
    ppo_update,
)
from .tasks import TaskConfig, TaskKind

MODE_IR2L = "ir2l"
MODE_RANDOM = "random_baseline"
MODE_PRETRAINED = "pretrained_baseline"
MODES = (MODE_IR2L, MODE_RANDOM, MODE_PRETRAINED)

PHASE1 = "phase1"
PHASE2 = "phase2"
TRANSFER = "transfer"

# Distinct seed streams so init, shuffling and evaluation never collide
# with the per-trajectory rollout streams.
_STREAM_POLICY_INIT = 1001
_STREAM_INSTINCT_INIT = 1002
_STREAM_UPDATE = 1003
_STREAM_EVAL = 1004
_STREAM_EVAL_SUITE = 1005


def _rng(master_seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), stream, int(index)]))


@dataclass
class PhaseConfig:
    """One training run's full recipe."""

    phase: str  # phase1 | phase2 | transfer
    task: TaskConfig
    epochs: int
    trajectories_per_epoch: int
    hyper: PpoHyper = field(default_factory=PpoHyper)
    hidden_sizes: tuple = (512, 512, 512)
    sigma_init: float = SIGMA_INIT
    hazard_penalty: float = INSTINCT_HAZARD_PENALTY  # instinct reward H
    task_gain: float = INSTINCT_TASK_GAIN  # instinct reward D
    instinct_m_bias: float = 0.0
    mode: str = MODE_IR2L  # used by transfer runs only
    master_seed: int = 0
    workers: int = 1
    policy_checkpoint: str | Path | None = None
    instinct_checkpoint: str | Path | None = None
    out_dir: str | Path | None = None


@dataclass
class RunResult:
    rows: list
    cumulative_collisions: int
    policy: PolicyAgent
    instinct: InstinctAgent | None
    checkpoint_path: Path | None


@dataclass
class EvalStats:
    """Per-episode deterministic evaluation results."""

    returns: np.ndarray
    collisions: np.ndarray

    @property
    def median_return(self) -> float:
        return float(np.median(self.returns))

    @property
    def median_collisions(self) -> float:
        return float(np.median(self.collisions))

    def quartiles(self, which: str):
        arr = self.returns if which == "returns" else self.collisions
        return float(np.percentile(arr, 25)), float(np.percentile(arr, 75))


def _train_loop(cfg: PhaseConfig, policy, instinct, learner: str, progress=None) -> RunResult:
    writer = None
    if cfg.out_dir is not None:
        writer = MetricsWriter(Path(cfg.out_dir) / "metrics.csv")
    rows = []
    adam = None
    learner_ac = policy if learner == LEARNER_POLICY else instinct
    total_steps = 0
    try:
        for update in range(cfg.epochs):
            batch = collect_rollout(
                cfg.task,
                policy,
                instinct,
                learner,
                cfg.trajectories_per_epoch,
                cfg.master_seed,
                update,
                hazard_penalty=cfg.hazard_penalty,
                task_gain=cfg.task_gain,
                workers=cfg.workers,
            )
            batch = compute_returns_advantages(batch, cfg.hyper)
            learner_ac, adam, stats = ppo_update(
                learner_ac, batch, cfg.hyper, adam, _rng(cfg.master_seed, _STREAM_UPDATE, update)
            )
            if learner == LEARNER_POLICY:
                policy = learner_ac
            else:
                instinct = learner_ac
            ev = play_episode(
                cfg.task, policy, instinct, _rng(cfg.master_seed, _STREAM_EVAL, update), learner=None
            )
            total_steps += batch.total_steps
            row = MetricsRow(
                update=update,
                env_steps=total_steps,
                mean_batch_reward=float(batch.rewards.mean()),
                collisions=int(batch.hazards.sum()),
                eval_return=ev.shaped_return,
                mean_modulation=(
                    None if batch.modulations is None else float(batch.modulations.mean())
                ),
                actor_loss=stats.actor_loss,
                critic_loss=stats.value_loss,
                entropy=stats.entropy,
                clip_fraction=stats.clip_fraction,
            )
            rows.append(row)
            if writer is not None:
                writer.append(row)
            if progress is not None:
                progress(row)
    finally:
        if writer is not None:
            writer.close()
    ckpt_path = None
    if cfg.out_dir is not None:
        ckpt_path = Path(cfg.out_dir) / "checkpoint.json"
        save_checkpoint(ckpt_path, policy, instinct)
    return RunResult(
        rows=rows,
        cumulative_collisions=int(sum(r.collisions for r in rows)),
        policy=policy,
        instinct=instinct,
        checkpoint_path=ckpt_path,
    )


def pretrain_policy_phase1(cfg: PhaseConfig, progress=None) -> RunResult:
    """Phase 1: plain policy learns the goal task with hazards disabled."""
    if cfg.task.kind is not TaskKind.GOAL:
        raise ConfigurationError("phase 1 pre-trains on the goal task")
    if cfg.task.hazards_enabled:
        raise ConfigurationError("phase 1 runs without hazards")
    policy = make_policy_agent(
        cfg.hidden_sizes, _rng(cfg.master_seed, _STREAM_POLICY_INIT), sigma_init=cfg.sigma_init
    )
    return _train_loop(cfg, policy, None, LEARNER_POLICY, progress)


def pretrain_baseline_policy(cfg: PhaseConfig, progress=None) -> RunResult:
    """Pre-train the no-instinct baseline: goal task *with* hazards under
    the shaped reward. Run it for the phase-1 + phase-2 epoch budget so its
    sample count matches the two-phase curriculum."""
    if cfg.task.kind is not TaskKind.GOAL:
        raise ConfigurationError("baseline pre-training uses the goal task")
    if not cfg.task.hazards_enabled:
        raise ConfigurationError("baseline pre-training needs hazards enabled")
    policy = make_policy_agent(
        cfg.hidden_sizes, _rng(cfg.master_seed, _STREAM_POLICY_INIT), sigma_init=cfg.sigma_init
    )
    return _train_loop(cfg, policy, None, LEARNER_POLICY, progress)


def pretrain_instinct_phase2(cfg: PhaseConfig, progress=None) -> RunResult:
    """Phase 2: hazards return, the phase-1 policy freezes (deterministic),
    and a fresh stochastic instinct trains on the instinct reward."""
    if cfg.task.kind is not TaskKind.GOAL:
        raise ConfigurationError("phase 2 pre-trains on the goal task")
    if not cfg.task.hazards_enabled:
        raise ConfigurationError("phase 2 needs hazards enabled")
    if cfg.policy_checkpoint is None:
        raise ConfigurationError("phase 2 requires a phase-1 policy checkpoint")
    role, policy, _ = load_checkpoint(cfg.policy_checkpoint)
    if role != ROLE_POLICY_ONLY:
        raise ConfigurationError(
            f"phase 2 expects a {ROLE_POLICY_ONLY} checkpoint, got {role}"
        )
    instinct = make_instinct_agent(
        cfg.hidden_sizes,
        _rng(cfg.master_seed, _STREAM_INSTINCT_INIT),
        sigma_init=cfg.sigma_init,
        m_bias=cfg.instinct_m_bias,
    )
    return _train_loop(cfg, policy, instinct, LEARNER_INSTINCT, progress)


def train_transfer(cfg: PhaseConfig, progress=None) -> RunResult:
    """Transfer training on buttons or push in one of the three modes."""
    if cfg.task.kind not in (TaskKind.BUTTONS, TaskKind.PUSH):
        raise ConfigurationError("transfer training targets the buttons or push task")
    if cfg.mode not in MODES:
        raise ConfigurationError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    instinct = None
    if cfg.mode == MODE_IR2L:
        if cfg.instinct_checkpoint is None:
            raise ConfigurationError("ir2l transfer requires a phase-2 instinct checkpoint")
        role, _, instinct = load_checkpoint(cfg.instinct_checkpoint)
        if role != ROLE_POLICY_PLUS_INSTINCT or instinct is None:
            raise ConfigurationError(
                f"ir2l transfer expects a {ROLE_POLICY_PLUS_INSTINCT} checkpoint, got {role}"
            )
        policy = make_policy_agent(
            cfg.hidden_sizes, _rng(cfg.master_seed, _STREAM_POLICY_INIT), sigma_init=cfg.sigma_init
        )
    elif cfg.mode == MODE_RANDOM:
        policy = make_policy_agent(
            cfg.hidden_sizes, _rng(cfg.master_seed, _STREAM_POLICY_INIT), sigma_init=cfg.sigma_init
        )
    else:
        if cfg.policy_checkpoint is None:
            raise ConfigurationError(
                "pretrained_baseline transfer requires a pre-trained policy checkpoint"
            )
        role, policy, _ = load_checkpoint(cfg.policy_checkpoint)
        if role != ROLE_POLICY_ONLY:
            raise ConfigurationError(
                f"pretrained_baseline expects a {ROLE_POLICY_ONLY} checkpoint, got {role}"
            )
    return _train_loop(cfg, policy, instinct, LEARNER_POLICY, progress)


def evaluate(
    policy: PolicyAgent,
    instinct: InstinctAgent | None,
    task: TaskConfig,
    n_episodes: int = 50,
    master_seed: int = 0,
    count_hazard_reward: bool = False,
) -> EvalStats:
    """Deterministic evaluation over freshly seeded episodes.

    Returns raw task returns by default (hazards not charged); with
    ``count_hazard_reward`` the shaped r_t - h * H_t return is reported.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    returns = np.empty(n_episodes)
    collisions = np.empty(n_episodes, dtype=np.int64)
    for ep in range(n_episodes):
        res = play_episode(
            task, policy, instinct, _rng(master_seed, _STREAM_EVAL_SUITE, ep), learner=None
        )
        returns[ep] = res.shaped_return if count_hazard_reward else res.task_return
        collisions[ep] = res.collisions
    return EvalStats(returns=returns, collisions=collisions)


def evaluate_checkpoint(path, task: TaskConfig, **kwargs) -> EvalStats:
    _, policy, instinct = load_checkpoint(path)
    return evaluate(policy, instinct, task, **kwargs)


@dataclass
class SuiteCell:
    mode: str
    task: TaskConfig
    seed: int

    @property
    def name(self) -> str:
        return f"{self.task.kind.value}_{self.mode}_seed{self.seed}"


@dataclass
class SuiteReport:
    cell_rows: list  # one dict per cell (including failures)
    mode_summary: list  # one dict per mode with medians / quartiles


def _quartiles(values):
    arr = np.asarray(values, dtype=float)
    return (
        float(np.median(arr)),
        float(np.percentile(arr, 25)),
        float(np.percentile(arr, 75)),
    )


def summarize_cells(cell_rows) -> list[dict]:
    """Group successful cells by mode; median and IQR of the cumulative
    training collisions and of the per-run median eval return."""
    ok = [r for r in cell_rows if r.get("status") == "ok"]
    if not ok:
        raise ValueError("no successful runs to summarize")
    summary = []
    for mode in sorted({r["mode"] for r in ok}):
        rows = [r for r in ok if r["mode"] == mode]
        col_med, col_q1, col_q3 = _quartiles([r["cumulative_collisions"] for r in rows])
        ret_med, ret_q1, ret_q3 = _quartiles([r["median_eval_return"] for r in rows])
        summary.append(
            {
                "mode": mode,
                "runs": len(rows),
                "collisions_median": col_med,
                "collisions_q1": col_q1,
                "collisions_q3": col_q3,
                "return_median": ret_med,
                "return_q1": ret_q1,
                "return_q3": ret_q3,
            }
        )
    return summary


def run_experiment_suite(
    base: PhaseConfig,
    cells: list[SuiteCell],
    eval_episodes: int = 50,
    progress=None,
) -> SuiteReport:
    """Run every (mode, task, seed) cell and aggregate per-mode statistics.

    A failing cell is recorded with its error and the suite continues.
    """
    if not cells:
        raise ValueError("suite needs at least one cell")
    cell_rows = []
    for cell in cells:
        out_dir = None if base.out_dir is None else Path(base.out_dir) / cell.name
        cfg = replace(
            base, phase=TRANSFER, mode=cell.mode, task=cell.task,
            master_seed=cell.seed, out_dir=out_dir,
        )
        try:
            result = train_transfer(cfg, progress=progress)
            stats = evaluate(
                result.policy, result.instinct, cell.task,
                n_episodes=eval_episodes, master_seed=cell.seed,
            )
            row = {
                "status": "ok",
                "mode": cell.mode,
                "task": cell.task.kind.value,
                "seed": cell.seed,
                "cumulative_collisions": result.cumulative_collisions,
                "median_eval_return": stats.median_return,
                "eval_return_q1": stats.quartiles("returns")[0],
                "eval_return_q3": stats.quartiles("returns")[1],
                "median_eval_collisions": stats.median_collisions,
            }
            if out_dir is not None:
                with open(Path(out_dir) / "eval.json", "w") as fh:
                    json.dump(
                        {
                            **{k: row[k] for k in ("mode", "task", "seed")},
                            "episodes": eval_episodes,
                            "returns": stats.returns.tolist(),
                            "collisions": stats.collisions.tolist(),
                        },
                        fh,
                    )
        except Exception as exc:  # cell isolation: record and continue
            row = {
                "status": "error",
                "mode": cell.mode,
                "task": cell.task.kind.value,
                "seed": cell.seed,
                "error": f"{type(exc).__name__}: {exc}",
            }
        cell_rows.append(row)
    report = SuiteReport(cell_rows=cell_rows, mode_summary=summarize_cells(cell_rows))
    if base.out_dir is not None:
        with open(Path(base.out_dir) / "suite_report.json", "w") as fh:
            json.dump({"cells": report.cell_rows, "summary": report.mode_summary}, fh, indent=2)
    return report
