"""Command-line surface: configuration, training commands, exports.

Commands
--------
pretrain-policy     phase-1 policy pre-training (add --hazards for the
                    baseline variant that trains under the shaped reward)
pretrain-instinct   phase-2 instinct pre-training against a frozen policy
train               transfer training on buttons/push in one of three modes
evaluate            50-episode deterministic evaluation of a checkpoint
suite               grid of (mode, seed) transfer runs plus a summary table
export-trajectory   one deterministic episode as JSON lines for plotting

Precedence: command-line flags override config-file values, which override
the profile defaults ("paper" hyperparameters unless --profile desk). The
fully resolved config is echoed into the output directory for provenance.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import pipeline
from .agent import load_checkpoint
from .errors import ConfigurationError, NumericalError, UsageError
from .metrics import read_metrics
from .pipeline import MODES, PhaseConfig, SuiteCell
from .rl import PpoHyper, play_episode
from .tasks import DEFAULT_TRANSFER_PUNISHMENT, TaskConfig, TaskKind

OUTPUT_ROOT_ENV = "INSTINCT_RL_OUTPUT_ROOT"

COMMANDS = (
    "pretrain-policy",
    "pretrain-instinct",
    "train",
    "evaluate",
    "suite",
    "export-trajectory",
)

# Training-scale defaults. Hyperparameters shared by both profiles (discount,
# clip, learning rate, sigma_init, H, D, H_t) live in RunConfig directly.
PROFILES = {
    "paper": {"hidden_sizes": (512, 512, 512), "trajectories": 216, "epochs": 300, "horizon": 1000},
    "desk": {"hidden_sizes": (64, 64), "trajectories": 20, "epochs": 60, "horizon": 400},
}


@dataclass
class RunConfig:
    """Fully resolved run description; every field has a concrete value."""

    command: str
    profile: str = "paper"
    task: str | None = None
    mode: str | None = None
    seed: int = 0
    epochs: int | None = None
    trajectories: int | None = None
    horizon: int | None = None
    hidden_sizes: tuple = ()
    gamma: float = 0.99
    clip: float = 0.2
    ppo_epochs: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 1e-3
    gae_lambda: float = 0.95
    minibatches: int = 32
    max_grad_norm: float = 0.5
    sigma_init: float = 0.6
    instinct_hazard_penalty: float = 100.0  # H in the instinct reward
    instinct_task_gain: float = 15.0  # D in the instinct reward
    punishment: float | None = None  # H_t; None resolves per task
    instinct_m_bias: float = 0.0
    hazards: bool = False  # pretrain-policy: train the hazardous baseline
    episodes: int = 50  # evaluate / suite evaluation episodes
    count_hazard_reward: bool = False
    modes: tuple = MODES  # suite
    seeds: tuple = ()  # suite
    workers: int = 1
    checkpoint: str | None = None  # evaluate / export-trajectory input
    policy_checkpoint: str | None = None
    instinct_checkpoint: str | None = None
    out_dir: str | None = None


_RANGE_CHECKS = {
    "gamma": lambda v: 0.0 < v <= 1.0,
    "clip": lambda v: v > 0.0,
    "ppo_epochs": lambda v: v >= 1,
    "value_coef": lambda v: v >= 0.0,
    "entropy_coef": lambda v: v >= 0.0,
    "lr": lambda v: v > 0.0,
    "gae_lambda": lambda v: 0.0 <= v <= 1.0,
    "minibatches": lambda v: v >= 1,
    "max_grad_norm": lambda v: v > 0.0,
    "sigma_init": lambda v: v > 0.0,
    "instinct_hazard_penalty": lambda v: v >= 0.0,
    "instinct_task_gain": lambda v: v >= 0.0,
    "punishment": lambda v: v is None or v >= 0.0,
    "seed": lambda v: v >= 0,
    "epochs": lambda v: v is None or v >= 1,
    "trajectories": lambda v: v is None or v >= 1,
    "horizon": lambda v: v is None or v >= 1,
    "episodes": lambda v: v >= 1,
    "workers": lambda v: v >= 1,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise UsageError(message)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part != "")
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text: str) -> tuple:
    return tuple(part for part in text.split(",") if part != "")


def _build_parser() -> _Parser:
    parser = _Parser(prog="instinct-rl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="JSON config file (flags still win)")
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--workers", type=int, help="rollout worker processes")

    def training(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--trajectories", type=int, help="trajectories per epoch")
        p.add_argument("--horizon", type=int, help="steps per episode")
        p.add_argument("--hidden", dest="hidden_sizes", type=_int_list, help="e.g. 512,512,512")
        p.add_argument("--gamma", type=float)
        p.add_argument("--clip", type=float)
        p.add_argument("--ppo-epochs", dest="ppo_epochs", type=int)
        p.add_argument("--value-coef", dest="value_coef", type=float)
        p.add_argument("--entropy-coef", dest="entropy_coef", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--gae-lambda", dest="gae_lambda", type=float)
        p.add_argument("--minibatches", type=int)
        p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float)
        p.add_argument("--sigma", dest="sigma_init", type=float)
        p.add_argument("--punishment", type=float, help="H_t, per-step hazard punishment")

    p = sub.add_parser("pretrain-policy", help="phase-1 policy pre-training (goal task)")
    common(p)
    training(p)
    p.add_argument("--hazards", action="store_true", default=None,
                   help="enable hazards: trains the pretrained-baseline policy")

    p = sub.add_parser("pretrain-instinct", help="phase-2 instinct pre-training")
    common(p)
    training(p)
    p.add_argument("--policy", dest="policy_checkpoint", help="phase-1 checkpoint")
    p.add_argument("--instinct-hazard-penalty", type=float, help="H in the instinct reward")
    p.add_argument("--instinct-task-gain", type=float, help="D in the instinct reward")
    p.add_argument("--m-bias", dest="instinct_m_bias", type=float)

    p = sub.add_parser("train", help="transfer training on buttons/push")
    common(p)
    training(p)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--instinct", dest="instinct_checkpoint", help="phase-2 checkpoint (ir2l)")
    p.add_argument("--policy", dest="policy_checkpoint",
                   help="pre-trained policy checkpoint (pretrained_baseline)")

    p = sub.add_parser("evaluate", help="deterministic checkpoint evaluation")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--punishment", type=float)
    p.add_argument("--count-hazard-reward", dest="count_hazard_reward",
                   action="store_true", default=None)

    p = sub.add_parser("suite", help="grid of transfer runs plus summary")
    common(p)
    training(p)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--modes", type=_str_list, help="comma-separated modes")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    p.add_argument("--episodes", type=int)
    p.add_argument("--instinct", dest="instinct_checkpoint")
    p.add_argument("--policy", dest="policy_checkpoint")

    p = sub.add_parser("export-trajectory", help="dump one episode as JSON lines")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--horizon", type=int)
    return parser


def parse_config(argv=None) -> RunConfig:
    """argv -> validated RunConfig (flags > config file > profile defaults)."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError(f"missing command; choose one of {', '.join(COMMANDS)}")

    cli_values = {k: v for k, v in vars(ns).items() if k not in ("config",) and v is not None}
    file_values = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        for key in file_values:
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
        if "command" in file_values and file_values["command"] != ns.command:
            raise UsageError(
                f"config file is for command {file_values['command']!r}, not {ns.command!r}"
            )

    profile = cli_values.get("profile") or file_values.get("profile") or "paper"
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r}")
    merged = {"command": ns.command, "profile": profile}
    scale = PROFILES[profile]
    merged["hidden_sizes"] = scale["hidden_sizes"]
    merged["trajectories"] = scale["trajectories"]
    merged["epochs"] = scale["epochs"]
    merged["horizon"] = scale["horizon"]
    for src in (file_values, cli_values):
        for key, value in src.items():
            if key in ("command", "profile"):
                continue
            merged[key] = value
    if isinstance(merged.get("hidden_sizes"), list):
        merged["hidden_sizes"] = tuple(merged["hidden_sizes"])
    for key in ("modes", "seeds"):
        if isinstance(merged.get(key), list):
            merged[key] = tuple(merged[key])

    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise UsageError(f"unknown config key {sorted(unknown)[0]!r}")
    cfg = RunConfig(**merged)

    for key, check in _RANGE_CHECKS.items():
        value = getattr(cfg, key)
        if not check(value):
            raise UsageError(f"value out of range for {key!r}: {value}")
    if cfg.hidden_sizes and any(h < 1 for h in cfg.hidden_sizes):
        raise UsageError(f"value out of range for 'hidden_sizes': {cfg.hidden_sizes}")
    _validate_command(cfg)
    return cfg


def _require(cfg: RunConfig, *keys):
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise UsageError(
            f"{cfg.command} requires {', '.join(repr(m) for m in missing)}"
        )


def _validate_command(cfg: RunConfig) -> None:
    if cfg.command == "pretrain-instinct":
        _require(cfg, "policy_checkpoint")
    elif cfg.command == "train":
        _require(cfg, "task", "mode")
        if cfg.task == "goal":
            raise UsageError("train targets 'buttons' or 'push'; goal is for pre-training")
        if cfg.mode == pipeline.MODE_IR2L:
            _require(cfg, "instinct_checkpoint")
        if cfg.mode == pipeline.MODE_PRETRAINED:
            _require(cfg, "policy_checkpoint")
    elif cfg.command == "evaluate":
        _require(cfg, "checkpoint", "task")
    elif cfg.command == "suite":
        _require(cfg, "task", "modes", "seeds")
        for mode in cfg.modes:
            if mode not in MODES:
                raise UsageError(f"unknown mode {mode!r} in 'modes'")
        if pipeline.MODE_IR2L in cfg.modes:
            _require(cfg, "instinct_checkpoint")
        if pipeline.MODE_PRETRAINED in cfg.modes:
            _require(cfg, "policy_checkpoint")
    elif cfg.command == "export-trajectory":
        _require(cfg, "checkpoint", "task")


def resolve_out_dir(cfg: RunConfig, name: str) -> Path:
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / name


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = asdict(cfg)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _hyper(cfg: RunConfig) -> PpoHyper:
    try:
        return PpoHyper(
            gamma=cfg.gamma,
            clip=cfg.clip,
            ppo_epochs=cfg.ppo_epochs,
            value_coef=cfg.value_coef,
            entropy_coef=cfg.entropy_coef,
            lr=cfg.lr,
            gae_lambda=cfg.gae_lambda,
            minibatches=cfg.minibatches,
            max_grad_norm=cfg.max_grad_norm,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc


def _task_config(cfg: RunConfig, kind: str, hazards_enabled: bool = True,
                 punishment: float | None = None) -> TaskConfig:
    if punishment is None:
        punishment = cfg.punishment
    if punishment is None:
        punishment = DEFAULT_TRANSFER_PUNISHMENT[kind]
    return TaskConfig(
        kind=kind,
        hazard_punishment=punishment,
        hazards_enabled=hazards_enabled,
        horizon=cfg.horizon,
        seed=cfg.seed,
    )


def _phase_config(cfg: RunConfig, phase: str, task: TaskConfig, out_dir: Path) -> PhaseConfig:
    return PhaseConfig(
        phase=phase,
        task=task,
        epochs=cfg.epochs,
        trajectories_per_epoch=cfg.trajectories,
        hyper=_hyper(cfg),
        hidden_sizes=cfg.hidden_sizes,
        sigma_init=cfg.sigma_init,
        hazard_penalty=cfg.instinct_hazard_penalty,
        task_gain=cfg.instinct_task_gain,
        instinct_m_bias=cfg.instinct_m_bias,
        mode=cfg.mode or pipeline.MODE_RANDOM,
        master_seed=cfg.seed,
        workers=cfg.workers,
        policy_checkpoint=cfg.policy_checkpoint,
        instinct_checkpoint=cfg.instinct_checkpoint,
        out_dir=out_dir,
    )


def _progress_printer(total: int):
    every = max(1, total // 10)

    def report(row):
        if row.update % every == 0 or row.update == total - 1:
            print(
                f"update {row.update:4d}  collisions {row.collisions:6d}  "
                f"eval_return {row.eval_return:9.3f}"
            )

    return report


def _cmd_pretrain_policy(cfg: RunConfig) -> int:
    out = resolve_out_dir(cfg, f"phase1-seed{cfg.seed}" if not cfg.hazards else f"baseline-pretrain-seed{cfg.seed}")
    _echo_config(cfg, out)
    if cfg.hazards:
        task = _task_config(cfg, "goal", hazards_enabled=True)
        result = pipeline.pretrain_baseline_policy(
            _phase_config(cfg, pipeline.PHASE1, task, out), _progress_printer(cfg.epochs)
        )
    else:
        task = _task_config(cfg, "goal", hazards_enabled=False, punishment=0.0)
        result = pipeline.pretrain_policy_phase1(
            _phase_config(cfg, pipeline.PHASE1, task, out), _progress_printer(cfg.epochs)
        )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"cumulative training collisions: {result.cumulative_collisions}")
    return 0


def _cmd_pretrain_instinct(cfg: RunConfig) -> int:
    out = resolve_out_dir(cfg, f"phase2-seed{cfg.seed}")
    _echo_config(cfg, out)
    task = _task_config(cfg, "goal", hazards_enabled=True, punishment=0.0)
    result = pipeline.pretrain_instinct_phase2(
        _phase_config(cfg, pipeline.PHASE2, task, out), _progress_printer(cfg.epochs)
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"cumulative training collisions: {result.cumulative_collisions}")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    out = resolve_out_dir(cfg, f"{cfg.task}-{cfg.mode}-seed{cfg.seed}")
    _echo_config(cfg, out)
    task = _task_config(cfg, cfg.task, hazards_enabled=True)
    result = pipeline.train_transfer(
        _phase_config(cfg, pipeline.TRANSFER, task, out), _progress_printer(cfg.epochs)
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"cumulative training collisions: {result.cumulative_collisions}")
    return 0


def _cmd_evaluate(cfg: RunConfig) -> int:
    task = _task_config(cfg, cfg.task)
    stats = pipeline.evaluate_checkpoint(
        cfg.checkpoint,
        task,
        n_episodes=cfg.episodes,
        master_seed=cfg.seed,
        count_hazard_reward=cfg.count_hazard_reward,
    )
    q1, q3 = stats.quartiles("returns")
    cq1, cq3 = stats.quartiles("collisions")
    print(f"episodes: {cfg.episodes}")
    print(f"return median {stats.median_return:.4f} (q1 {q1:.4f}, q3 {q3:.4f})")
    print(f"collisions median {stats.median_collisions:.1f} (q1 {cq1:.1f}, q3 {cq3:.1f})")
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        _echo_config(cfg, out)
        with open(out / "eval.json", "w") as fh:
            json.dump(
                {
                    "task": cfg.task,
                    "seed": cfg.seed,
                    "episodes": cfg.episodes,
                    "count_hazard_reward": cfg.count_hazard_reward,
                    "returns": stats.returns.tolist(),
                    "collisions": stats.collisions.tolist(),
                },
                fh,
            )
    return 0


def _cmd_suite(cfg: RunConfig) -> int:
    out = resolve_out_dir(cfg, f"suite-{cfg.task}")
    _echo_config(cfg, out)
    task = _task_config(cfg, cfg.task, hazards_enabled=True)
    base = _phase_config(cfg, pipeline.TRANSFER, task, out)
    cells = [SuiteCell(mode=m, task=task, seed=s) for m in cfg.modes for s in cfg.seeds]
    report = pipeline.run_experiment_suite(base, cells, eval_episodes=cfg.episodes)
    write_suite_summary(report, out)
    print(format_suite_summary(report))
    failures = [r for r in report.cell_rows if r["status"] != "ok"]
    for row in failures:
        print(f"FAILED {row['mode']} seed {row['seed']}: {row['error']}", file=sys.stderr)
    return 0


def _cmd_export_trajectory(cfg: RunConfig) -> int:
    _, policy, instinct = load_checkpoint(cfg.checkpoint)
    task = _task_config(cfg, cfg.task)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 9090]))
    result = play_episode(task, policy, instinct, rng, learner=None, record_trajectory=True)
    out_path = Path(cfg.out_dir) if cfg.out_dir else resolve_out_dir(cfg, "trajectories") / (
        f"{cfg.task}-seed{cfg.seed}.jsonl"
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write(json.dumps(layout_header(cfg, result.layout)) + "\n")
        for rec in result.trajectory:
            if instinct is None:
                rec = dict(rec, m=1.0)
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {out_path} ({len(result.trajectory) + 1} lines)")
    return 0


def layout_header(cfg: RunConfig, layout) -> dict:
    return {
        "type": "layout",
        "task": cfg.task,
        "seed": cfg.seed,
        "horizon": cfg.horizon or 1000,
        "half_extent": layout.half_extent,
        "agent_start": [layout.agent_start.x, layout.agent_start.y, layout.agent_start.heading],
        "hazards": [
            [float(c[0]), float(c[1]), float(r)]
            for c, r in zip(layout.hazard_centers, layout.hazard_radii)
        ],
        "buttons": [
            [float(c[0]), float(c[1]), float(r)]
            for c, r in zip(layout.button_centers, layout.button_radii)
        ],
        "correct_button": layout.correct_button,
        "goal": None
        if layout.goal_center is None
        else [float(layout.goal_center[0]), float(layout.goal_center[1]), layout.goal_radius],
        "box": None
        if layout.box_center is None
        else [float(layout.box_center[0]), float(layout.box_center[1]), layout.box_radius],
    }


def format_suite_summary(report) -> str:
    lines = [
        f"{'mode':<20} {'runs':>4} {'collisions med [q1, q3]':>28} {'return med [q1, q3]':>28}"
    ]
    for row in report.mode_summary:
        lines.append(
            f"{row['mode']:<20} {row['runs']:>4} "
            f"{row['collisions_median']:>10.1f} [{row['collisions_q1']:.1f}, {row['collisions_q3']:.1f}]"
            f"{row['return_median']:>12.3f} [{row['return_q1']:.3f}, {row['return_q3']:.3f}]"
        )
    return "\n".join(lines)


def write_suite_summary(report, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = (
        "mode", "runs",
        "collisions_median", "collisions_q1", "collisions_q3",
        "return_median", "return_q1", "return_q3",
    )
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.mode_summary:
            fh.write(
                ",".join(
                    str(row[c]) if c in ("mode", "runs") else format(row[c], ".17g")
                    for c in cols
                )
                + "\n"
            )
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(format_suite_summary(report) + "\n")


def summarize_suite(cell_dirs) -> "pipeline.SuiteReport":
    """Rebuild a suite summary from per-cell run directories.

    Each directory must hold the cell's metrics.csv and eval.json; the
    cumulative training collisions are re-derived from the metrics rows.
    """
    dirs = [Path(d) for d in cell_dirs]
    if not dirs:
        raise ValueError("summarize_suite needs at least one run directory")
    cell_rows = []
    for d in dirs:
        with open(d / "eval.json") as fh:
            ev = json.load(fh)
        rows = read_metrics(d / "metrics.csv")
        returns = np.asarray(ev["returns"], dtype=float)
        cell_rows.append(
            {
                "status": "ok",
                "mode": ev["mode"],
                "task": ev["task"],
                "seed": ev["seed"],
                "cumulative_collisions": int(sum(r.collisions for r in rows)),
                "median_eval_return": float(np.median(returns)),
                "eval_return_q1": float(np.percentile(returns, 25)),
                "eval_return_q3": float(np.percentile(returns, 75)),
                "median_eval_collisions": float(np.median(ev["collisions"])),
            }
        )
    return pipeline.SuiteReport(
        cell_rows=cell_rows, mode_summary=pipeline.summarize_cells(cell_rows)
    )


_DISPATCH = {
    "pretrain-policy": _cmd_pretrain_policy,
    "pretrain-instinct": _cmd_pretrain_instinct,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "suite": _cmd_suite,
    "export-trajectory": _cmd_export_trajectory,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
        return _DISPATCH[cfg.command](cfg)
    except (UsageError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
