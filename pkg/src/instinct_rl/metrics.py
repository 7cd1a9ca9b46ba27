"""Metrics CSV format: one row per weight update, append-only and crash-safe.

Floats are written with 17 significant digits so parsing a file back yields
bit-identical values; every append flushes a whole line, so a killed run
leaves a valid prefix behind.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

METRICS_COLUMNS = (
    "update",
    "env_steps",
    "mean_batch_reward",
    "collisions",
    "eval_return",
    "mean_modulation",
    "actor_loss",
    "critic_loss",
    "entropy",
    "clip_fraction",
)


@dataclass
class MetricsRow:
    update: int
    env_steps: int
    mean_batch_reward: float
    collisions: int
    eval_return: float
    mean_modulation: float | None
    actor_loss: float
    critic_loss: float
    entropy: float
    clip_fraction: float


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def format_row(row: MetricsRow) -> str:
    return ",".join(_fmt(getattr(row, col)) for col in METRICS_COLUMNS)


class MetricsWriter:
    """Append-only CSV writer that fails fast on unwritable paths."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._fh.write(",".join(METRICS_COLUMNS) + "\n")
        self._fh.flush()

    def append(self, row: MetricsRow) -> None:
        self._fh.write(format_row(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics(rows, path) -> None:
    """Write a complete metrics file in one go."""
    with MetricsWriter(path) as writer:
        for row in rows:
            writer.append(row)


def read_metrics(path) -> list[MetricsRow]:
    """Parse a metrics CSV (possibly a valid prefix of a longer run)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics header in {path}")
        for rec in reader:
            rows.append(
                MetricsRow(
                    update=int(rec["update"]),
                    env_steps=int(rec["env_steps"]),
                    mean_batch_reward=float(rec["mean_batch_reward"]),
                    collisions=int(rec["collisions"]),
                    eval_return=float(rec["eval_return"]),
                    mean_modulation=(
                        None if rec["mean_modulation"] == "" else float(rec["mean_modulation"])
                    ),
                    actor_loss=float(rec["actor_loss"]),
                    critic_loss=float(rec["critic_loss"]),
                    entropy=float(rec["entropy"]),
                    clip_fraction=float(rec["clip_fraction"]),
                )
            )
    return rows
