"""Cosine-annealing cyclic learning-rate schedules with checkpoint markers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class CosineCycleSchedule:
    """Cyclic half-cosine decay from start_lr towards 0.

    One cycle spans iterations_per_cycle iterations; the schedule
    restarts at start_lr at each cycle boundary.
    """

    start_lr: float
    iterations_per_cycle: int
    cycles: int = 1

    def __post_init__(self):
        if self.start_lr <= 0:
            raise ValueError(f"start_lr must be > 0, got {self.start_lr}")
        if self.iterations_per_cycle < 1:
            raise ValueError(f"iterations_per_cycle must be >= 1, got {self.iterations_per_cycle}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")

    @property
    def total_iterations(self) -> int:
        return self.iterations_per_cycle * self.cycles


def lr_at(schedule: CosineCycleSchedule, t: int) -> float:
    """Learning rate at global iteration t (0-based)."""
    if not 0 <= t < schedule.total_iterations:
        raise ValueError(
            f"iteration {t} outside [0, {schedule.total_iterations})"
        )
    n = schedule.iterations_per_cycle
    phase = t % n
    return 0.5 * schedule.start_lr * (1.0 + math.cos(math.pi * phase / n))


@dataclass(frozen=True)
class ScheduleRow:
    iteration: int
    lr: float
    checkpoint: bool


def emit_schedule(
    schedule: CosineCycleSchedule,
    checkpoint_epochs: list[int] | None = None,
) -> list[ScheduleRow]:
    """Tabulate (iteration, lr) rows, marking checkpoint positions.

    checkpoint_epochs lists cycle indices: 0 marks iteration 0 (the
    starting weight); cycle e >= 1 marks the last iteration of that
    cycle. Marking cycles 0..cycles therefore yields cycles+1 weights,
    which for the 10-cycle configuration gives the familiar 11.
    """
    checkpoint_epochs = checkpoint_epochs or []
    n = schedule.iterations_per_cycle
    marked = set()
    for epoch in checkpoint_epochs:
        if not 0 <= epoch <= schedule.cycles:
            raise ValueError(f"checkpoint epoch {epoch} outside [0, {schedule.cycles}]")
        marked.add(0 if epoch == 0 else epoch * n - 1)
    return [
        ScheduleRow(iteration=t, lr=lr_at(schedule, t), checkpoint=t in marked)
        for t in range(schedule.total_iterations)
    ]


def write_schedule_csv(rows: list[ScheduleRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "lr", "checkpoint"])
        for row in rows:
            writer.writerow([row.iteration, repr(row.lr), int(row.checkpoint)])
