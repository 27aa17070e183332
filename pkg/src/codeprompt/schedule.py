from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LRSchedule:
    """Linear warm-up from 0 to ``peak_lr`` then linear decay back to 0."""

    warmup_steps: int
    total_steps: int
    peak_lr: float

    def __post_init__(self):
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 < warmup_steps <= total_steps, got {self.warmup_steps}/{self.total_steps}")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be non-negative")


def lr_at(schedule: LRSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        if step == schedule.warmup_steps:
            return schedule.peak_lr
        return schedule.peak_lr * step / schedule.warmup_steps
    return schedule.peak_lr * (schedule.total_steps - step) / (schedule.total_steps - schedule.warmup_steps)
