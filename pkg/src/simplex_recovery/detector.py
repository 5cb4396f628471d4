"""Innovation CUSUM alarm and the belief ring buffer used to roll back past an attack."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynamics import GaussianBelief, LinearModel
from .errors import ContractViolation, UnrecoverableEpisode


@dataclass(frozen=True)
class DetectorState:
    drift: float
    threshold: float
    S: float = 0.0
    alarm_step: Optional[int] = None

    def __post_init__(self):
        if self.threshold <= 0:
            raise ContractViolation(f"threshold must be positive, got {self.threshold}")
        if self.drift < 0:
            raise ContractViolation(f"drift must be nonnegative, got {self.drift}")
        if self.S < 0:
            raise ContractViolation(f"CUSUM statistic must be nonnegative, got {self.S}")

    @property
    def fired(self) -> bool:
        return self.alarm_step is not None


def residual(model: LinearModel, b: GaussianBelief, y, sensor: int) -> float:
    """Reported minus predicted value on one sensor channel."""
    if not 0 <= sensor < model.p:
        raise ContractViolation(f"sensor {sensor} outside 0..{model.p - 1}")
    return float(y[sensor] - model.C[sensor] @ b.mean)


def cusum_step(d: DetectorState, r: float, step: int) -> DetectorState:
    if d.fired:
        raise ContractViolation(f"detector already fired at step {d.alarm_step}")
    S = max(0.0, d.S + abs(r) - d.drift)
    return replace(d, S=S, alarm_step=step if S > d.threshold else None)


def cusum_batch(S: np.ndarray, r: np.ndarray, drift: float, threshold: float):
    """Vectorized :func:`cusum_step` over independent detectors; returns (S', fired)."""
    S = np.maximum(0.0, S + np.abs(r) - drift)
    return S, S > threshold


class BeliefBuffer:
    """Fixed-capacity history of (step, belief), oldest entries evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, step: int, belief: GaussianBelief) -> None:
        if self._items and step <= self._items[-1][0]:
            raise ContractViolation(f"buffer steps must increase: {self._items[-1][0]} then {step}")
        self._items.append((int(step), belief))

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def steps(self) -> list:
        return [s for s, _ in self._items]


def rollback_anchor(buf: BeliefBuffer, alarm_step: int, W: int):
    """Newest buffered (step, belief) with step <= alarm_step - W."""
    cutoff = alarm_step - W
    for step, belief in reversed(buf._items):
        if step <= cutoff:
            return step, belief
    oldest = buf._items[0][0] if len(buf) else None
    raise UnrecoverableEpisode(
        f"rollback buffer too short: need step <= {cutoff}, oldest is {oldest}")

