"""Noisy sensor readings and additive spoofing of one measurement channel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import LinearModel
from .errors import ContractViolation

ATTACK_KINDS = ("none", "bias", "ramp")


@dataclass(frozen=True)
class AttackScenario:
    """Additive spoof on ``target_sensor`` from ``start_step`` on.

    A positive bias on the altitude channel makes the vehicle believe it is
    higher than it is, so an unsuspecting altitude hold descends.
    """

    kind: str = "bias"
    target_sensor: int = 0
    start_step: int = 500
    magnitude: float = 3.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ContractViolation(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.kind == "none":
            return
        if self.target_sensor < 0 or self.start_step < 0:
            raise ContractViolation("target_sensor and start_step must be nonnegative")
        if not (math.isfinite(self.magnitude) and math.isfinite(self.slope)):
            raise ContractViolation("attack magnitude and slope must be finite")

    def check(self, model: LinearModel) -> None:
        if self.kind != "none" and self.target_sensor >= model.p:
            raise ContractViolation(f"target_sensor {self.target_sensor} >= p={model.p}")

    def signal(self, step: int) -> float:
        """Scheduled spoof added to the target channel at ``step``."""
        if self.kind == "none" or step < self.start_step:
            return 0.0
        if self.kind == "bias":
            return self.magnitude
        return self.slope * (step - self.start_step)


def measure(model: LinearModel, x, rng: np.random.Generator) -> np.ndarray:
    """y = C x + v with v ~ N(0, R); always consumes exactly p normals from ``rng``."""
    z = rng.standard_normal(model.p)
    return model.C @ np.asarray(x, dtype=float) + np.sqrt(np.diag(model.R)) * z


def apply_attack(scenario: AttackScenario, step: int, y) -> np.ndarray:
    if step < 0:
        raise ContractViolation(f"step must be >= 0, got {step}")
    y = np.array(y, dtype=float)
    if scenario.kind == "none" or step < scenario.start_step:
        return y
    y[scenario.target_sensor] += scenario.signal(step)
    return y
