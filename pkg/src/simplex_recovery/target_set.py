"""Strip-shaped target sets: validation, membership, distance to center, Gaussian mass."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .dynamics import GaussianBelief
from .errors import ContractViolation


class TargetForm(enum.Enum):
    STRIP = "strip"

    @classmethod
    def parse(cls, value) -> "TargetForm":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ContractViolation(f"unregistered target form {value!r}") from None


class InvalidTarget(ValueError):
    """Raised by :func:`validate_params`; ``violations`` lists every failed constraint."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Strip:
    """{x : theta2 <= theta1 . x <= theta3}."""

    theta1: np.ndarray
    theta2: float
    theta3: float

    def __post_init__(self):
        t1 = np.array(self.theta1, dtype=float).reshape(-1)
        t1.setflags(write=False)
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", float(self.theta2))
        object.__setattr__(self, "theta3", float(self.theta3))
        bad = _violations(t1, self.theta2, self.theta3)
        if bad:
            raise InvalidTarget(bad)

    @property
    def n(self) -> int:
        return self.theta1.shape[0]

    @property
    def center(self) -> float:
        return 0.5 * (self.theta2 + self.theta3)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta1))

    @property
    def half_width(self) -> float:
        """Half the slab thickness in state units."""
        return 0.5 * (self.theta3 - self.theta2) / self.norm

    def __eq__(self, other):
        if not isinstance(other, Strip):
            return NotImplemented
        return (np.array_equal(self.theta1, other.theta1) and self.theta2 == other.theta2
                and self.theta3 == other.theta3)

    def __hash__(self):
        return hash((self.theta1.tobytes(), self.theta2, self.theta3))

    def to_dict(self) -> dict:
        return {"theta1": self.theta1.tolist(), "theta2": self.theta2, "theta3": self.theta3}


def _violations(t1, t2, t3) -> list:
    bad = []
    if not (np.all(np.isfinite(t1)) and math.isfinite(t2) and math.isfinite(t3)):
        bad.append("non-finite entries")
    elif t1.size == 0 or np.linalg.norm(t1) == 0.0:
        bad.append("zero direction")
    if math.isfinite(t2) and math.isfinite(t3) and t2 > t3:
        bad.append("empty strip")
    return bad


def validate_params(form, theta) -> Strip:
    """Check a raw parameter bundle against the valid parameter set of ``form``.

    ``theta`` is a mapping with keys theta1/theta2/theta3 or a 3-sequence.
    Raises :class:`InvalidTarget` naming every violation.
    """
    TargetForm.parse(form)
    try:
        if isinstance(theta, dict):
            t1, t2, t3 = theta["theta1"], theta["theta2"], theta["theta3"]
        else:
            t1, t2, t3 = theta
        t1 = np.array(t1, dtype=float).reshape(-1)
        t2, t3 = float(t2), float(t3)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidTarget([f"malformed parameters: {exc}"]) from None
    bad = _violations(t1, t2, t3)
    if bad:
        raise InvalidTarget(bad)
    return Strip(t1, t2, t3)


def _check_dim(s: Strip, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != s.n:
        raise ContractViolation(f"state has length {x.shape[0]}, strip expects {s.n}")
    return x


def contains(s: Strip, x) -> bool:
    v = float(s.theta1 @ _check_dim(s, x))
    return s.theta2 <= v <= s.theta3


def distance_to_center(s: Strip, x) -> float:
    return abs(float(s.theta1 @ _check_dim(s, x)) - s.center) / s.norm


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def interval_mass(lo: float, hi: float, m: float, sd: float) -> float:
    """P(lo <= N(m, sd^2) <= hi) with point-mass semantics at sd == 0."""
    if sd <= 0.0:
        return 1.0 if lo <= m <= hi else 0.0
    a, b = (lo - m) / sd, (hi - m) / sd
    if a > 0:
        # upper tail: difference of survival functions keeps precision
        return max(0.0, _phi(-a) - _phi(-b))
    return max(0.0, _phi(b) - _phi(a))


def interval_mass_array(lo: float, hi: float, m: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Vectorized :func:`interval_mass`."""
    m = np.asarray(m, dtype=float)
    sd = np.asarray(sd, dtype=float)
    pos = sd > 0
    safe = np.where(pos, sd, 1.0)
    a, b = (lo - m) / safe, (hi - m) / safe
    upper = np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    point = ((lo <= m) & (m <= hi)).astype(float)
    return np.where(pos, np.clip(upper, 0.0, 1.0), point)


def strip_probability(s: Strip, b: GaussianBelief) -> float:
    if b.n != s.n:
        raise ContractViolation(f"belief has dimension {b.n}, strip expects {s.n}")
    m = float(s.theta1 @ b.mean)
    var = float(s.theta1 @ b.cov @ s.theta1)
    return interval_mass(s.theta2, s.theta3, m, math.sqrt(max(var, 0.0)))
