"""Target-set planning: the built-in rule, the external JSON planner seam, and the verifier.

A planner maps (observations, target form, mission context) to strip
parameters.  Nothing a planner proposes reaches a recovery controller
without passing :func:`validate_params` and :func:`verify_target`.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import GaussianBelief, LinearModel
from .errors import ContractViolation, PlannerError
from .recovery import InputBounds, scan_horizons
from .target_set import InvalidTarget, Strip, TargetForm, validate_params

log = logging.getLogger(__name__)

AXIS_TOL = 1e-12


@dataclass(frozen=True)
class MissionContext:
    setpoint: float = 10.0
    z_min: float = 0.0
    z_max: float = 50.0
    width: float = 1.0
    altitude_index: int = 0

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ContractViolation(f"z_min must be below z_max, got [{self.z_min}, {self.z_max}]")
        if not self.width > 0:
            raise ContractViolation(f"band width must be positive, got {self.width}")

    def to_wire(self) -> dict:
        return {"setpoint": float(self.setpoint), "z_min": float(self.z_min),
                "z_max": float(self.z_max), "width": float(self.width)}


@dataclass(frozen=True)
class PlannerInput:
    belief: GaussianBelief
    measurements: tuple
    alarm_step: Optional[int]
    context: MissionContext
    form: TargetForm = TargetForm.STRIP

    def __post_init__(self):
        if len(self.measurements) < 1:
            raise ContractViolation("planner input needs at least one measurement")

    def to_json(self) -> str:
        doc = {
            "belief": {"mean": self.belief.mean.tolist(), "cov": self.belief.cov.tolist()},
            "form": self.form.value,
            "context": self.context.to_wire(),
            "measurements": [np.asarray(y, dtype=float).tolist() for y in self.measurements],
            "alarm_step": self.alarm_step,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, altitude_index: int = 0) -> "PlannerInput":
        doc = json.loads(text)
        ctx = doc["context"]
        return cls(GaussianBelief(doc["belief"]["mean"], doc["belief"]["cov"]),
                   tuple(np.array(y, dtype=float) for y in doc["measurements"]),
                   doc["alarm_step"],
                   MissionContext(ctx["setpoint"], ctx["z_min"], ctx["z_max"], ctx["width"], altitude_index),
                   TargetForm.parse(doc["form"]))


@dataclass(frozen=True)
class Verdict:
    safe: bool
    feasible: bool
    achievable_probability: float
    reasons: tuple = ()

    @property
    def accepted(self) -> bool:
        return self.safe and self.feasible


def plan_target(inp: PlannerInput) -> dict:
    """Rule-based planner: a band of the requested width around the clamped setpoint."""
    if inp.form is not TargetForm.STRIP:
        raise PlannerError(f"unsupported form {inp.form.value}")
    ctx = inp.context
    half = 0.5 * ctx.width
    if ctx.z_max - ctx.z_min < ctx.width:
        raise PlannerError("no admissible band")
    c = min(max(ctx.setpoint, ctx.z_min + half), ctx.z_max - half)
    theta1 = np.zeros(inp.belief.n)
    theta1[ctx.altitude_index] = 1.0
    return {"theta1": theta1.tolist(), "theta2": c - half, "theta3": c + half}


def verify_target(theta, model: LinearModel, b: GaussianBelief, bounds: InputBounds,
                  K_max: int, p_min: float, context: MissionContext) -> Verdict:
    """Certify a proposed strip as safe (inside the envelope) and feasible (reachable)."""
    try:
        s = validate_params(TargetForm.STRIP, theta)
    except InvalidTarget as exc:
        return Verdict(False, False, 0.0, tuple(exc.violations))
    if s.n != model.n:
        return Verdict(False, False, 0.0, (f"dimension mismatch: strip {s.n}, model {model.n}",))
    reasons = []
    ax = context.altitude_index
    t1 = s.theta1
    off_axis = np.delete(t1, ax)
    if t1[ax] == 0.0 or np.any(np.abs(off_axis) > AXIS_TOL * s.norm):
        safe = False
        reasons.append("unverifiable direction")
    else:
        lo, hi = sorted((s.theta2 / t1[ax], s.theta3 / t1[ax]))
        safe = bool(context.z_min <= lo and hi <= context.z_max)
        if not safe:
            reasons.append("outside envelope")
    best = float(scan_horizons(model, b, s, bounds, K_max).probability.max())
    feasible = bool(best >= p_min)
    if not feasible:
        reasons.append(f"infeasible: best probability {best:.4g} < {p_min:g}")
    return Verdict(safe, feasible, best, tuple(reasons))


def external_plan_target(request: PlannerInput, command, timeout: float = 10.0) -> dict:
    """Ask an external process for strip parameters over one JSON line each way.

    Raises :class:`PlannerError` with reason "planner timeout", "planner failed"
    or "malformed response"; validation is left to the caller.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise ContractViolation("no external planner command configured")
    try:
        proc = subprocess.run(argv, input=request.to_json() + "\n", capture_output=True,
                              text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise PlannerError("planner timeout") from None
    except OSError as exc:
        raise PlannerError(f"planner failed: {exc.strerror}") from None
    if proc.returncode != 0:
        raise PlannerError(f"planner failed: exit code {proc.returncode}")
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    try:
        if len(lines) != 1:
            raise ValueError(f"expected one JSON line, got {len(lines)}")
        doc = json.loads(lines[0])
        if not isinstance(doc, dict) or not {"theta1", "theta2", "theta3"} <= doc.keys():
            raise ValueError("missing theta1/theta2/theta3")
    except ValueError as exc:
        raise PlannerError(f"malformed response: {exc}") from None
    return doc


@dataclass
class TargetDecision:
    strip: Optional[Strip]
    verdict: Optional[Verdict]
    source: str
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.strip is not None


def obtain_target(inp: PlannerInput, model: LinearModel, bounds: InputBounds, K_max: int,
                  p_min: float, command: Optional[Sequence[str]] = None,
                  timeout: float = 10.0) -> TargetDecision:
    """Run the configured planner, falling back to the rule when the external one fails."""
    notes = []
    if command:
        try:
            theta = external_plan_target(inp, command, timeout)
            verdict = verify_target(theta, model, inp.belief, bounds, K_max, p_min, inp.context)
            if verdict.accepted:
                return TargetDecision(validate_params(TargetForm.STRIP, theta), verdict, "external")
            notes.append("fallback: " + ", ".join(verdict.reasons))
        except PlannerError as exc:
            notes.append(f"fallback: {exc.reason}")
        log.info("external planner rejected at step %s: %s", inp.alarm_step, notes[-1])
    try:
        theta = plan_target(inp)
    except PlannerError as exc:
        return TargetDecision(None, None, "rule", notes + [f"planner error: {exc.reason}"])
    verdict = verify_target(theta, model, inp.belief, bounds, K_max, p_min, inp.context)
    if not verdict.accepted:
        return TargetDecision(None, verdict, "rule", notes + ["target rejected: " + ", ".join(verdict.reasons)])
    return TargetDecision(validate_params(TargetForm.STRIP, theta), verdict, "rule", notes)
