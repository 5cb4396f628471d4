"""CSV persistence for run records and episode trajectories."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ContractViolation

HEADER = ("seed", "sigma", "controller", "attack_step", "alarm_step", "recovery_steps",
          "final_distance", "success", "reasons")


@dataclass(frozen=True)
class RunRecord:
    seed: int
    sigma: float
    controller: str
    attack_step: Optional[int]
    alarm_step: Optional[int]
    recovery_steps: int
    final_distance: float
    success: bool
    reasons: tuple = ()

    @property
    def failed(self) -> bool:
        return any(r.startswith("failed") for r in self.reasons)


class MalformedCSV(ContractViolation):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def fmt_float(v: float) -> str:
    return format(float(v), ".9g")


def _opt_int(v: Optional[int]) -> str:
    return "" if v is None else str(int(v))


def _clean_reason(r: str) -> str:
    # ';' separates reasons in the file
    return str(r).replace(";", ",").replace("\n", " ")


def record_row(r) -> list:
    return [str(int(r.seed)), fmt_float(r.sigma), r.controller, _opt_int(r.attack_step),
            _opt_int(r.alarm_step), str(int(r.recovery_steps)), fmt_float(r.final_distance),
            "true" if r.success else "false", ";".join(_clean_reason(x) for x in r.reasons)]


def dumps_records(records: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow(record_row(r))
    return buf.getvalue()


def write_csv(records: Iterable, path) -> None:
    Path(path).write_text(dumps_records(records), newline="")


def _parse_row(row: list, line: int):
    if len(row) != len(HEADER):
        raise MalformedCSV(line, f"expected {len(HEADER)} fields, got {len(row)}")
    seed, sigma, ctrl, atk, alarm, steps, dist, succ, reasons = row
    try:
        return RunRecord(
            seed=int(seed), sigma=float(sigma), controller=ctrl,
            attack_step=int(atk) if atk else None,
            alarm_step=int(alarm) if alarm else None,
            recovery_steps=int(steps), final_distance=float(dist),
            success={"true": True, "false": False}[succ],
            reasons=tuple(reasons.split(";")) if reasons else ())
    except (ValueError, KeyError) as exc:
        raise MalformedCSV(line, f"bad value ({exc})") from None


def loads_records(text: str) -> list:
    rows = csv.reader(io.StringIO(text))
    try:
        head = next(rows)
    except StopIteration:
        raise MalformedCSV(1, "missing header") from None
    if tuple(head) != HEADER:
        raise MalformedCSV(1, f"unexpected header {','.join(head)}")
    return [_parse_row(row, rows.line_num) for row in rows]


def read_csv(path) -> list:
    return loads_records(Path(path).read_text())


# ---------------------------------------------------------------------------
# trajectories

def trajectory_header(n: int, m: int, p: int) -> list:
    return (["controller", "step", "mode"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
            + [f"y_raw{i}" for i in range(p)] + [f"y{i}" for i in range(p)] + ["strip_lo", "strip_hi"])


def _altitude_band(strip, axis: int = 0):
    t = strip.theta1[axis]
    return sorted((strip.theta2 / t, strip.theta3 / t))


def dumps_trajectories(episodes: dict, axis: int = 0) -> str:
    """{controller: Episode} -> CSV text; each episode ends with a ``final`` row holding its last state."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for ctrl, ep in episodes.items():
        tr = ep.trajectory
        if tr is None:
            raise ContractViolation(f"episode for {ctrl} has no trajectory")
        n = ep.final_state.shape[0]
        m = tr.inputs[0].shape[0] if len(tr) else 1
        p = tr.raw[0].shape[0] if len(tr) else 1
        if header is None:
            header = trajectory_header(n, m, p)
            w.writerow(header)
        lo, hi = _altitude_band(ep.strip, axis)
        band = [fmt_float(lo), fmt_float(hi)]
        for step, x, u, yr, y, mode in zip(tr.steps, tr.states, tr.inputs, tr.raw, tr.attacked, tr.modes):
            w.writerow([ctrl, step, mode] + [fmt_float(v) for v in np.concatenate([x, u, yr, y])] + band)
        last = (tr.steps[-1] + 1) if len(tr) else 0
        w.writerow([ctrl, last, "final"] + [fmt_float(v) for v in ep.final_state] + [""] * (m + 2 * p) + band)
    return buf.getvalue()


def write_trajectories(episodes: dict, path, axis: int = 0) -> None:
    Path(path).write_text(dumps_trajectories(episodes, axis), newline="")


def read_trajectories(path) -> dict:
    """CSV -> {controller: {"step", "altitude", "mode", "strip"}} for plotting."""
    rows = csv.reader(io.StringIO(Path(path).read_text()))
    head = next(rows, None)
    if not head or head[:4] != ["controller", "step", "mode", "x0"] or head[-2:] != ["strip_lo", "strip_hi"]:
        raise MalformedCSV(1, "not a trajectory file")
    out: dict = {}
    for row in rows:
        line = rows.line_num
        if len(row) != len(head):
            raise MalformedCSV(line, f"expected {len(head)} fields, got {len(row)}")
        try:
            d = out.setdefault(row[0], {"step": [], "altitude": [], "mode": [],
                                        "strip": (float(row[-2]), float(row[-1]))})
            d["step"].append(int(row[1]))
            d["mode"].append(row[2])
            d["altitude"].append(float(row[3]))
        except ValueError as exc:
            raise MalformedCSV(line, f"bad value ({exc})") from None
    return out
