"""Deterministic SVG figures: altitude time series and sweep aggregates vs noise."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ContractViolation  # noqa: E402

METRICS = ("timeseries", "success_rate", "mean_distance")

_YLABEL = {"success_rate": "success rate (fraction of episodes)",
           "mean_distance": "mean final distance to strip center (m)"}


class EmptyData(ContractViolation):
    pass


def _save(fig, out) -> None:
    # fixed ids and no date stamp keep the file byte-stable
    with matplotlib.rc_context({"svg.hashsalt": "simplex-recovery", "svg.fonttype": "none"}):
        fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_timeseries(trajectories: dict, out) -> None:
    """{controller: {"step", "altitude", "mode", "strip"}} -> altitude vs step, strip shaded."""
    if not trajectories or not any(d["step"] for d in trajectories.values()):
        raise EmptyData("empty data")
    fig, ax = plt.subplots(figsize=(7, 4))
    shaded = set()
    for ctrl in sorted(trajectories):
        d = trajectories[ctrl]
        lo, hi = d["strip"]
        if (lo, hi) not in shaded:
            ax.axhspan(lo, hi, color="tab:green", alpha=0.15, label="target strip" if not shaded else None)
            shaded.add((lo, hi))
        ax.plot(d["step"], d["altitude"], lw=1.0, label=ctrl, marker="o" if len(d["step"]) == 1 else None)
    ax.set_xlabel("step")
    ax.set_ylabel("true altitude (m)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, out)


def plot_aggregate(aggs, metric: str, out) -> None:
    """Aggregate rows (see :func:`harness.aggregate`) -> metric vs sigma multiplier per controller."""
    if metric not in _YLABEL:
        raise ContractViolation(f"unknown metric {metric!r}; choose from {METRICS}")
    aggs = list(aggs)
    if not aggs:
        raise EmptyData("empty data")
    series: dict = {}
    for a in aggs:
        series.setdefault(a.controller, []).append((a.sigma, getattr(a, metric)))
    fig, ax = plt.subplots(figsize=(6, 4))
    for ctrl, pts in series.items():
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=ctrl)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("GPS noise multiplier (x sigma_gps)")
    ax.set_ylabel(_YLABEL[metric])
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, out)


def emit_plot(data, metric: str, out) -> Path:
    """Dispatch on ``metric``: trajectories for timeseries, aggregates otherwise."""
    if metric not in METRICS:
        raise ContractViolation(f"unknown metric {metric!r}; choose from {METRICS}")
    if metric == "timeseries":
        plot_timeseries(data, out)
    else:
        plot_aggregate(data, metric, out)
    return Path(out)
