"""``sim`` command line: run, sweep, plot, verify.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import CONTROLLERS, ExperimentConfig, load_config
from .dynamics import GaussianBelief
from .errors import ContractViolation, NumericalError, PlannerError, UnrecoverableEpisode
from .harness import aggregate, run_batch, sweep
from .planner import verify_target
from .plot import METRICS, emit_plot
from .records import dumps_records, read_csv, read_trajectories, write_csv, write_trajectories

USAGE, RUNTIME = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = _config(args.config)
    ctrls = CONTROLLERS if args.controller == "all" else (args.controller,)
    if args.controller != "all" and args.controller not in CONTROLLERS:
        raise UsageError(f"unknown controller {args.controller!r}; choose from {CONTROLLERS} or 'all'")
    res = run_batch(cfg, [args.seed], args.sigma, ctrls, keep_trajectory=args.traj is not None)
    eps = {c: res[c][0] for c in ctrls}
    sys.stdout.write(dumps_records(e.record for e in eps.values()))
    if args.traj:
        write_trajectories(eps, args.traj, cfg.mission.altitude_index)
    return 0


def _format_table(aggs) -> str:
    lines = [f"{'sigma':>6} {'controller':<8} {'n':>5} {'success':>8} {'mean_dist':>10} {'mean_steps':>10}"]
    for a in aggs:
        lines.append(f"{a.sigma:>6g} {a.controller:<8} {a.episodes:>5d} {a.success_rate:>8.3f} "
                     f"{a.mean_distance:>10.4g} {a.mean_recovery_steps:>10.1f}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    records = sweep(cfg, progress=lambda s: logging.info("sigma x%g done", s))
    write_csv(records, args.out)
    sys.stdout.write(_format_table(aggregate(records)))
    return 0


def cmd_plot(args) -> int:
    if (args.inp is None) == (args.traj is None):
        raise UsageError("give exactly one of --in (records) or --traj (trajectory)")
    if args.traj is not None:
        if args.metric != "timeseries":
            raise UsageError("--traj plots only the 'timeseries' metric")
        emit_plot(read_trajectories(args.traj), "timeseries", args.out)
    else:
        if args.metric == "timeseries":
            raise UsageError("'timeseries' needs --traj")
        emit_plot(aggregate(read_csv(args.inp)), args.metric, args.out)
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args.config)
    try:
        theta = json.loads(args.theta)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--theta is not valid JSON: {exc}") from None
    model = cfg.model.build()
    mc = cfg.model
    b = GaussianBelief(np.asarray(args.mean if args.mean else mc.x0, dtype=float), np.diag(mc.p0))
    v = verify_target(theta, model, b, cfg.input_bounds, cfg.recovery.K_max, cfg.recovery.p_min, cfg.mission)
    print(json.dumps({"safe": v.safe, "feasible": v.feasible, "accepted": v.accepted,
                      "achievable_probability": v.achievable_probability, "reasons": list(v.reasons)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sim", description="Attack detection and recovery simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="one episode; prints its run record(s) as CSV")
    r.add_argument("--config")
    r.add_argument("--controller", required=True, help=f"one of {', '.join(CONTROLLERS)} or 'all'")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--sigma", type=float, default=1.0, help="GPS noise multiplier (default 1)")
    r.add_argument("--traj", help="write the trajectory CSV here")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="every (sigma, controller, seed); writes records CSV")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    g = sub.add_parser("plot", help="SVG figure from records or a trajectory")
    g.add_argument("--in", dest="inp")
    g.add_argument("--traj")
    g.add_argument("--metric", required=True, choices=METRICS)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plot)

    v = sub.add_parser("verify", help="check strip parameters against the verifier")
    v.add_argument("--config")
    v.add_argument("--theta", required=True, help='JSON, e.g. {"theta1":[1,0],"theta2":9.5,"theta3":10.5}')
    v.add_argument("--mean", type=float, nargs="+", help="belief mean to verify from (default: x0)")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"sim {args.cmd}: {exc}", file=sys.stderr)
        return USAGE
    except (ContractViolation, NumericalError, PlannerError, UnrecoverableEpisode, OSError) as exc:
        print(f"sim {args.cmd}: error: {exc}", file=sys.stderr)
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
