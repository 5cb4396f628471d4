# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Success rate and distance against GPS noise
#
# Every controller over every noise multiplier with common random numbers:
# seed i draws the same process and sensor normals under all controllers, so
# differences come from the controllers alone.  `sim sweep` does the same
# from the command line.

# +
import argparse
from pathlib import Path

from simplex_recovery import ExperimentConfig, aggregate, sweep, write_csv
from simplex_recovery.plot import emit_plot

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, default=200)
ap.add_argument("--out", default=str(Path(__file__).parent / "out"))
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

cfg = ExperimentConfig(seeds=args.seeds)
records = sweep(cfg)
write_csv(records, out / "sweep.csv")
aggs = aggregate(records)
# -

# +
print(f"{'sigma':>6} {'controller':<8} {'success':>8} {'mean_dist':>10}")
for a in aggs:
    print(f"{a.sigma:>6g} {a.controller:<8} {a.success_rate:>8.3f} {a.mean_distance:>10.4f}")
# -

# The probabilistic controllers stay in the strip at every noise level.  The
# LQR baseline ends its fixed horizon still converging and VS drifts on a
# prediction that is never corrected.

for metric in ("success_rate", "mean_distance"):
    emit_plot(aggs, metric, out / f"{metric}.svg")
print("wrote", *(out / f"{m}.svg" for m in ("success_rate", "mean_distance")))
