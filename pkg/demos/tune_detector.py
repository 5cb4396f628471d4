# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Tuning the CUSUM detector
#
# The detector accumulates |innovation| - b on the GPS altitude channel and
# alarms when the sum exceeds tau.  Two numbers matter:
#
# * false alarms: attack-free episodes of 10^4 steps that alarm anyway
#   (budget: at most 1% of episodes),
# * detection: the default +3 m spoof must be caught within 50 steps in at
#   least 95% of episodes.
#
# A third number, the delay on a small 0.5 m spoof, tells sensitive tunings
# apart.  Run `python3 demos/tune_detector.py --full` for the 1000-episode
# version of the check.

# +
import argparse

import numpy as np

from simplex_recovery.config import DetectorConfig, ExperimentConfig
from simplex_recovery.harness import alarm_steps
from simplex_recovery.sensing import AttackScenario

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true", help="1000 episodes per cell instead of 200")
args = ap.parse_args()
N = 1000 if args.full else 200

base = ExperimentConfig()
start = base.attack.start_step
DRIFTS = (0.1, 0.15, 0.2, 0.3, 0.5)
THRESHOLDS = (0.3, 0.5, 1.0, 2.0)
# -

# Each cell runs the full nominal loop (Kalman filter, altitude hold,
# detector) over N seeds at once.  False-alarm seeds and attack seeds are
# disjoint from the ones the sweep uses.

# +
rows = []
for b in DRIFTS:
    for tau in THRESHOLDS:
        cfg = base.with_(detector=DetectorConfig(drift=b, threshold=tau))
        clean = cfg.with_(attack=AttackScenario(kind="none"), episode_length=10_000)
        fa = np.mean(alarm_steps(clean, range(100_000, 100_000 + N)) >= 0)
        hit = alarm_steps(cfg.with_(episode_length=start + 51), range(200_000, 200_000 + N))
        caught = np.mean((hit >= start) & (hit <= start + 50))
        small = cfg.with_(attack=AttackScenario(magnitude=0.5), episode_length=start + 500)
        a = alarm_steps(small, range(300_000, 300_000 + N))
        delay = np.where(a >= start, a - start, 500).mean()
        rows.append((b, tau, fa, caught, delay))

print(f"{'b':>5} {'tau':>5} {'false alarms':>13} {'caught<=50':>11} {'0.5 m delay':>12}")
for b, tau, fa, caught, delay in rows:
    print(f"{b:>5} {tau:>5} {fa:>13.1%} {caught:>11.1%} {delay:>12.1f}")
# -

# Selection: a cell is feasible when it has no false alarm at all (the
# budget is 1%; the margin covers the other noise levels, where b and tau
# scale with the GPS noise multiplier) and catches the 3 m spoof within 50
# steps in at least 95% of episodes.  The defaults are kept when they are
# feasible and so are all four grid neighbours, i.e. a moderate mis-tuning
# in either parameter would still pass.  Sensitivity to small spoofs is
# reported, not optimized: it is not a requirement, and every feasible
# cell alarms well inside the 60-step rollback window.

# +
feasible = {(r[0], r[1]): r[2] == 0.0 and r[3] >= 0.95 for r in rows}


def neighbours(b, tau):
    i, j = DRIFTS.index(b), THRESHOLDS.index(tau)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        if 0 <= i + di < len(DRIFTS) and 0 <= j + dj < len(THRESHOLDS):
            yield DRIFTS[i + di], THRESHOLDS[j + dj]


d = (DetectorConfig.drift, DetectorConfig.threshold)
robust = feasible[d] and all(feasible[c] for c in neighbours(*d))
print(f"\ndefaults b={d[0]}, tau={d[1]}: feasible={feasible[d]}, neighbours feasible={robust}")
print("feasible cells:", ", ".join(f"({b}, {t})" for (b, t), f in feasible.items() if f))
