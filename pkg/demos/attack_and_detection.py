# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # A GPS spoof and the CUSUM alarm
#
# One episode of the nominal loop, written out step by step with the public
# API: the true altitude evolves under the PD hold, the GPS reading gets a
# +3 m bias from step 500, the Kalman filter fuses GPS and velocity, and the
# CUSUM on the altitude innovation raises the alarm.  The rollback anchor is
# the newest buffered belief at least W steps before the alarm.

# +
import numpy as np

from simplex_recovery import (BeliefBuffer, DetectorState, ExperimentConfig, GaussianBelief,
                              apply_attack, cusum_step, kalman_update, measure, predict_belief,
                              residual, rollback_anchor, step_truth)
from simplex_recovery.recovery import nominal_control

cfg = ExperimentConfig()
model = cfg.model.build()
bounds = cfg.input_bounds
ctrl = cfg.nominal()
attack = cfg.attack
W = 60

rng = np.random.default_rng(7)
x = np.array(cfg.model.x0)
prior = GaussianBelief(x.copy(), np.diag(cfg.model.p0))
det = DetectorState(cfg.detector.drift, cfg.detector.threshold)
buf = BeliefBuffer(128)
trace = []
# -

# Only the altitude channel feeds the detector; the velocity sensor is
# trusted throughout.

# +
for t in range(cfg.episode_length):
    y_raw = measure(model, x, rng)
    y = apply_attack(attack, t, y_raw)
    r = residual(model, prior, y, attack.target_sensor)
    det = cusum_step(det, r, t)
    post = kalman_update(model, prior, y, range(model.p))
    buf.push(t, post)
    trace.append((t, x[0], y[0], r, det.S))
    if det.fired:
        break
    u = nominal_control(ctrl, post, bounds)
    w = rng.multivariate_normal(np.zeros(model.n), model.Q)
    x = step_truth(model, x, u, w)
    prior = predict_belief(model, post, u)

print(f"attack starts at step {attack.start_step}, alarm at step {det.alarm_step}")
for t, z, yz, r, S in trace[attack.start_step - 3:]:
    print(f"step {t:4d}  altitude {z:7.3f}  gps {yz:7.3f}  innovation {r:+6.3f}  S {S:6.3f}")
# -

# The anchor predates the attack, so its belief is uncontaminated.

anchor_step, anchor = rollback_anchor(buf, det.alarm_step, W)
print(f"anchor step {anchor_step}: mean {np.round(anchor.mean, 3)}, "
      f"altitude sd {np.sqrt(anchor.cov[0, 0]):.3f}")
