# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Target strips and the verifier
#
# A target is a strip {x : theta2 <= theta1' x <= theta3}.  Its probability
# under a Gaussian belief is a one-dimensional normal interval mass.  The
# verifier accepts a proposed strip only if it lies inside the altitude
# envelope and some horizon up to K_max reaches it with probability p_min.

# +
import numpy as np

from simplex_recovery import (ExperimentConfig, GaussianBelief, TargetForm, strip_probability,
                              validate_params, verify_target)

cfg = ExperimentConfig()
model = cfg.model.build()
belief = GaussianBelief(np.array([8.0, -0.5]), np.diag([0.04, 0.01]))
# -

# Probability of a few strips under a belief centred 2 m below the setpoint.

for lo, hi in [(9.5, 10.5), (7.5, 8.5), (7.0, 9.0)]:
    s = validate_params(TargetForm.STRIP, {"theta1": [1, 0], "theta2": lo, "theta3": hi})
    print(f"[{lo}, {hi}]  P = {strip_probability(s, belief):.4f}")

# Malformed parameters are rejected with every violation listed.

try:
    validate_params(TargetForm.STRIP, {"theta1": [0, 0], "theta2": 2.0, "theta3": 1.0})
except ValueError as exc:
    print("rejected:", exc)

# The verifier: the nominal band, a band above the envelope, a slanted strip
# it cannot certify and a band too narrow to reach with p_min.

# +
proposals = {
    "nominal band": {"theta1": [1, 0], "theta2": 9.5, "theta3": 10.5},
    "above envelope": {"theta1": [1, 0], "theta2": 60.0, "theta3": 61.0},
    "slanted": {"theta1": [1, 1], "theta2": 9.5, "theta3": 10.5},
    "too narrow": {"theta1": [1, 0], "theta2": 9.999, "theta3": 10.001},
}
rc = cfg.recovery
for name, theta in proposals.items():
    v = verify_target(theta, model, belief, cfg.input_bounds, rc.K_max, rc.p_min, cfg.mission)
    print(f"{name:15s} accepted={v.accepted!s:5s} best P={v.achievable_probability:.3f} {list(v.reasons)}")
# -
