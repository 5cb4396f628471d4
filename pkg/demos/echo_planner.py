"""Minimal external planner: reads one JSON request line, writes one strip line.

Proposes a band of the requested width centred on the belief altitude,
clamped to the envelope, which the verifier then checks.  Wire it in with

    {"planner": {"kind": "external", "command": ["python3", "demos/echo_planner.py"]}}

in the JSON config passed to ``sim run --config``.
"""

import json
import sys

req = json.loads(sys.stdin.readline())
ctx = req["context"]
ax = ctx.get("altitude_index", 0)
half = 0.5 * ctx["width"]
z = req["belief"]["mean"][ax]
c = min(max(z, ctx["z_min"] + half), ctx["z_max"] - half)
theta1 = [0.0] * len(req["belief"]["mean"])
theta1[ax] = 1.0
print(json.dumps({"theta1": theta1, "theta2": c - half, "theta3": c + half}))
