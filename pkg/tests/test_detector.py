import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from simplex_recovery.config import DetectorConfig
from simplex_recovery.detector import (BeliefBuffer, DetectorState, cusum_batch, cusum_step, residual,
                                       rollback_anchor)
from simplex_recovery.dynamics import GaussianBelief, kalman_update, predict_belief
from simplex_recovery.errors import ContractViolation, UnrecoverableEpisode
from simplex_recovery.harness import alarm_steps, simulate_prefix
from simplex_recovery.recovery import NominalController, InputBounds, nominal_control
from simplex_recovery.sensing import AttackScenario, measure


def test_residual_zero_when_prediction_matches(model):
    assert residual(model, GaussianBelief([10, 0], np.eye(2)), [10, 4], 0) == 0


def test_residual_passes_bias(model):
    assert residual(model, GaussianBelief([10, 0], np.eye(2)), [13, 0], 0) == pytest.approx(3)


def test_residual_bad_sensor(model):
    with pytest.raises(ContractViolation):
        residual(model, GaussianBelief([10, 0], np.eye(2)), [13, 0], 2)


def test_innovation_magnitude_statistics(model):
    # oracle: |r| of a consistent filter is folded normal with scale sqrt(C P- C' + R)
    rng = np.random.default_rng(5)
    ctrl, bounds = NominalController(), InputBounds.symmetric(5.0)
    L = np.linalg.cholesky(model.Q)
    x = np.array([10.0, 0.0])
    b = GaussianBelief([10, 0], np.diag([0.01, 0.0025]))
    absr, scale = [], []
    for t in range(10_000):
        y = measure(model, x, rng)
        absr.append(abs(residual(model, b, y, 0)))
        scale.append(math.sqrt(b.cov[0, 0] + model.R[0, 0]))
        b = kalman_update(model, b, y, [0, 1])
        u = nominal_control(ctrl, b, bounds)
        x = model.A @ x + model.B @ u + L @ rng.standard_normal(2)
        b = predict_belief(model, b, u)
    expected = np.mean(scale[100:]) * math.sqrt(2 / math.pi)
    assert np.mean(absr[100:]) == pytest.approx(expected, rel=0.03)


def test_subcritical_residual_keeps_zero():
    d = cusum_step(DetectorState(0.3, 1.0), 0.25, 0)
    assert d.S == 0 and not d.fired


def test_arithmetic_ramp_alarms_on_third_step():
    d = DetectorState(0.2, 1.0)
    seen = []
    for k in range(3):
        d = cusum_step(d, 0.7, k)
        seen.append(d.S)
    np.testing.assert_allclose(seen, [0.5, 1.0, 1.5], atol=1e-12)
    assert d.alarm_step == 2


@given(st.floats(0, 5), st.integers(1, 30))
def test_statistic_invariant_to_residual_sign(r, n):
    a = b = DetectorState(0.3, 1e9)
    for k in range(n):
        a, b = cusum_step(a, r, k), cusum_step(b, -r, k)
    assert a == b


def test_fired_detector_refuses_more_input():
    d = cusum_step(DetectorState(0.0, 0.5), 1.0, 4)
    assert d.alarm_step == 4
    with pytest.raises(ContractViolation):
        cusum_step(d, 0.0, 5)


def test_detector_parameter_validation():
    with pytest.raises(ContractViolation):
        DetectorState(0.1, 0.0)
    with pytest.raises(ContractViolation):
        DetectorState(-0.1, 1.0)


def test_batch_matches_scalar_steps(rng):
    r = rng.normal(scale=0.6, size=(200, 40))
    S = np.zeros(40)
    alarm = np.full(40, -1)
    for t in range(200):
        S_new, fired = cusum_batch(S, r[t], 0.3, 1.0)
        fired &= alarm < 0
        alarm[fired] = t
        S = np.where(alarm < 0, S_new, S)
        S[fired] = S_new[fired]
    for j in range(40):
        d = DetectorState(0.3, 1.0)
        for t in range(200):
            d = cusum_step(d, r[t, j], t)
            if d.fired:
                break
        assert (d.alarm_step if d.fired else -1) == alarm[j]


def _buffer(steps):
    buf = BeliefBuffer(128)
    for s in steps:
        buf.push(s, GaussianBelief([float(s), 0.0], np.eye(2)))
    return buf


def test_rollback_index_arithmetic():
    step, b = rollback_anchor(_buffer(range(480, 521)), 510, 20)
    assert step == 490 and b.mean[0] == 490


def test_rollback_zero_window_returns_alarm_step():
    step, _ = rollback_anchor(_buffer(range(480, 521)), 510, 0)
    assert step == 510


def test_rollback_underflow():
    with pytest.raises(UnrecoverableEpisode):
        rollback_anchor(_buffer(range(480, 521)), 510, 40)


def test_buffer_invariants():
    buf = BeliefBuffer(3)
    for s in range(10):
        buf.push(s, GaussianBelief([0, 0], np.eye(2)))
    assert buf.steps == [7, 8, 9] and len(buf) == 3
    with pytest.raises(ContractViolation):
        buf.push(9, GaussianBelief([0, 0], np.eye(2)))
    with pytest.raises(ContractViolation):
        BeliefBuffer(0)


def test_anchor_mean_within_three_sigma_of_truth(cfg):
    # anchored mean vs true state at the anchor step, per component, 1000 seeds
    c = cfg.with_(episode_length=600)
    batch = simulate_prefix(c, range(1000), 1.0)
    W = c.detector.window
    ok = 0
    for i in range(1000):
        t0 = int(batch.alarm[i]) - W
        err = np.abs(batch.post_mean[t0, i] - batch.states[t0, i])
        ok += bool(np.all(err <= 3 * np.sqrt(np.diag(batch.post_cov[t0]))))
    assert ok >= 950, ok


def test_detection_delay_non_increasing_in_magnitude(cfg):
    delays = []
    sigma_gps = cfg.model.sigma_gps
    for mult in (1, 2, 3, 5):
        c = cfg.with_(attack=AttackScenario(magnitude=mult * sigma_gps), episode_length=1000)
        a = alarm_steps(c, range(500), 1.0)
        # undetected runs count as the full remaining episode
        delays.append(np.where(a >= 0, a - 500, 500).mean())
    assert all(x >= y for x, y in zip(delays, delays[1:])), delays


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 4.0, 8.0])
def test_no_alarm_before_attack_on_acceptance_seeds(cfg, sigma):
    a = alarm_steps(cfg, range(200), sigma)
    assert np.all(a >= cfg.attack.start_step)


def test_default_tuning_is_recorded():
    d = DetectorConfig()
    assert (d.drift, d.threshold, d.window) == (0.3, 1.0, 60)
