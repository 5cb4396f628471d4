import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog, minimize_scalar

from simplex_recovery.dynamics import GaussianBelief, LinearModel, build_default_drone_model, kalman_update, predict_belief
from simplex_recovery.errors import ContractViolation, NumericalError
from simplex_recovery.recovery import (BEST_EFFORT, MET, InputBounds, NominalController, box_ls_solve,
                                       nominal_control, nominal_control_batch, opr_pcl_step, riccati_gains,
                                       scan_horizons, solve_at_horizon, solve_opr_ol, solve_rtr_lqr,
                                       strip_center_state, virtual_sensor_control)
from simplex_recovery.target_set import TargetForm, interval_mass, strip_probability, validate_params

from conftest import random_psd


def _objective(H, g, x):
    return 0.5 * x @ H @ x + g @ x


# ---------------------------------------------------------------- box_ls_solve

def test_box_ls_zero_gradient():
    assert np.array_equal(box_ls_solve(np.eye(3), np.zeros(3), -1, 1), np.zeros(3))


def test_box_ls_active_upper_bound():
    assert box_ls_solve(np.array([[2.0]]), np.array([-8.0]), -1, 1)[0] == 1.0


def _active_set_optimum(H, g, lo, hi):
    # oracle: every face of the box; free coordinates solve the reduced KKT system
    k = len(g)
    best = None
    for pattern in itertools.product((0, 1, 2), repeat=k):
        x = np.where(np.array(pattern) == 0, lo, np.where(np.array(pattern) == 2, hi, 0.0))
        free = [i for i, p in enumerate(pattern) if p == 1]
        if free:
            fixed = [i for i in range(k) if i not in free]
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ x[fixed])
            try:
                x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(x[free] < lo[free] - 1e-12) or np.any(x[free] > hi[free] + 1e-12):
                continue
        f = _objective(H, g, x)
        if best is None or f < best:
            best = f
    return best


def test_box_ls_five_dim_against_active_set_enumeration(rng):
    for _ in range(40):
        H = random_psd(rng, 5)
        g = rng.normal(size=5) * 3
        lo = -rng.uniform(0.2, 2, 5)
        hi = rng.uniform(0.2, 2, 5)
        x = box_ls_solve(H, g, lo, hi)
        assert np.all(x >= lo) and np.all(x <= hi)
        assert _objective(H, g, x) <= _active_set_optimum(H, g, lo, hi) + 1e-4


def test_box_ls_two_dim_against_dense_grid(rng):
    for _ in range(10):
        H = random_psd(rng, 2)
        g = rng.normal(size=2) * 3
        grid = np.arange(-1.0, 1.0 + 5e-4, 1e-3)
        X, Y = np.meshgrid(grid, grid)
        F = 0.5 * (H[0, 0] * X * X + 2 * H[0, 1] * X * Y + H[1, 1] * Y * Y) + g[0] * X + g[1] * Y
        x = box_ls_solve(H, g, -1, 1)
        assert _objective(H, g, x) <= F.min() + 1e-4


def test_box_ls_rejects_indefinite():
    with pytest.raises(NumericalError):
        box_ls_solve(np.diag([1.0, -1.0]), np.array([0.1, 0.1]), -1, 1)


def test_box_ls_contract():
    with pytest.raises(ContractViolation):
        box_ls_solve(np.eye(2), np.zeros(3), -1, 1)
    with pytest.raises(ContractViolation):
        box_ls_solve(np.eye(2), np.zeros(2), 1, -1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_box_ls_always_feasible_and_no_worse_than_start(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 8))
    H = random_psd(rng, k, 10 ** rng.uniform(-3, 3))
    g = rng.normal(size=k) * 10 ** rng.uniform(-3, 3)
    lo, hi = -rng.uniform(0, 3, k), rng.uniform(0, 3, k)
    x0 = np.clip(rng.normal(size=k), lo, hi)
    x = box_ls_solve(H, g, lo, hi, x0=x0, max_iter=200)
    assert np.all(x >= lo) and np.all(x <= hi)
    assert _objective(H, g, x) <= _objective(H, g, x0) + 1e-9 * (1 + abs(_objective(H, g, x0)))


# ---------------------------------------------------------------- horizon scan

def _rollout(model, b0, controls):
    b = b0
    for u in controls:
        b = predict_belief(model, b, u)
    return b


def test_scan_reachable_interval_matches_linear_programs(model, band):
    b0 = GaussianBelief([7.0, 1.0], np.diag([0.02, 0.01]))
    bounds = InputBounds([-2.0], [3.0])
    scan = scan_horizons(model, b0, band, bounds, 25)
    for k in (1, 4, 25):
        c = np.array([float(band.theta1 @ np.linalg.matrix_power(model.A, k - 1 - j) @ model.B[:, 0]) for j in range(k)])
        free = float(band.theta1 @ np.linalg.matrix_power(model.A, k) @ b0.mean)
        lo = linprog(c, bounds=[(-2, 3)] * k).fun + free
        hi = -linprog(-c, bounds=[(-2, 3)] * k).fun + free
        assert scan.reach_lo[k - 1] == pytest.approx(lo, abs=1e-10)
        assert scan.reach_hi[k - 1] == pytest.approx(hi, abs=1e-10)


def test_mean_targeting_is_optimal_per_horizon(model, rng):
    # the scan's probability equals direct maximization over the reachable interval
    for _ in range(20):
        b0 = GaussianBelief(rng.normal([10, 0], [3, 1]), random_psd(rng, 2, 0.2))
        c = rng.uniform(5, 15)
        s = validate_params(TargetForm.STRIP, ([1.0, rng.uniform(-0.3, 0.3)], c - 0.5, c + 0.5))
        scan = scan_horizons(model, b0, s, InputBounds.symmetric(rng.uniform(0.5, 5)), 60)
        for k in (1, 10, 60):
            lo, hi, sd = scan.reach_lo[k - 1], scan.reach_hi[k - 1], scan.sd[k - 1]
            if hi - lo < 1e-12:
                best = interval_mass(s.theta2, s.theta3, lo, sd)
            else:
                r = minimize_scalar(lambda m: -interval_mass(s.theta2, s.theta3, m, sd), bounds=(lo, hi),
                                    method="bounded", options={"xatol": 1e-12})
                best = max(-r.fun, interval_mass(s.theta2, s.theta3, lo, sd), interval_mass(s.theta2, s.theta3, hi, sd))
            assert scan.probability[k - 1] == pytest.approx(best, abs=1e-9)


def test_scan_covariance_matches_rollout(model, band, rng):
    b0 = GaussianBelief([9, 0.3], random_psd(rng, 2, 0.1))
    scan = scan_horizons(model, b0, band, InputBounds.symmetric(5), 40)
    b = _rollout(model, b0, np.zeros((40, 1)))
    assert scan.sd[-1] == pytest.approx(np.sqrt(b.cov[0, 0]), rel=1e-10)
    assert scan.free_mean[-1] == pytest.approx(b.mean[0], rel=1e-12)


# ---------------------------------------------------------------- OPR-OL

def _zero_noise():
    return build_default_drone_model().with_noise(Q=np.zeros((2, 2)), R=np.zeros((2, 2)))


def test_zero_noise_hits_center_exactly_without_regularizer(band):
    plan = solve_opr_ol(_zero_noise(), GaussianBelief([7, 0], np.zeros((2, 2))), band,
                        InputBounds.symmetric(1e5), 500, 0.95, rho=0.0)
    assert abs(plan.predicted_final_belief.mean[0] - 10) <= 1e-6
    assert plan.predicted_probability == 1.0 and plan.status == MET


def test_zero_noise_regularizer_adjusted(band):
    # the relative ridge pulls theta1' mu toward the start by d * rho / (1 + rho)
    rho = 1e-6
    plan = solve_opr_ol(_zero_noise(), GaussianBelief([7, 0], np.zeros((2, 2))), band,
                        InputBounds.symmetric(1e5), 500, 0.95, rho=rho)
    assert plan.horizon == 1
    assert plan.predicted_final_belief.mean[0] - 10 == pytest.approx(-3 * rho / (1 + rho), rel=1e-6)


@pytest.mark.parametrize("mean", [[5.0, 0.0], [8.0, 0.3]])
def test_zero_authority_reduces_to_prediction(model, band, mean):
    b0 = GaussianBelief(mean, np.diag([0.01, 0.0]))
    plan = solve_opr_ol(model, b0, band, InputBounds([0.0], [0.0]), 200, 0.999)
    assert plan.status == BEST_EFFORT
    assert np.all(plan.controls == 0)
    probs = []
    b = b0
    for _ in range(200):
        b = predict_belief(model, b, [0.0])
        probs.append(strip_probability(band, b))
    probs = np.array(probs)
    assert plan.predicted_probability == pytest.approx(probs.max(), abs=1e-12)
    # smallest horizon within the documented tie tolerance of the best
    assert plan.horizon == int(np.flatnonzero(probs >= probs.max() - 1e-12)[0]) + 1


def _grid_optimum(model, b0, s, levels, K):
    best = 0.0
    for k in range(1, K + 1):
        for us in itertools.product(levels, repeat=k):
            best = max(best, strip_probability(s, _rollout(model, b0, np.array(us)[:, None])))
    return best


def test_small_instance_beats_control_grid(band):
    model = build_default_drone_model(0.5)
    b0 = GaussianBelief([8.2, 0.4], np.diag([0.04, 0.02]))
    plan = solve_opr_ol(model, b0, band, InputBounds.symmetric(5), K_max=3, p_target=1.0)
    achieved = strip_probability(band, _rollout(model, b0, plan.controls))
    assert achieved >= _grid_optimum(model, b0, band, (-5, -2.5, 0, 2.5, 5), 3) - 1e-3


def test_plan_respects_bounds_and_reports_consistently(model, band, rng):
    for _ in range(10):
        b0 = GaussianBelief(rng.normal([10, 0], [4, 2]), random_psd(rng, 2, 0.1))
        bounds = InputBounds.symmetric(rng.uniform(0.5, 5))
        plan = solve_opr_ol(model, b0, band, bounds, 300)
        assert plan.controls.shape == (plan.horizon, 1)
        assert np.all(np.abs(plan.controls) <= bounds.u_max[0])
        final = _rollout(model, b0, plan.controls)
        np.testing.assert_allclose(plan.predicted_final_belief.mean, final.mean, rtol=1e-10, atol=1e-10)
        assert plan.predicted_probability == pytest.approx(strip_probability(band, final), abs=1e-10)


def test_long_horizon_implicit_matches_dense(model, band):
    b0 = GaussianBelief([2.0, 0.0], np.diag([0.01, 0.01]))
    bounds = InputBounds.symmetric(1.0)
    k = 90          # k*m > 64 takes the implicit path
    u_imp = solve_at_horizon(model, b0, band, bounds, k, warm_start=False, max_iter=200_000)
    u_warm = solve_at_horizon(model, b0, band, bounds, k)
    f = lambda u: float(band.theta1 @ _rollout(model, b0, u).mean)
    assert f(u_warm) == pytest.approx(f(u_imp), abs=1e-6)


def test_opr_contract(model, band):
    b = GaussianBelief([10, 0], np.eye(2))
    with pytest.raises(ContractViolation):
        solve_opr_ol(model, b, band, InputBounds.symmetric(5), K_max=0)
    with pytest.raises(ContractViolation):
        solve_opr_ol(model, GaussianBelief([1, 2, 3], np.eye(3)), band, InputBounds.symmetric(5))


# ---------------------------------------------------------------- OPR-PCL

def test_pcl_uninformative_update_matches_open_loop(model, band):
    noisy = model.with_noise(R=np.diag([0.01, 1e12]))
    b = GaussianBelief([8.0, 0.5], np.diag([0.02, 0.01]))
    y = noisy.C @ b.mean                           # zero innovation
    u, _, _ = opr_pcl_step(noisy, b, band, InputBounds.symmetric(5), [1], y, 200)
    ol = solve_opr_ol(noisy, b, band, InputBounds.symmetric(5), 200)
    assert u[0] == pytest.approx(ol.controls[0, 0], abs=1e-8)


def test_pcl_base_case_is_one_step_solve(model, band):
    b = GaussianBelief([9.0, 0.5], np.diag([0.02, 0.01]))
    y = np.array([123.0, 0.4])
    u, nxt, plan = opr_pcl_step(model, b, band, InputBounds.symmetric(5), [1], y, 1)
    post = kalman_update(model, b, y, [1])
    ref = solve_at_horizon(model, post, band, InputBounds.symmetric(5), 1)
    assert plan.horizon == 1 and u[0] == pytest.approx(ref[0, 0], abs=1e-12)
    np.testing.assert_allclose(nxt.mean, predict_belief(model, post, u).mean)


def test_pcl_with_true_velocity_no_worse_than_open_loop(band):
    # zero process noise, velocity sensor reports truth, anchor belief is wrong in velocity
    model = build_default_drone_model().with_noise(Q=np.zeros((2, 2)), R=np.diag([0.01, 1e-8]))
    bounds = InputBounds.symmetric(1.0)
    x_true = np.array([7.0, 0.6])
    b0 = GaussianBelief([7.0, 0.0], np.diag([1e-4, 0.25]))
    ol = solve_opr_ol(model, b0, band, bounds, 400)
    x = x_true.copy()
    for u in ol.controls:
        x = model.A @ x + model.B @ u
    d_ol = abs(x[0] - 10)
    x, b = x_true.copy(), b0
    for t in range(400):
        u, b, plan = opr_pcl_step(model, b, band, bounds, [1], x.copy(), 400 - t)
        x = model.A @ x + model.B @ u
        if plan.horizon == 1:
            break
    assert abs(x[0] - 10) <= d_ol


def test_pcl_contract(model, band):
    with pytest.raises(ContractViolation):
        opr_pcl_step(model, GaussianBelief([10, 0], np.eye(2)), band, InputBounds.symmetric(5), [1], [0, 0], 0)


# ---------------------------------------------------------------- RTR-LQR

def test_lqr_at_target_is_silent(model, band):
    plan = solve_rtr_lqr(model, GaussianBelief(strip_center_state(band), np.eye(2) * 0.01), band, 50)
    assert np.all(plan.controls == 0)


def test_one_step_riccati_gain_closed_form():
    a, b, q, r = 1.3, 0.7, 2.0, 0.5
    K = riccati_gains([[a]], [[b]], [[q]], [[r]], 1)[0]
    assert K[0, 0] == pytest.approx(b * q * a / (r + b * q * b), abs=1e-10)


def test_zero_noise_lqr_converges(band):
    plan = solve_rtr_lqr(_zero_noise(), GaussianBelief([7, 0], np.zeros((2, 2))), band, 400)
    assert np.linalg.norm(plan.predicted_final_belief.mean - [10, 0]) <= 0.1


def test_lqr_clips_and_matches_rollout(model, band):
    b0 = GaussianBelief([3, 0], np.diag([0.01, 0.01]))
    plan = solve_rtr_lqr(model, b0, band, 400, bounds=InputBounds.symmetric(2.0))
    assert np.abs(plan.controls).max() == 2.0
    ref = _rollout(model, b0, plan.controls)
    np.testing.assert_allclose(plan.predicted_final_belief.mean, ref.mean, rtol=1e-12)
    np.testing.assert_allclose(plan.predicted_final_belief.cov, ref.cov, rtol=1e-9)


def test_lqr_singular_input_cost(model, band):
    with pytest.raises(NumericalError):
        solve_rtr_lqr(model, GaussianBelief([7, 0], np.eye(2)), band, 10, R_c=[[0.0]])


# ---------------------------------------------------------------- nominal and virtual sensors

def test_nominal_equilibrium_and_saturation():
    b = GaussianBelief([10, 0], np.eye(2))
    assert nominal_control(NominalController(), b, InputBounds.symmetric(5))[0] == 0
    b = GaussianBelief([13, 0], np.eye(2))
    assert nominal_control(NominalController(), b, InputBounds.symmetric(100))[0] == -6
    assert nominal_control(NominalController(), b, InputBounds.symmetric(5))[0] == -5


def test_nominal_closed_loop_settles():
    m = _zero_noise()
    x = np.array([8.0, 0.0])
    for t in range(600):
        u = nominal_control(NominalController(), GaussianBelief(x, np.zeros((2, 2))), InputBounds.symmetric(5))
        x = m.A @ x + m.B @ u
    assert abs(x[0] - 10) < 0.05


def test_nominal_batch_matches_scalar(rng):
    means = rng.normal([10, 0], [4, 3], size=(50, 2))
    ref = [nominal_control(NominalController(2, 2, 10), GaussianBelief(mu, np.eye(2)), InputBounds.symmetric(5))
           for mu in means]
    assert np.array_equal(nominal_control_batch(2, 2, 10, means, InputBounds.symmetric(5)), np.array(ref))


def test_virtual_sensor_at_setpoint(model):
    b = GaussianBelief([10, 0], np.zeros((2, 2)))
    u, nxt = virtual_sensor_control(model, b, NominalController(), InputBounds.symmetric(5))
    assert u[0] == 0 and np.array_equal(nxt.mean, [10, 0])
    np.testing.assert_allclose(nxt.cov, model.Q)


def test_virtual_sensor_equals_nominal_when_prediction_is_truth():
    m = _zero_noise()
    ctrl, bounds = NominalController(), InputBounds.symmetric(5)
    x = np.array([7.0, 0.0])
    b = GaussianBelief(x, np.zeros((2, 2)))
    for _ in range(300):
        u_nom = nominal_control(ctrl, GaussianBelief(x, np.zeros((2, 2))), bounds)
        u_vs, b = virtual_sensor_control(m, b, ctrl, bounds)
        assert np.array_equal(u_nom, u_vs)
        x = m.A @ x + m.B @ u_nom
        assert np.array_equal(x, b.mean)


def _vs_terminal_error_var(model, steps, seeds=10_000):
    # mean-only VS recurrence over many seeds; the true-minus-belief error is open loop
    rng = np.random.default_rng(11)
    L = np.linalg.cholesky(model.Q + 1e-300 * np.eye(2)) if np.any(model.Q) else np.zeros((2, 2))
    x = np.tile([10.0, 0.0], (seeds, 1))
    mean = x.copy()
    out = []
    for t in range(1, steps + 1):
        u = nominal_control_batch(2, 2, 10, mean, InputBounds.symmetric(5))
        x = x @ model.A.T + u @ model.B.T + rng.standard_normal((seeds, 2)) @ L.T
        mean = mean @ model.A.T + u @ model.B.T
        out.append(np.var(x[:, 0] - 10))
    return np.array(out)


def test_vs_drift_variance_linear_for_position_noise():
    m = build_default_drone_model().with_noise(Q=np.diag([1e-4, 0.0]))
    v = _vs_terminal_error_var(m, 200)
    for k in (50, 100, 200):
        assert v[k - 1] == pytest.approx(k * 1e-4, rel=0.05)


def test_vs_drift_variance_matches_open_loop_accumulation(model):
    v = _vs_terminal_error_var(model, 200)
    P = np.zeros((2, 2))
    ref = []
    for _ in range(200):
        P = model.A @ P @ model.A.T + model.Q
        ref.append(P[0, 0])
    for k in (50, 100, 200):
        assert v[k - 1] == pytest.approx(ref[k - 1], rel=0.05)
    assert np.all(np.diff(v[::20]) > 0)
