"""Recovery controllers: OPR open/partially-closed loop, finite-horizon LQR, virtual sensors.

Also holds the nominal altitude hold they displace and the box-constrained
least-squares solver under OPR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .dynamics import GaussianBelief, LinearModel, kalman_update, predict_belief
from .errors import ContractViolation, NumericalError
from .target_set import Strip, interval_mass_array, strip_probability

RHO = 1e-6
MET = "met_target_probability"
BEST_EFFORT = "best_effort"


@dataclass(frozen=True)
class InputBounds:
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.u_min, dtype=float).reshape(-1)
        hi = np.array(self.u_max, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ContractViolation("u_min and u_max must have the same length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractViolation("input bounds must be finite")
        if np.any(lo > hi):
            raise ContractViolation(f"u_min must not exceed u_max: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)

    @classmethod
    def symmetric(cls, limit: float, m: int = 1) -> "InputBounds":
        return cls(np.full(m, -limit), np.full(m, limit))

    @property
    def m(self) -> int:
        return self.u_min.shape[0]

    def clip(self, u) -> np.ndarray:
        return np.minimum(np.maximum(u, self.u_min), self.u_max)

    def contains(self, u) -> bool:
        u = np.asarray(u)
        return bool((u >= self.u_min).all() and (u <= self.u_max).all())


@dataclass(frozen=True)
class RecoveryPlan:
    horizon: int
    controls: np.ndarray  # (horizon, m)
    predicted_probability: float
    predicted_final_belief: GaussianBelief
    status: str
    strip: Strip

    @property
    def predicted_distance(self) -> float:
        s = self.strip
        return abs(float(s.theta1 @ self.predicted_final_belief.mean) - s.center) / s.norm


@dataclass(frozen=True)
class NominalController:
    """PD altitude hold on the belief mean."""

    k_p: float = 2.0
    k_d: float = 2.0
    z_ref: float = 10.0

    def __post_init__(self):
        if not (self.k_p > 0 and self.k_d > 0):
            raise ContractViolation("nominal gains must be positive")


def nominal_control(ctrl: NominalController, b: GaussianBelief, bounds: InputBounds) -> np.ndarray:
    if b.n != 2:
        raise ContractViolation("nominal controller expects a [altitude, climb rate] belief")
    return nominal_control_batch(ctrl.k_p, ctrl.k_d, ctrl.z_ref, b.mean[None, :], bounds)[0]


def nominal_control_batch(k_p: float, k_d: float, z_ref, means: np.ndarray, bounds: InputBounds) -> np.ndarray:
    """Row-wise PD law for a stack of belief means, shape (S, 2) -> (S, 1)."""
    u = -k_p * (means[:, 0] - z_ref) - k_d * means[:, 1]
    return np.minimum(np.maximum(u[:, None], bounds.u_min), bounds.u_max)


# ---------------------------------------------------------------------------
# box-constrained least squares

def _power_iteration(H, k: int, iters: int = 500, rtol: float = 1e-10) -> float:
    v = np.random.default_rng(0).standard_normal(k)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= rtol * max(abs(new), 1e-300):
            lam = new
            break
        lam = new
    if lam < -1e-12 * max(1.0, abs(lam)):
        raise NumericalError(f"H is not PSD: dominant eigenvalue estimate {lam:.3e}")
    return max(lam, 0.0)


def box_ls_solve(H, g, lower, upper, tol: float = 1e-8, max_iter: int = 5000, x0=None) -> np.ndarray:
    """Minimize 1/2 u'Hu + g'u over lower <= u <= upper by projected gradient.

    ``H`` may be a dense array or any object supporting ``H @ v`` and ``.shape``.
    The step is 1/L with L the top eigenvalue of H from power iteration.
    Stops when the projected-gradient norm drops to ``tol`` or after ``max_iter``
    iterations; the returned point always lies in the box.
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    k = g.shape[0]
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (k,))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (k,))
    if np.any(lo > hi):
        raise ContractViolation("empty box")
    if tuple(H.shape) != (k, k):
        raise ContractViolation(f"H must be {k}x{k}, got {H.shape}")
    L = _power_iteration(H, k)
    step = 1.0 / L if L > 0 else 1e300
    x = np.clip(np.zeros(k) if x0 is None else np.asarray(x0, dtype=float).reshape(-1), lo, hi)
    Hx = H @ x
    for _ in range(max_iter):
        grad = Hx + g
        if np.linalg.norm(np.clip(x - grad, lo, hi) - x) <= tol:
            break
        x_new = np.clip(x - step * grad, lo, hi)
        d = x_new - x
        Hx_new = H @ x_new
        dd = float(d @ d)
        if dd == 0.0:
            break
        curv = float(d @ (Hx_new - Hx))
        if curv < -1e-10 * L * dd:
            raise NumericalError(f"negative curvature {curv / dd:.3e} along iterate direction; H not PSD")
        x, Hx = x_new, Hx_new
    return x


class _RankOnePlusRidge:
    """Implicit H = 2 (g g' + rho I) for long horizons."""

    def __init__(self, g: np.ndarray, rho: float):
        self.g = g
        self.rho = rho
        self.shape = (g.shape[0], g.shape[0])

    def __matmul__(self, v):
        return 2.0 * (self.g * (self.g @ v) + self.rho * v)

    def dense(self) -> np.ndarray:
        return 2.0 * (np.outer(self.g, self.g) + self.rho * np.eye(self.shape[0]))


# ---------------------------------------------------------------------------
# OPR

_TABLES: dict = {}


def _tables(model: LinearModel, K: int):
    """A^k and the accumulated process-noise covariance for k = 0..K (cached per model)."""
    key = (model.A.tobytes(), model.Q.tobytes(), model.n)
    hit = _TABLES.get(key)
    if hit is not None and hit[0].shape[0] > K:
        return hit[0][: K + 1], hit[1][: K + 1]
    n = model.n
    Kc = max(K, 512)
    Phi = np.empty((Kc + 1, n, n))
    Wn = np.empty((Kc + 1, n, n))
    Phi[0] = np.eye(n)
    Wn[0] = 0.0
    A, Q = model.A, model.Q
    for k in range(Kc):
        Phi[k + 1] = A @ Phi[k]
        Wn[k + 1] = A @ Wn[k] @ A.T + Q
    if len(_TABLES) > 32:
        _TABLES.clear()
    _TABLES[key] = (Phi, Wn)
    return Phi[: K + 1], Wn[: K + 1]


@dataclass(frozen=True)
class HorizonScan:
    """Per-horizon quantities for k = 1..K_max (index k-1)."""

    free_mean: np.ndarray    # theta1' A^k mu0
    reach_lo: np.ndarray     # reachable interval of theta1' mu_k
    reach_hi: np.ndarray
    sd: np.ndarray           # sqrt(theta1' Sigma_k theta1), control independent
    best_mean: np.ndarray    # center clipped to the reachable interval
    probability: np.ndarray
    impulse: np.ndarray      # (K_max, m): theta1' A^i B

    def select(self, p_target: float) -> int:
        """Smallest horizon meeting ``p_target``, else smallest argmax."""
        ok = np.flatnonzero(self.probability >= p_target)
        if ok.size:
            return int(ok[0]) + 1
        best = self.probability.max()
        return int(np.flatnonzero(self.probability >= best - 1e-12)[0]) + 1


def scan_horizons(model: LinearModel, b0: GaussianBelief, s: Strip, bounds: InputBounds,
                  K_max: int) -> HorizonScan:
    """Best achievable strip probability at every horizon.

    The covariance at horizon k does not depend on the inputs, so the best
    probability puts theta1' mu_k as close to the strip center as the input box
    allows; the reachable values of theta1' mu_k form an interval because the
    map from inputs is linear and the box is separable.
    """
    if K_max < 1:
        raise ContractViolation(f"K_max must be >= 1, got {K_max}")
    if bounds.m != model.m:
        raise ContractViolation(f"bounds have {bounds.m} channels, model has {model.m}")
    Phi, Wn = _tables(model, K_max)
    t1 = s.theta1
    a = np.einsum("kij,i->kj", Phi, t1)                 # (K+1, n): A^k' theta1
    free = a[1:] @ b0.mean
    var = np.einsum("ki,ij,kj->k", a[1:], b0.cov, a[1:]) + np.einsum("i,kij,j->k", t1, Wn[1:], t1)
    sd = np.sqrt(np.clip(var, 0.0, None))
    h = a[:-1] @ model.B                                  # (K, m)
    lo_c = np.minimum(h * bounds.u_min, h * bounds.u_max).sum(axis=1)
    hi_c = np.maximum(h * bounds.u_min, h * bounds.u_max).sum(axis=1)
    lo = free + np.cumsum(lo_c)
    hi = free + np.cumsum(hi_c)
    best = np.clip(s.center, lo, hi)
    prob = interval_mass_array(s.theta2, s.theta3, best, sd)
    return HorizonScan(free, lo, hi, sd, best, prob, h)


def _scalar_multiplier_start(gv: np.ndarray, d: float, rho: float, lo: np.ndarray, hi: np.ndarray):
    """Exact minimizer of (g'u - d)^2 + rho |u|^2 on the box: u = clip(alpha g).

    With rho = 0 this is one of the minimizers (the one of that form).
    """
    def phi(alpha):
        return rho * alpha + gv @ np.clip(alpha * gv, lo, hi) - d

    if rho < 0 or not np.any(gv):
        return None
    big = float(np.max(np.maximum(np.abs(lo), np.abs(hi))))
    span = big / float(np.min(np.abs(gv[gv != 0]))) + 1.0   # every coordinate saturated
    if rho > 0:
        span += (abs(d) + float(np.abs(gv) @ np.maximum(np.abs(lo), np.abs(hi)))) / rho
    if phi(-span) >= 0:
        return np.clip(-span * gv, lo, hi)
    if phi(span) <= 0:
        return np.clip(span * gv, lo, hi)
    alpha = brentq(phi, -span, span, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.clip(alpha * gv, lo, hi)


def _final_belief(model: LinearModel, b0: GaussianBelief, controls: np.ndarray) -> GaussianBelief:
    k = controls.shape[0]
    Phi, Wn = _tables(model, k)
    # mu_k = A^k mu0 + sum_j A^(k-1-j) B u_j
    forced = np.einsum("jab,bc,jc->a", Phi[k - 1::-1], model.B, controls) if k else 0.0
    mean = Phi[k] @ b0.mean + forced
    cov = Phi[k] @ b0.cov @ Phi[k].T + Wn[k]
    return GaussianBelief(mean, cov)


def solve_at_horizon(model: LinearModel, b0: GaussianBelief, s: Strip, bounds: InputBounds,
                     k: int, rho: float = RHO, tol: float = 1e-8, max_iter: int = 5000,
                     warm_start: bool = True) -> np.ndarray:
    """Inputs (k, m) steering theta1' mu_k toward the strip center.

    Solves min (theta1' mu_k - c)^2 + rho |g|^2 |u|^2 over the box; the ridge
    weight is relative to the curvature |g|^2 so it stays negligible whatever
    the step size.
    """
    m = model.m
    scan = scan_horizons(model, b0, s, bounds, k)
    free = scan.free_mean[k - 1]
    # u flattened as (u_0, ..., u_{k-1}); u_j acts through theta1' A^(k-1-j) B
    gv = scan.impulse[::-1].reshape(-1)
    lo = np.tile(bounds.u_min, k)
    hi = np.tile(bounds.u_max, k)
    d = s.center - free
    if not np.any(gv):
        # no control authority over theta1' mu_k: every input is optimal
        return np.clip(np.zeros(k * m), lo, hi).reshape(k, m)
    ridge = rho * float(gv @ gv)
    H = _RankOnePlusRidge(gv, ridge)
    if k * m <= 64:
        H = H.dense()
    x0 = _scalar_multiplier_start(gv, d, ridge, lo, hi) if warm_start else None
    u = box_ls_solve(H, -2.0 * d * gv, lo, hi, tol=tol, max_iter=max_iter, x0=x0)
    return u.reshape(k, m)


def solve_opr_ol(model: LinearModel, b0: GaussianBelief, s: Strip, bounds: InputBounds,
                 K_max: int = 500, p_target: float = 0.95, rho: float = RHO) -> RecoveryPlan:
    """Open-loop optimal probabilistic recovery from belief ``b0``.

    Scans every horizon up to ``K_max``, picks the smallest one whose best
    strip probability reaches ``p_target`` (otherwise the most probable one)
    and returns the bounded input sequence for it.
    """
    if K_max < 1:
        raise ContractViolation("no valid horizon: K_max must be >= 1")
    if b0.n != model.n or s.n != model.n:
        raise ContractViolation("belief, strip and model dimensions differ")
    scan = scan_horizons(model, b0, s, bounds, K_max)
    k = scan.select(p_target)
    controls = solve_at_horizon(model, b0, s, bounds, k, rho=rho)
    final = _final_belief(model, b0, controls)
    prob = strip_probability(s, final)
    return RecoveryPlan(k, controls, prob, final, MET if prob >= p_target else BEST_EFFORT, s)


def opr_pcl_step(model: LinearModel, b: GaussianBelief, s: Strip, bounds: InputBounds,
                 trusted: Sequence[int], y, remaining: int, p_target: float = 0.95):
    """One receding-horizon step: fuse trusted sensors, re-plan, apply the first input.

    Returns ``(u, next_belief, plan)``; ``plan`` is the freshly solved plan
    whose first input is ``u``.
    """
    if remaining < 1:
        raise ContractViolation(f"remaining must be >= 1, got {remaining}")
    post = kalman_update(model, b, y, trusted)
    plan = solve_opr_ol(model, post, s, bounds, K_max=remaining, p_target=p_target)
    u = plan.controls[0]
    return u, predict_belief(model, post, u), plan


# ---------------------------------------------------------------------------
# baselines

def strip_center_state(s: Strip) -> np.ndarray:
    """Point of the strip's center plane nearest the origin (zero rate for the drone)."""
    return s.theta1 * (s.center / float(s.theta1 @ s.theta1))


def riccati_gains(A, B, Q_c, R_c, horizon: int, Q_f=None) -> list:
    """Time-varying gains K_0..K_{N-1} of the finite-horizon LQR (terminal cost Q_f)."""
    A, B, Q_c, R_c = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, B, Q_c, R_c))
    R_c = 0.5 * (R_c + R_c.T)
    if np.linalg.eigvalsh(R_c)[0] <= 0:
        raise NumericalError(f"input cost R_c must be positive definite, got {R_c.tolist()}")
    P = Q_c if Q_f is None else np.atleast_2d(np.asarray(Q_f, dtype=float))
    gains = [None] * horizon
    for t in range(horizon - 1, -1, -1):
        S = R_c + B.T @ P @ B
        try:
            K = np.linalg.solve(S, B.T @ P @ A)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular Riccati step") from exc
        gains[t] = K
        P = Q_c + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
    return gains


def solve_rtr_lqr(model: LinearModel, b: GaussianBelief, s: Strip, horizon: int = 400,
                  Q_c=np.diag([10.0, 1.0]), R_c=np.array([[0.1]]), bounds: InputBounds | None = None,
                  p_target: float = 0.95) -> RecoveryPlan:
    """Finite-horizon LQR toward the strip-center state, rolled out on the belief mean."""
    if horizon < 1:
        raise ContractViolation(f"horizon must be >= 1, got {horizon}")
    gains = _cached_gains(model, Q_c, R_c, horizon)
    target = strip_center_state(s)
    A, B = model.A, model.B
    controls = np.empty((horizon, model.m))
    mean = b.mean
    # the covariance does not depend on the inputs; roll out the mean only
    for t in range(horizon):
        u = -gains[t] @ (mean - target)
        if bounds is not None:
            u = bounds.clip(u)
        controls[t] = u
        mean = A @ mean + B @ u
    Phi, Wn = _tables(model, horizon)
    belief = GaussianBelief(mean, Phi[horizon] @ b.cov @ Phi[horizon].T + Wn[horizon])
    prob = strip_probability(s, belief)
    return RecoveryPlan(horizon, controls, prob, belief, MET if prob >= p_target else BEST_EFFORT, s)


_GAINS: dict = {}


def _cached_gains(model: LinearModel, Q_c, R_c, horizon: int) -> np.ndarray:
    Q_c, R_c = np.atleast_2d(np.asarray(Q_c, dtype=float)), np.atleast_2d(np.asarray(R_c, dtype=float))
    key = (model.A.tobytes(), model.B.tobytes(), Q_c.tobytes(), R_c.tobytes(), horizon)
    hit = _GAINS.get(key)
    if hit is None:
        hit = np.array(riccati_gains(model.A, model.B, Q_c, R_c, horizon))
        hit.setflags(write=False)
        if len(_GAINS) > 32:
            _GAINS.clear()
        _GAINS[key] = hit
    return hit


def virtual_sensor_control(model: LinearModel, b: GaussianBelief, ctrl: NominalController,
                           bounds: InputBounds):
    """Nominal control on the model prediction instead of the spoofed reading."""
    u = nominal_control(ctrl, b, bounds)
    return u, predict_belief(model, b, u)
