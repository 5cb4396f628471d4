"""Discrete-time linear plant, ground-truth stepping and Gaussian belief propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import math

import numpy as np

from .errors import ContractViolation, NumericalError

PSD_TOL = 1e-9

MODES = ("nominal", "attacked-undetected", "recovery")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _min_eig(S: np.ndarray) -> float:
    if S.shape == (1, 1):
        return float(S[0, 0])
    if S.shape == (2, 2):
        (a, b), (_, d) = S.tolist()
        h = 0.5 * (a - d)
        return 0.5 * (a + d) - math.sqrt(h * h + b * b)
    return float(np.linalg.eigvalsh(S)[0])


def _solve_small(S: np.ndarray, M: np.ndarray) -> np.ndarray:
    """S^-1 M for the tiny innovation covariances used here."""
    if S.shape == (1, 1):
        s = float(S[0, 0])
        if s == 0.0:
            raise np.linalg.LinAlgError("Singular matrix")
        return M / s
    if S.shape == (2, 2):
        (a, b), (c, d) = S.tolist()
        det = a * d - b * c
        if det == 0.0 or abs(det) < 1e-300:
            raise np.linalg.LinAlgError("Singular matrix")
        return np.array([[d, -b], [-c, a]]) @ M / det
    return np.linalg.solve(S, M)


def _psd(S: np.ndarray, what: str) -> np.ndarray:
    """Symmetrize ``S``; clamp tiny negative eigenvalues, reject larger ones."""
    S = 0.5 * (S + S.T)
    lo = _min_eig(S)
    if lo < 0.0:
        if lo < -PSD_TOL:
            raise NumericalError(f"{what} is not PSD (min eigenvalue {lo:.3e})")
        w, V = np.linalg.eigh(S)
        S = (V * np.clip(w, 0.0, None)) @ V.T
        S = 0.5 * (S + S.T)
    return S


@dataclass(frozen=True)
class LinearModel:
    """x' = A x + B u + w,  y = C x + v,  w ~ N(0, Q), v ~ N(0, R)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dt: float
    labels: tuple = ()

    def __post_init__(self):
        A, B, C, Q, R = (np.atleast_2d(_frozen(getattr(self, k))) for k in "ABCQR")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ContractViolation(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ContractViolation(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ContractViolation(f"C must have {n} columns, got {C.shape}")
        p = C.shape[0]
        if Q.shape != (n, n):
            raise ContractViolation(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (p, p):
            raise ContractViolation(f"R must be {p}x{p}, got {R.shape}")
        if not np.allclose(Q, Q.T) or _min_eig(Q) < -PSD_TOL:
            raise ContractViolation("Q must be symmetric PSD")
        if np.any(R != np.diag(np.diag(R))) or np.any(np.diag(R) < 0):
            raise ContractViolation("R must be diagonal with nonnegative entries")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ContractViolation(f"dt must be positive, got {self.dt}")
        labels = tuple(self.labels) if self.labels else tuple(f"y{i}" for i in range(p))
        if len(labels) != p:
            raise ContractViolation(f"expected {p} sensor labels, got {len(labels)}")
        for k, v in zip("ABCQR", (A, B, C, Q, R)):
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def sensor_index(self, label: str) -> int:
        return self.labels.index(label)

    def with_noise(self, Q=None, R=None) -> "LinearModel":
        return LinearModel(self.A, self.B, self.C,
                           self.Q if Q is None else Q,
                           self.R if R is None else R,
                           self.dt, self.labels)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ContractViolation(f"cov must be {n}x{n}, got {cov.shape}")
        cov = _psd(cov, "belief covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def _fresh(cls, mean: np.ndarray, cov: np.ndarray) -> "GaussianBelief":
        """Wrap arrays this module just computed (no defensive copies)."""
        self = object.__new__(cls)
        cov = _psd(cov, "belief covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        return self

    @property
    def n(self) -> int:
        return self.mean.shape[0]


@dataclass
class Trajectory:
    """Per-step record of one episode; columns grow in lockstep."""

    steps: list = field(default_factory=list)
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    attacked: list = field(default_factory=list)
    modes: list = field(default_factory=list)

    def append(self, step, x, u, y_raw, y_att, mode):
        if mode not in MODES:
            raise ContractViolation(f"unknown mode {mode!r}")
        if self.modes and MODES.index(mode) < MODES.index(self.modes[-1]):
            raise ContractViolation(f"mode went backwards: {self.modes[-1]} -> {mode}")
        # rows are stored as given; callers hand over fresh arrays
        self.steps.append(int(step))
        self.states.append(np.asarray(x, dtype=float))
        self.inputs.append(np.asarray(u, dtype=float))
        self.raw.append(np.asarray(y_raw, dtype=float))
        self.attacked.append(np.asarray(y_att, dtype=float))
        self.modes.append(mode)

    def __len__(self):
        return len(self.steps)

    def copy(self) -> "Trajectory":
        # rows are never mutated after append, so sharing them is safe
        return Trajectory(*(list(getattr(self, f)) for f in
                            ("steps", "states", "inputs", "raw", "attacked", "modes")))


def _check_vec(v, size: int, what: str) -> np.ndarray:
    if not (isinstance(v, np.ndarray) and v.ndim == 1 and v.dtype == float):
        v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != size:
        raise ContractViolation(f"{what} must have length {size}, got {v.shape[0]}")
    return v


def step_truth(model: LinearModel, x, u, w) -> np.ndarray:
    """Advance the true state by one step."""
    x = _check_vec(x, model.n, "state")
    u = _check_vec(u, model.m, "input")
    w = _check_vec(w, model.n, "process noise")
    return model.A @ x + model.B @ u + w


def predict_belief(model: LinearModel, b: GaussianBelief, u) -> GaussianBelief:
    u = _check_vec(u, model.m, "input")
    if b.n != model.n:
        raise ContractViolation(f"belief has dimension {b.n}, model has {model.n}")
    A = model.A
    return GaussianBelief._fresh(A @ b.mean + model.B @ u, A @ b.cov @ A.T + model.Q)


def kalman_update(model: LinearModel, b: GaussianBelief, y, trusted: Sequence[int]) -> GaussianBelief:
    """Measurement update using only the sensors listed in ``trusted``."""
    idx = sorted(set(int(i) for i in trusted))
    if not idx:
        raise ContractViolation("trusted sensor set is empty")
    if idx[0] < 0 or idx[-1] >= model.p:
        raise ContractViolation(f"trusted indices {idx} outside 0..{model.p - 1}")
    if b.n != model.n:
        raise ContractViolation(f"belief has dimension {b.n}, model has {model.n}")
    y = _check_vec(y, model.p, "measurement")
    if len(idx) == model.p:
        H, Rs, ys = model.C, model.R, y
    else:
        H, Rs, ys = model.C[idx], model.R[np.ix_(idx, idx)], y[idx]
    rd = np.diag(Rs)
    if (rd <= 0).any():
        raise ContractViolation("trusted sensors must have positive noise variance")
    P = b.cov
    PHt = P @ H.T
    S = H @ PHt + Rs
    try:
        K = _solve_small(S, PHt.T).T  # S symmetric
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular innovation covariance for sensors {idx}: {S.tolist()}") from exc
    mean = b.mean + K @ (ys - H @ b.mean)
    IKH = np.eye(model.n) - K @ H
    # Joseph form keeps the posterior PSD
    cov = IKH @ P @ IKH.T + (K * rd) @ K.T
    return GaussianBelief._fresh(mean, cov)


def build_default_drone_model(dt: float = 0.02, q=(1e-6, 1e-4),
                              sigma_gps: float = 0.1, sigma_vel: float = 0.05) -> LinearModel:
    """Vertical double integrator: state [altitude m, climb rate m/s], input net accel m/s^2."""
    if not dt > 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    A = [[1.0, dt], [0.0, 1.0]]
    B = [[dt * dt / 2.0], [dt]]
    return LinearModel(A, B, np.eye(2), np.diag(q), np.diag([sigma_gps ** 2, sigma_vel ** 2]),
                       dt, ("gps_alt", "velocity"))
