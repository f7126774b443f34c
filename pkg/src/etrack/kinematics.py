"""Kinematic motion models and the extended Kalman prediction.

State layouts:

* constant velocity (CV): ``[x, y, vx, vy]``
* constant turn (CT): ``[x, y, vx, vy, omega]`` with omega in rad/s
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm

CV = "cv"
CT = "ct"
STATE_DIM = {CV: 4, CT: 5}

# below this |omega| (rad/s) the turn uses its series form
OMEGA_SERIES = 1e-6


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = nm.symmetrize(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class MotionModel:
    """CV uses the noise intensity ``q_tilde`` (m^2/s^3); CT uses
    ``sigma_a`` (m/s^2) and ``sigma_omega`` (rad/s)."""

    kind: str
    T: float
    q_tilde: float = 0.0
    sigma_a: float = 0.0
    sigma_omega: float = 0.0

    def __post_init__(self):
        if self.kind not in STATE_DIM:
            raise ValueError(f"unknown motion model {self.kind!r}")
        if not self.T > 0:
            raise ValueError("time step must be positive")
        if min(self.q_tilde, self.sigma_a, self.sigma_omega) < 0:
            raise ValueError("noise parameters must be non-negative")

    @property
    def dim(self):
        return STATE_DIM[self.kind]

    @classmethod
    def cv_from_sigma(cls, T, sigma_a):
        """CV model with ``q_tilde = 0.75 T sigma_a**2``."""
        return cls(CV, T, q_tilde=0.75 * T * sigma_a**2)


def cv_transition(x, T):
    f = cv_matrix(T)
    return f @ x, f


def cv_matrix(T):
    f = np.eye(4)
    f[0, 2] = f[1, 3] = T
    return f


def _turn_derivatives(w, T):
    """d/dw of sin(wT)/w and (1 - cos(wT))/w, cancellation-free near w = 0."""
    th = w * T
    if abs(th) < 0.5:
        ds = dc = 0.0
        for k in range(10, 0, -1):
            fact = math.factorial(2 * k)
            ds += (-1) ** k * th ** (2 * k - 1) * 2 * k / (fact * (2 * k + 1))
            dc += (-1) ** (k + 1) * th ** (2 * k - 2) * (2 * k - 1) / fact
        return T * T * ds, T * T * dc
    sn, cs = math.sin(th), math.cos(th)
    return (T * cs - sn / w) / w, (T * sn - 2.0 * math.sin(0.5 * th) ** 2 / w) / w


def _turn_coefficients(w, T):
    """sin(wT)/w, (1 - cos(wT))/w and their derivatives in w."""
    ds, dc = _turn_derivatives(w, T)
    if abs(w) < OMEGA_SERIES:
        s = T - w * w * T**3 / 6.0
        c = w * T**2 / 2.0 - w**3 * T**4 / 24.0
        return s, c, ds, dc
    s = math.sin(w * T) / w
    c = 2.0 * math.sin(0.5 * w * T) ** 2 / w
    return s, c, ds, dc


def ct_transition(x, T):
    """Exact-arc coordinated turn; returns (next state, Jacobian)."""
    x = np.asarray(x, dtype=float)
    px, py, vx, vy, w = x
    s, c, ds, dc = _turn_coefficients(w, T)
    sn, cs = math.sin(w * T), math.cos(w * T)
    out = np.array(
        [
            px + s * vx - c * vy,
            py + c * vx + s * vy,
            cs * vx - sn * vy,
            sn * vx + cs * vy,
            w,
        ]
    )
    jac = np.eye(5)
    jac[0, 2], jac[0, 3] = s, -c
    jac[1, 2], jac[1, 3] = c, s
    jac[2, 2], jac[2, 3] = cs, -sn
    jac[3, 2], jac[3, 3] = sn, cs
    jac[0, 4] = ds * vx - dc * vy
    jac[1, 4] = dc * vx + ds * vy
    jac[2, 4] = -T * (sn * vx + cs * vy)
    jac[3, 4] = T * (cs * vx - sn * vy)
    return out, jac


def process_noise(model):
    """Discrete process-noise covariance D for ``model``."""
    T = model.T
    if model.kind == CV:
        block = model.q_tilde * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
        d = np.zeros((4, 4))
        for axis in range(2):
            idx = [axis, axis + 2]
            d[np.ix_(idx, idx)] = block
        return d
    g = np.array([[T**2 / 2.0, 0.0], [0.0, T**2 / 2.0], [T, 0.0], [0.0, T]])
    d = np.zeros((5, 5))
    d[:4, :4] = model.sigma_a**2 * (g @ g.T)
    d[4, 4] = T * model.sigma_omega**2
    return d


def transition(x, model):
    if model.kind == CV:
        return cv_transition(x, model.T)
    return ct_transition(x, model.T)


def predict_kinematic(state, model):
    """EKF time update: mean f(m), covariance F P F^T + D."""
    if state.dim != model.dim:
        raise ValueError(
            f"state dimension {state.dim} does not match {model.kind} model ({model.dim})"
        )
    mean, jac = transition(state.mean, model)
    cov = jac @ state.cov @ jac.T + process_noise(model)
    return GaussianState(mean, nm.symmetrize(cov))
