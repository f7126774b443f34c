"""Extent-matrix prediction updates for the random matrix model.

The extent posterior is ``IW_d(X | nu, V)``. Four time updates are provided:

* :func:`predict_feldmann` - exponential forgetting heuristic,
* :func:`predict_bartlett` - non-central IW transition, kinematics-independent M,
* :func:`predict_granstrom` - Wishart transition with kinematic-dependent M,
  projected back onto the IW family,
* :func:`predict_proposed` - non-central IW transition with kinematic-dependent
  M(x) and a single KL projection (closed-form or root-found dof).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import numerics as nm
from .kinematics import GaussianState
from .matvar import InverseWishartParams, iw_entropy_moments

# states with nu <= 2d + 2 + NU_FLOOR_EPS are rejected by the predictors
NU_FLOOR_EPS = 1e-9
# lower end of the dof search interval is 2d + DOF_LOWER_EPS
DOF_LOWER_EPS = 1e-6
ROOT_TOL = 1e-10


class NoRootError(ValueError):
    """The dof equation has no sign change on the search interval."""


@dataclass(frozen=True)
class ExtentState:
    nu: float
    v_mat: np.ndarray

    def __post_init__(self):
        v = nm.check_spd(self.v_mat, "extent parameter matrix")
        object.__setattr__(self, "v_mat", v)
        object.__setattr__(self, "nu", float(self.nu))
        if not self.nu > 2 * v.shape[0]:
            raise ValueError(f"extent dof {self.nu} must exceed 2d = {2 * v.shape[0]}")

    @property
    def dim(self):
        return self.v_mat.shape[0]

    def mean(self):
        d = self.dim
        if not self.nu > 2 * d + 2:
            raise ValueError("expected extent undefined for nu <= 2d + 2")
        return self.v_mat / (self.nu - 2 * d - 2)


@dataclass(frozen=True)
class TaylorExpectations:
    c1: np.ndarray
    c2: np.ndarray
    c3: float


class RotationTransform:
    """Planar rotation by ``T * omega`` with omega read from ``x[omega_index]``.

    Provides analytic first and second derivatives so that the Taylor
    expectations need no finite differences.
    """

    _J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def __init__(self, T, omega_index=4):
        self.T = float(T)
        self.omega_index = omega_index

    def __call__(self, x):
        return rotation_m(x, self.T, self.omega_index)

    def derivatives(self, x):
        """``(M, {i: dM/dx_i}, {(i, j): d2M/dx_i dx_j})`` at x."""
        m = self(x)
        k = self.omega_index
        first = {k: self.T * m @ self._J}
        second = {(k, k): -self.T**2 * m}
        return m, first, second

    def __repr__(self):
        return f"RotationTransform(T={self.T})"


class ConstantTransform:
    """M independent of the kinematic state."""

    def __init__(self, m):
        self.m = np.asarray(m, dtype=float)

    def __call__(self, x):
        return self.m

    def derivatives(self, x):
        return self.m, {}, {}


def rotation_m(x, T, omega_index=4):
    """Rotation matrix by the angle ``T * x[omega_index]``."""
    a = T * float(np.asarray(x)[omega_index])
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def intermediate_v(v_mat, q):
    """``V (I + Q V)^{-1}``, evaluated as ``(V^{-1} + Q)^{-1}``; Q = 0 gives V."""
    v_mat = nm.check_spd(v_mat, "V")
    q = nm.symmetrize(q)
    if not np.any(q):
        return v_mat
    nm.check_psd(q, "Q")
    return nm.spd_inv(nm.spd_inv(v_mat) + q)


def _fd_derivatives(m_fn, x):
    """Central finite differences of M with step 1e-4 * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    m0 = np.asarray(m_fn(x), dtype=float)
    n = x.size
    steps = 1e-4 * np.maximum(1.0, np.abs(x))
    first, second = {}, {}
    evals = {}

    def at(offsets):
        key = tuple(sorted(offsets.items()))
        if key not in evals:
            xs = x.copy()
            for idx, sgn in offsets.items():
                xs[idx] += sgn * steps[idx]
            evals[key] = np.asarray(m_fn(xs), dtype=float)
        return evals[key]

    for i in range(n):
        plus, minus = at({i: 1}), at({i: -1})
        d1 = (plus - minus) / (2 * steps[i])
        d2 = (plus - 2 * m0 + minus) / steps[i] ** 2
        if np.any(plus != m0) or np.any(minus != m0):
            first[i] = d1
            second[(i, i)] = d2
    active = sorted(first)
    for a_pos, i in enumerate(active):
        for j in active[a_pos + 1:]:
            pp, pm = at({i: 1, j: 1}), at({i: 1, j: -1})
            mp, mm = at({i: -1, j: 1}), at({i: -1, j: -1})
            second[(i, j)] = (pp - pm - mp + mm) / (4 * steps[i] * steps[j])
    return m0, first, second


def transform_derivatives(m_fn, x):
    if hasattr(m_fn, "derivatives"):
        return m_fn.derivatives(x)
    return _fd_derivatives(m_fn, x)


def taylor_expectations(m_fn, v_bar, kin, half_factor=False):
    """Taylor approximations of E[V_x^{-1}], E[V_x] and E[ln|V_x|] for
    ``V_x = M(x) v_bar M(x)^T`` and ``x ~ N(kin.mean, kin.cov)``.

    Each expectation is the value at the mean plus ``w * sum_ij P_ij d2/dx_i dx_j``
    of the integrand, with ``w = 1`` by default and ``w = 1/2`` when
    ``half_factor`` is set (the exact second-order weight for a Gaussian).
    """
    v_bar = nm.check_spd(v_bar, "intermediate parameter matrix")
    p = kin.cov
    m, dm, d2m = transform_derivatives(m_fn, kin.mean)
    if abs(np.linalg.det(m)) < 1e-300:
        raise ValueError("transformation M is singular at the kinematic mean")
    minv = np.linalg.inv(m)
    w_inv = nm.spd_inv(v_bar)
    vx = m @ v_bar @ m.T
    vx_inv = minv.T @ w_inv @ minv
    c1 = vx_inv.copy()
    c2 = vx.copy()
    c3 = nm.logdet(v_bar) + 2.0 * math.log(abs(np.linalg.det(m)))
    weight = 0.5 if half_factor else 1.0

    dn = {i: -minv @ mi @ minv for i, mi in dm.items()}
    active = sorted(dm)
    for i in active:
        for j in active:
            pij = p[i, j]
            if pij == 0.0:
                continue
            key = (i, j) if (i, j) in d2m else (j, i)
            mij = d2m.get(key, np.zeros_like(m))
            mi, mj = dm[i], dm[j]
            d2v = mij @ v_bar @ m.T + mi @ v_bar @ mj.T + mj @ v_bar @ mi.T + m @ v_bar @ mij.T
            nij = minv @ mi @ minv @ mj @ minv + minv @ mj @ minv @ mi @ minv - minv @ mij @ minv
            d2vinv = (
                nij.T @ w_inv @ minv
                + dn[i].T @ w_inv @ dn[j]
                + dn[j].T @ w_inv @ dn[i]
                + minv.T @ w_inv @ nij
            )
            d2ld = 2.0 * (np.trace(minv @ mij) - np.trace(minv @ mi @ minv @ mj))
            c1 += weight * pij * d2vinv
            c2 += weight * pij * d2v
            c3 += weight * pij * float(d2ld)
    return TaylorExpectations(nm.symmetrize(c1), nm.symmetrize(c2), c3)


def _dof_function(nu, d):
    """h(nu) = d ln(nu - d - 1) - sum_i psi_0((nu - d - i)/2); strictly decreasing."""
    return d * math.log(nu - d - 1) - nm.multi_digamma(d, 0.5 * (nu - d - 1))


def _dof_slope(nu, d):
    return d / (nu - d - 1) - 0.5 * nm.multi_trigamma(d, 0.5 * (nu - d - 1))


def _solve_dof(target, d, upper=1e6, guess=None, tol=ROOT_TOL, max_iter=500):
    """Solve h(nu) = target by Newton's method inside a bisection bracket."""
    lo, hi = 2 * d + DOF_LOWER_EPS, float(upper)
    g_lo = _dof_function(lo, d) - target
    g_hi = _dof_function(hi, d) - target
    if not (g_lo > 0.0 > g_hi):
        raise NoRootError(
            f"no sign change of the dof equation on [{lo}, {hi}] (target {target:.6g})"
        )
    if guess is None:
        excess = target - d * math.log(2.0)
        guess = d + 1 + d * (d + 1) / (2 * excess) if excess > 0 else hi
    nu = min(max(guess, lo), hi)
    if not lo < nu < hi:
        nu = 0.5 * (lo + hi)
    for _ in range(max_iter):
        g = _dof_function(nu, d) - target
        if abs(g) < tol:
            return nu
        if g > 0:
            lo = nu
        else:
            hi = nu
        slope = _dof_slope(nu, d)
        step = nu - g / slope if slope < 0 else None
        if step is None or not lo < step < hi:
            # geometric midpoint keeps the bisection fast on the wide bracket
            step = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if step == nu:
            return nu
        nu = step
    if abs(_dof_function(nu, d) - target) < 1e3 * tol:
        return nu
    raise NoRootError("dof root finder did not converge")


def dof_residual(nu, v, c1, c3, d):
    """Left-hand side of the optimal-dof equation at ``nu``."""
    return (
        d * math.log((nu - d - 1) / (v - d - 1))
        + nm.multi_digamma(d, 0.5 * (v - d - 1))
        - nm.multi_digamma(d, 0.5 * (nu - d - 1))
        - c3
        - nm.logdet(c1)
    )


def kld_project_to_iw(e_inv, e_lndet, d=None, upper=1e6, guess=None):
    """Inverse Wishart minimising KL(p || IW) given E_p[X^{-1}] and E_p[ln|X|].

    Stationarity in V gives ``V = (nu - d - 1) E[X^{-1}]^{-1}``; substituting
    into the nu-condition leaves ``h(nu) = ln|E[X^{-1}]| + d ln 2 + E[ln|X|]``,
    solved by :func:`_solve_dof`.
    """
    try:
        inv, ld = nm.spd_inv_logdet(e_inv)
    except nm.NotPositiveDefiniteError as err:
        raise nm.NotPositiveDefiniteError(f"E[X^-1]: {err}", minor=err.minor) from None
    if d is None:
        d = inv.shape[0]
    target = ld + d * math.log(2.0) + e_lndet
    nu = _solve_dof(target, d, upper=upper, guess=guess)
    return ExtentState(nu, (nu - d - 1) * inv)


def kld_objective(nu, v_mat, e_inv, e_lndet):
    """E_p[ln IW(X | nu, V)] as a function of (nu, V); maximised by the projection."""
    d = v_mat.shape[0]
    return (
        0.5 * (nu - d - 1) * (nm.logdet(v_mat) - d * math.log(2.0))
        - 0.5 * nu * e_lndet
        - 0.5 * float(np.trace(v_mat @ e_inv))
        - nm.ln_multigamma(d, 0.5 * (nu - d - 1))
    )


def nu_optimal(v, c1, c3, d):
    """Root nu* > 2d of the optimal-dof equation, via the generic KL projection
    of ``E[X^{-1}] = (v - d - 1) C1`` and ``E[ln|X|] = C3 - d ln 2 - sum psi_0``."""
    if not v > 2 * d:
        raise ValueError(f"transition dof v must exceed 2d = {2 * d}")
    e_inv = (v - d - 1) * nm.check_spd(c1, "C1")
    e_lndet = c3 - d * math.log(2.0) - nm.multi_digamma(d, 0.5 * (v - d - 1))
    return kld_project_to_iw(e_inv, e_lndet, d, upper=max(1e6, 10 * v), guess=v).nu


def nu_closed_form(v, c1, c2, d):
    """Predicted dof matching the determinant of the expected extent."""
    rho = v - 2 * d - 2
    if not rho > 0:
        raise ValueError(f"closed-form dof needs v > 2d + 2, got {v}")
    ratio = math.exp((nm.logdet(c1) + nm.logdet(c2)) / d)
    den = (rho + d + 1) * ratio - rho
    if not den > 0:
        raise ValueError("inconsistent C1, C2: closed-form dof denominator is not positive")
    return 2 * d + 2 + (d + 1) * rho / den


def _require_mean(extent):
    d = extent.dim
    if not extent.nu > 2 * d + 2 + NU_FLOOR_EPS:
        raise ValueError(f"extent dof {extent.nu} too small: expected value undefined")


def predict_feldmann(extent, T, tau):
    """Exponential forgetting: keeps E[X] and pulls nu towards 2d + 4."""
    if not tau > 0:
        raise ValueError("decay constant tau must be positive")
    _require_mean(extent)
    d = extent.dim
    nu = 2 * d + 4 + math.exp(-T / tau) * (extent.nu - 2 * d - 4)
    scale = (nu - 2 * d - 2) / (extent.nu - 2 * d - 2)
    return ExtentState(nu, scale * extent.v_mat)


def predict_bartlett(extent, m, q, v):
    """Non-central IW prediction with a fixed transformation M."""
    m = np.asarray(m, dtype=float)
    if np.linalg.cond(m) > 1e14:
        raise ValueError("transformation matrix M is singular")
    _require_mean(extent)
    v_bar = intermediate_v(extent.v_mat, q)
    return ExtentState(v, nm.symmetrize(m @ v_bar @ m.T))


def v_setting_volume_coupled(nu, q, v_mat):
    """``2d + 2 + (nu - 2d - 2) |I + Q V|^{-1/d}``."""
    v_mat = np.asarray(v_mat, dtype=float)
    d = v_mat.shape[0]
    if not nu > 2 * d + 2:
        raise ValueError("volume-coupled setting needs nu > 2d + 2")
    sign, ld = np.linalg.slogdet(np.eye(d) + np.asarray(q, dtype=float) @ v_mat)
    if sign <= 0:
        raise ValueError("|I + Q V| must be positive")
    return 2 * d + 2 + (nu - 2 * d - 2) * math.exp(-ld / d)


def v_setting_volume_preserving(nu, v_mat, c2):
    """``2d + 2 + (nu - 2d - 2) |C2^{-1} V|^{-1/d}``."""
    v_mat = np.asarray(v_mat, dtype=float)
    d = v_mat.shape[0]
    if not nu > 2 * d + 2:
        raise ValueError("volume-preserving setting needs nu > 2d + 2")
    ld = nm.logdet(v_mat) - nm.logdet(c2)
    return 2 * d + 2 + (nu - 2 * d - 2) * math.exp(-ld / d)


FIXED = "fixed"
VOLUME_COUPLED = "volume-coupled"
VOLUME_PRESERVING = "volume-preserving"
V_RULES = (FIXED, VOLUME_COUPLED, VOLUME_PRESERVING)

QSpec = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass
class TransitionConfig:
    """Extent transition parameters.

    ``q`` is either a fixed matrix or a callable of the posterior ``V`` (for
    settings such as ``Q = 0.33 V^{-1}``). ``v_rule`` is one of
    ``"fixed"``, ``"volume-coupled"`` or ``"volume-preserving"``; ``v`` is used
    only by the fixed rule.
    """

    q: QSpec
    m_fn: Callable = field(default_factory=lambda: ConstantTransform(np.eye(2)))
    v_rule: str = VOLUME_PRESERVING
    v: Optional[float] = None
    nu_mode: str = "closed"
    half_factor: bool = False

    def __post_init__(self):
        if self.v_rule not in V_RULES:
            raise ValueError(f"unknown v rule {self.v_rule!r}")
        if self.v_rule == FIXED and self.v is None:
            raise ValueError("fixed v rule needs a value for v")
        if self.nu_mode not in ("closed", "optimal"):
            raise ValueError(f"unknown nu mode {self.nu_mode!r}")

    def resolve_q(self, v_mat):
        q = self.q(v_mat) if callable(self.q) else self.q
        return nm.symmetrize(q)


def q_scaled_inverse(c):
    """Q = c V^{-1}."""
    return lambda v_mat: c * nm.spd_inv(v_mat)


def q_isotropic_volume(c):
    """Q = c |V|^{-1/d} I."""

    def rule(v_mat):
        d = v_mat.shape[0]
        return c * math.exp(-nm.logdet(v_mat) / d) * np.eye(d)

    return rule


def resolve_v(cfg, extent, q, c2):
    if cfg.v_rule == FIXED:
        return float(cfg.v)
    if cfg.v_rule == VOLUME_COUPLED:
        return v_setting_volume_coupled(extent.nu, q, extent.v_mat)
    return v_setting_volume_preserving(extent.nu, extent.v_mat, c2)


def predict_proposed(extent, kin, cfg):
    """Extent prediction with a kinematic-dependent non-central IW transition."""
    _require_mean(extent)
    d = extent.dim
    q = cfg.resolve_q(extent.v_mat)
    v_bar = intermediate_v(extent.v_mat, q)
    tay = taylor_expectations(cfg.m_fn, v_bar, kin, half_factor=cfg.half_factor)
    v = resolve_v(cfg, extent, q, tay.c2)
    if cfg.nu_mode == "closed":
        nu = nu_closed_form(v, tay.c1, tay.c2, d)
    else:
        nu = nu_optimal(v, tay.c1, tay.c3, d)
    v_mat = ((nu - d - 1) / (v - d - 1)) * nm.spd_inv(tay.c1)
    return ExtentState(nu, v_mat)


def granstrom_statistics(extent, kin, m_fn, n, half_factor=False):
    """E[X^{-1}] and E[ln|X|] of the Wishart-transition prediction marginal."""
    d = extent.dim
    if not n > d + 1:
        raise ValueError(f"Wishart transition dof n must exceed d + 1 = {d + 1}")
    tay = taylor_expectations(m_fn, extent.v_mat, kin, half_factor=half_factor)
    e_inv = n * (extent.nu - d - 1) / (n - d - 1) * tay.c1
    e_lndet = (
        tay.c3
        - nm.multi_digamma(d, 0.5 * (extent.nu - d - 1))
        - d * math.log(n)
        + nm.multi_digamma(d, 0.5 * n)
    )
    return e_inv, e_lndet


def predict_granstrom(extent, kin, m_fn, n, half_factor=False):
    """Wishart-transition prediction, projected onto the IW family in one step."""
    _require_mean(extent)
    e_inv, e_lndet = granstrom_statistics(extent, kin, m_fn, n, half_factor)
    return kld_project_to_iw(e_inv, e_lndet, extent.dim, guess=extent.nu)


def iw_moments(extent):
    """(E[X^{-1}], E[ln|X|]) of the extent density."""
    return iw_entropy_moments(InverseWishartParams(extent.nu, extent.v_mat))


def collapse_mixture(weights, extents):
    """KL projection of an inverse Wishart mixture onto a single IW."""
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    d = extents[0].dim
    e_inv = np.zeros((d, d))
    e_lndet = 0.0
    for w, ext in zip(weights, extents):
        ei, el = iw_moments(ext)
        e_inv += w * ei
        e_lndet += w * el
    guess = float(np.dot(weights, [e.nu for e in extents]))
    return kld_project_to_iw(e_inv, e_lndet, d, guess=guess)
