"""Matrix-variate distributions: inverse Wishart, Wishart and the
non-central inverse Wishart transition model.

Parametrisations follow the random-matrix tracking literature:

* ``IW_d(X | nu, V)`` has ``E[X] = V / (nu - 2d - 2)`` and requires ``nu > 2d``;
  ``X^{-1}`` is Wishart with ``nu - d - 1`` degrees of freedom and scale ``V^{-1}``.
* ``W_d(X | w, W)`` has ``E[X] = w W`` and requires ``w > d - 1``.

All samplers take an explicit :class:`numpy.random.Generator` and an optional
``size`` giving a leading batch dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm

# tolerance for treating a real degrees-of-freedom value as an integer
_INT_TOL = 1e-9


@dataclass(frozen=True)
class InverseWishartParams:
    nu: float
    v_mat: np.ndarray

    def __post_init__(self):
        v = nm.check_spd(self.v_mat, "IW parameter matrix")
        object.__setattr__(self, "v_mat", v)
        d = v.shape[0]
        if not self.nu > 2 * d:
            raise ValueError(f"inverse Wishart needs nu > 2d = {2 * d}, got {self.nu}")

    @property
    def dim(self):
        return self.v_mat.shape[0]

    def mean(self):
        d = self.dim
        if not self.nu > 2 * d + 2:
            raise ValueError("inverse Wishart mean needs nu > 2d + 2")
        return self.v_mat / (self.nu - 2 * d - 2)


@dataclass(frozen=True)
class WishartParams:
    w: float
    w_mat: np.ndarray

    def __post_init__(self):
        wm = nm.check_spd(self.w_mat, "Wishart parameter matrix")
        object.__setattr__(self, "w_mat", wm)
        if not self.w > wm.shape[0] - 1:
            raise ValueError(f"Wishart needs w > d - 1, got {self.w}")

    @property
    def dim(self):
        return self.w_mat.shape[0]


@dataclass(frozen=True)
class NcIwParams:
    """Non-central inverse Wishart ``IW^nc(X | v, Sigma, Sigma Theta)``.

    Only used as a parameter container: the density itself is never
    evaluated, the transition is exercised through :func:`transition_sample`.
    """

    v: float
    sigma: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        s = nm.check_spd(self.sigma, "ncIW Sigma")
        t = nm.check_psd(self.theta, "ncIW Theta")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "theta", t)
        if not self.v > 2 * s.shape[0]:
            raise ValueError("non-central inverse Wishart needs v > 2d")

    @classmethod
    def from_transition(cls, x_prev, m, q, v):
        """Parameters of the extent transition density given X_k and M(x_k)."""
        m = np.asarray(m, dtype=float)
        minv = np.linalg.inv(m)
        sigma = m @ nm.spd_inv(q) @ m.T
        theta = minv.T @ nm.spd_inv(x_prev) @ minv
        return cls(v, sigma, theta)


def iw_logpdf(x, p):
    """Log density of ``IW_d(x | p.nu, p.v_mat)``."""
    x = nm.check_spd(x, "x")
    d = p.dim
    if x.shape != (d, d):
        raise ValueError("dimension mismatch between x and parameters")
    n = p.nu - d - 1
    xinv = nm.spd_inv(x)
    return (
        -0.5 * float(np.trace(p.v_mat @ xinv))
        + 0.5 * n * nm.logdet(p.v_mat)
        - 0.5 * d * n * math.log(2.0)
        - nm.ln_multigamma(d, 0.5 * n)
        - 0.5 * p.nu * nm.logdet(x)
    )


def wishart_logpdf(x, p):
    x = nm.check_spd(x, "x")
    d = p.dim
    return (
        -0.5 * float(np.trace(x @ nm.spd_inv(p.w_mat)))
        + 0.5 * (p.w - d - 1) * nm.logdet(x)
        - 0.5 * p.w * d * math.log(2.0)
        - nm.ln_multigamma(d, 0.5 * p.w)
        - 0.5 * p.w * nm.logdet(p.w_mat)
    )


def _is_integer(a):
    return abs(a - round(a)) < _INT_TOL


def _triangular_factor(rng, w, d, size):
    """Lower-triangular A with A A^T ~ W_d(w, I); shape (size, d, d)."""
    a = np.zeros((size, d, d))
    for i in range(d):
        a[:, i, i] = np.sqrt(rng.chisquare(w - i, size=size))
        if i:
            a[:, i, :i] = rng.standard_normal((size, i))
    return a


def _unit_wishart(rng, w, d, size):
    """Batch of W_d(w, I) draws, allowing a singular integer w < d.

    Non-integer w must satisfy w > d - 1 (triangular chi-square factor).
    """
    if _is_integer(w) and round(w) < d:
        k = int(round(w))
        if k <= 0:
            return np.zeros((size, d, d))
        g = rng.standard_normal((size, d, k))
        return g @ np.swapaxes(g, -1, -2)
    if not w > d - 1:
        raise ValueError(f"Wishart degrees of freedom {w} must exceed d - 1 = {d - 1}")
    a = _triangular_factor(rng, w, d, size)
    return a @ np.swapaxes(a, -1, -2)


def _squeeze(batch, size):
    return batch[0] if size is None else batch


def wishart_sample(rng, p, size=None):
    """Draw from ``W_d(p.w, p.w_mat)`` via its triangular chi-square and normal factor."""
    n = 1 if size is None else int(size)
    low = nm.cholesky(p.w_mat)
    a = _triangular_factor(rng, p.w, p.dim, n)
    la = low @ a
    return _squeeze(la @ np.swapaxes(la, -1, -2), size)


def iw_sample(rng, p, size=None):
    """Draw from ``IW_d(p.nu, p.v_mat)`` as the inverse of a Wishart draw
    with ``nu - d - 1`` degrees of freedom and scale ``V^{-1}``."""
    n = 1 if size is None else int(size)
    d = p.dim
    # S = L_w A A^T L_w^T with L_w L_w^T = V^{-1}; X = S^{-1} = L_w^{-T} (A A^T)^{-1} L_w^{-1}
    lw = nm.cholesky(nm.spd_inv(p.v_mat))
    a = _triangular_factor(rng, p.nu - d - 1, d, n)
    ainv = np.linalg.inv(a)
    lwinv = np.linalg.inv(lw)
    x = lwinv.T @ (np.swapaxes(ainv, -1, -2) @ ainv) @ lwinv
    x = 0.5 * (x + np.swapaxes(x, -1, -2))
    return _squeeze(x, size)


def iw_entropy_moments(p):
    """Sufficient statistics of ``IW_d(nu, V)``.

    Returns ``(E[X^{-1}], E[ln|X|])`` with ``E[X^{-1}] = (nu - d - 1) V^{-1}``
    and ``E[ln|X|] = ln|V| - d ln 2 - sum_i psi_0((nu - d - i)/2)``.
    """
    d = p.dim
    v_inv, ld = nm.spd_inv_logdet(p.v_mat)
    e_inv = (p.nu - d - 1) * v_inv
    e_lndet = ld - d * math.log(2.0) - nm.multi_digamma(d, 0.5 * (p.nu - d - 1))
    return e_inv, e_lndet


def iw_element_variance(p):
    """Element-wise variances Var(x_ij) of ``X ~ IW_d(nu, V)``; needs nu > 2d + 4."""
    d = p.dim
    nu = p.nu
    if not nu > 2 * d + 4:
        raise ValueError("inverse Wishart variance needs nu > 2d + 4")
    v = p.v_mat
    diag = np.diag(v)
    num = (2.0 / (nu - 2 * d - 2) + 1.0) * v**2 + np.outer(diag, diag)
    return num / ((nu - 2 * d - 1) * (nu - 2 * d - 2) * (nu - 2 * d - 4))


def _haar_frame(rng, n, d, size):
    """Batch of n x d matrices with orthonormal columns, Haar distributed."""
    g = rng.standard_normal((size, n, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


def _rectangular_factor(rng, lows, n_prev, n_next):
    """d x n_next factor ``Y_k H_1^T`` of the (thinned) inverse extent.

    ``Y_k = L O^T`` is a d x n_prev factor of ``L L^T`` with a Haar-random
    frame O, and ``H_1 = [I, 0]`` keeps its first ``n_next`` columns.
    """
    count, d, _ = lows.shape
    if n_prev == n_next:
        pad = np.zeros((count, d, n_next - d))
        return np.concatenate([lows, pad], axis=-1)
    frame = _haar_frame(rng, n_prev, d, count)
    y_prev = lows @ np.swapaxes(frame, -1, -2)
    return y_prev[:, :, :n_next]


def _reduced_factor(rng, lows, n_prev, n_next):
    """d x d factor F whose Gram matrix has the law of the thinned Gram matrix.

    Uses the matrix-beta representation A = T B T^T, T = chol(A + C), with
    A ~ W(n_next, I) and C ~ W(n_prev - n_next, I); valid for real dofs.
    """
    count, d, _ = lows.shape
    if abs(n_prev - n_next) < _INT_TOL:
        return lows
    a = _unit_wishart(rng, n_next, d, count)
    c = _unit_wishart(rng, n_prev - n_next, d, count)
    t = np.linalg.cholesky(a + c)
    tinv = np.linalg.inv(t)
    beta = tinv @ a @ np.swapaxes(tinv, -1, -2)
    gram = lows @ beta @ np.swapaxes(lows, -1, -2)
    gram = 0.5 * (gram + np.swapaxes(gram, -1, -2))
    return np.linalg.cholesky(gram)


# element budget above which "auto" switches from the rectangular factors
_RECT_BUDGET = 4_000_000


def transition_sample(rng, x_prev, m, q, v, nu_prev=None, size=None, method="auto"):
    """Draw X_{k+1} from the non-central inverse Wishart extent transition.

    Realises ``X_{k+1}^{-1/2} = M^{-T}(X_k^{-1/2} + n^{1/2} W^{1/2})`` with
    ``n = v - d - 1`` and ``W ~ W_d(n, Q/n)``. The square-root factors are
    d x n matrices: ``n^{1/2} W^{1/2}`` is a Gaussian matrix whose columns are
    N(0, Q), and ``X_k^{-1/2} = Y_k H_1^T``.

    ``nu_prev`` is the posterior dof behind ``x_prev``. When given, ``Y_k`` is a
    random d x (nu_prev - d - 1) factor of ``X_k^{-1}`` and ``H_1`` keeps its
    first ``n`` columns; averaged over ``X_k ~ IW(nu_prev, V)`` this yields
    exactly ``IW(v, V (I + Q V)^{-1})`` for M = I. When omitted no thinning
    happens and ``Theta = M^{-T} X_k^{-1} M^{-1}`` enters in full.

    ``method`` selects ``"rectangular"`` (literal d x n factors, integer dofs
    only), ``"reduced"`` (d non-central columns plus a central Wishart for the
    rest, real dofs with n >= d) or ``"auto"``. ``x_prev`` may be a single
    matrix or a batch of ``size`` matrices, and so may ``m``.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)) or np.any(np.linalg.cond(m) > 1e14):
        raise ValueError("transformation matrix M is singular")
    x_prev = np.asarray(x_prev, dtype=float)
    d = m.shape[-1]
    if not v > 2 * d:
        raise ValueError(f"transition dof v must exceed 2d = {2 * d}")
    n = v - d - 1
    n_prev = n if nu_prev is None else nu_prev - d - 1
    if n_prev < n - _INT_TOL:
        raise ValueError("thinning requires nu_prev >= v")
    count = 1 if size is None else int(size)
    q = nm.symmetrize(q)
    lq = np.zeros((d, d)) if not np.any(q) else nm.cholesky(q)
    minv_t = np.swapaxes(np.linalg.inv(m), -1, -2)

    xinv = np.linalg.inv(x_prev)
    lows = np.linalg.cholesky(0.5 * (xinv + np.swapaxes(xinv, -1, -2)))
    if lows.ndim == 2:
        lows = np.broadcast_to(lows, (count, d, d))

    integral = _is_integer(n) and _is_integer(n_prev)
    if method == "auto":
        rect_ok = integral and count * d * max(n_prev, n) <= _RECT_BUDGET
        method = "rectangular" if rect_ok else "reduced"
    if method == "rectangular":
        if not integral:
            raise ValueError("rectangular factors need integer degrees of freedom")
        y = _rectangular_factor(rng, lows, int(round(n_prev)), int(round(n)))
    elif method == "reduced":
        if n < d - _INT_TOL:
            raise ValueError(f"reduced construction needs n = v - d - 1 >= d, got {n}")
        y = _reduced_factor(rng, lows, n_prev, n)
    else:
        raise ValueError(f"unknown method {method!r}")

    cols = y.shape[-1]
    z = minv_t @ (y + lq @ rng.standard_normal((count, d, cols)))
    prec = z @ np.swapaxes(z, -1, -2)
    rest = n - cols
    if rest > _INT_TOL:
        # columns without non-centrality: central Wishart with the remaining dof
        cw = _unit_wishart(rng, rest, d, count)
        prec = prec + minv_t @ lq @ cw @ lq.T @ np.swapaxes(minv_t, -1, -2)
    prec = 0.5 * (prec + np.swapaxes(prec, -1, -2))
    x = np.linalg.inv(prec)
    x = 0.5 * (x + np.swapaxes(x, -1, -2))
    return _squeeze(x, size)


def transition_inverse_mean(x_prev, m, q, v, nu_prev=None):
    """Analytic E[X_{k+1}^{-1} | X_k] under :func:`transition_sample`."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    n = v - d - 1
    ratio = 1.0 if nu_prev is None else n / (nu_prev - d - 1)
    minv = np.linalg.inv(m)
    inner = ratio * nm.spd_inv(x_prev) + n * np.asarray(q, dtype=float)
    return nm.symmetrize(minv.T @ inner @ minv)


def process_noise_sample(rng, q, v, size=None):
    """Draw the process noise W ~ W_d(n, Q/n), n = v - d - 1."""
    q = nm.check_spd(q, "Q")
    d = q.shape[0]
    n = v - d - 1
    return wishart_sample(rng, WishartParams(n, q / n), size=size)


def process_noise_moments(q, v):
    """Mean and element-wise variance of W ~ W_d(n, Q/n).

    Var(w_ij) = (q_ij^2 + q_ii q_jj) / n; the trace of this matrix is the
    trace of ``(Q Q + tr(Q) Q) / n``.
    """
    q = np.asarray(q, dtype=float)
    d = q.shape[0]
    n = v - d - 1
    diag = np.diag(q)
    return q.copy(), (q**2 + np.outer(diag, diag)) / n


def granstrom_transition_sample(rng, x_prev, m, n, size=None):
    """Draw X_{k+1} ~ W_d(n, M X_k M^T / n) for a single or batched X_k."""
    m = np.asarray(m, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    count = 1 if size is None else int(size)
    d = m.shape[-1]
    scale = m @ x_prev @ np.swapaxes(m, -1, -2) / n
    scale = 0.5 * (scale + np.swapaxes(scale, -1, -2))
    low = np.linalg.cholesky(scale)
    if low.ndim == 2:
        low = np.broadcast_to(low, (count, d, d))
    a = _triangular_factor(rng, n, d, count)
    la = low @ a
    return _squeeze(la @ np.swapaxes(la, -1, -2), size)
