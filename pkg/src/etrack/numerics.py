"""Scalar special functions and SPD matrix helpers.

Matrices are plain ``numpy`` arrays. Functions that require a symmetric
positive definite input validate it through :func:`cholesky`, which
reports the first leading minor that fails.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special
from scipy.linalg import lapack

# smallest admissible Cholesky pivot, relative to the largest diagonal entry
SPD_RTOL = 1e-12


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix expected to be SPD is not.

    ``minor`` is the 1-based size of the first leading minor that is not
    positive definite, or ``None`` when the failure is a pivot tolerance.
    """

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _cholesky_sym(a):
    """(lower factor, symmetrized input) with the SPD checks of :func:`cholesky`."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    if not np.isfinite(a).all():
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    low, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (leading minor {info})", minor=int(info)
        )
    pivots = low.diagonal() ** 2
    scale = max(float(a.diagonal().max()), 0.0)
    if pivots.min() <= SPD_RTOL * scale:
        k = int(np.argmax(pivots <= SPD_RTOL * scale)) + 1
        raise NotPositiveDefiniteError(
            f"matrix is numerically singular (pivot {k} below tolerance)", minor=k
        )
    return low, a


def cholesky(a):
    """Lower Cholesky factor of a strictly SPD matrix.

    The input is symmetrized first. A pivot ``L_ii**2`` below
    ``SPD_RTOL * max(diag(a))`` is treated as a failure.
    """
    return _cholesky_sym(a)[0]


def check_spd(a, name="matrix"):
    """Return the symmetrized matrix, raising if it is not strictly SPD."""
    try:
        return _cholesky_sym(a)[1]
    except NotPositiveDefiniteError as err:
        raise NotPositiveDefiniteError(f"{name}: {err}", minor=err.minor) from None


def check_psd(a, name="matrix", atol=1e-12):
    a = symmetrize(a)
    lam = np.linalg.eigvalsh(a)
    if lam[0] < -atol * max(1.0, abs(lam[-1])):
        raise NotPositiveDefiniteError(f"{name}: not positive semidefinite")
    return a


def sym_sqrt(a):
    """Symmetric square root S with S @ S == a."""
    a = symmetrize(a)
    lam, vec = np.linalg.eigh(a)
    scale = max(abs(lam[-1]), 1.0) if lam.size else 1.0
    if lam.size and lam[0] < -SPD_RTOL * scale:
        raise NotPositiveDefiniteError("sym_sqrt of a matrix with a negative eigenvalue")
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
    return symmetrize(root)


def inv_sym_sqrt(a):
    """Inverse of the symmetric square root of a strictly SPD matrix."""
    a = check_spd(a)
    lam, vec = np.linalg.eigh(a)
    return symmetrize((vec / np.sqrt(lam)) @ vec.T)


def logdet(a):
    """ln|a| via the Cholesky factor."""
    low = cholesky(a)
    return 2.0 * float(np.log(low.diagonal()).sum())


def _inv_from_factor(low):
    # dpotri fills the lower triangle; the upper one is zero for a clean factor
    out, _ = lapack.dpotri(low, lower=1)
    return out + out.T - np.diag(out.diagonal())


def spd_inv(a):
    return _inv_from_factor(cholesky(a))


def spd_inv_logdet(a):
    """(a^{-1}, ln|a|) from a single Cholesky factorisation."""
    low = cholesky(a)
    return _inv_from_factor(low), 2.0 * float(np.log(low.diagonal()).sum())


def _positive_arg(x, name):
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise ValueError(f"{name} requires a finite x > 0, got {x}")
    return x


def digamma(x):
    """psi_0(x) for real x > 0."""
    return float(special.digamma(_positive_arg(x, "digamma")))


def trigamma(x):
    """psi_1(x) for real x > 0."""
    return float(special.polygamma(1, _positive_arg(x, "trigamma")))


def ln_multigamma(d, a):
    """Log of the multivariate gamma function Gamma_d(a), a > (d - 1)/2."""
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not a > 0.5 * (d - 1):
        raise ValueError(f"ln_multigamma needs a > {(d - 1) / 2}, got {a}")
    return float(special.multigammaln(a, d))


def multi_digamma(d, a):
    """sum_{i=1..d} psi_0(a + (1 - i)/2): derivative of ln_multigamma in a."""
    return sum(digamma(a + 0.5 * (1 - i)) for i in range(1, d + 1))


def multi_trigamma(d, a):
    return sum(trigamma(a + 0.5 * (1 - i)) for i in range(1, d + 1))
