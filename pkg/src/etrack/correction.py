"""Measurement update of the factorised random matrix model.

The update follows Feldmann, Fränken and Koch (2011): the kinematic state is
corrected with the measurement centroid, the extent with the innovation
spread and the measurement scatter, both mapped through square roots of
the predicted extent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .extent import ExtentState
from .kinematics import GaussianState


@dataclass(frozen=True)
class MeasurementSet:
    """Point measurements of one scan, stored as an (m, d) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 2)
        if pts.ndim != 2 or not np.all(np.isfinite(pts)):
            raise ValueError("measurements must be a finite (m, d) array")
        object.__setattr__(self, "points", pts)

    @property
    def count(self):
        return self.points.shape[0]


def _points(meas):
    if isinstance(meas, MeasurementSet):
        return meas.points
    return np.asarray(meas, dtype=float)


def position_matrix(n_x, d=2):
    """Observation matrix picking the first d (position) entries."""
    h = np.zeros((d, n_x))
    h[:, :d] = np.eye(d)
    return h


@dataclass(frozen=True)
class SensorModel:
    r: np.ndarray
    lam: float = 0.25

    def __post_init__(self):
        r = nm.symmetrize(self.r)
        if np.any(r):
            nm.check_spd(r, "R")
        object.__setattr__(self, "r", r)
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("spread scaling factor lambda must lie in (0, 1]")


def measurement_statistics(points):
    """Centroid and scatter matrix sum_i (z_i - zbar)(z_i - zbar)^T."""
    z = np.asarray(points, dtype=float)
    zbar = z.mean(axis=0)
    dz = z - zbar
    return zbar, dz.T @ dz


def correct(kin, extent, meas, sensor):
    """Joint kinematic/extent update with a :class:`MeasurementSet` (or an
    (m, d) array of points).

    An empty measurement set returns the inputs unchanged.
    """
    z = _points(meas)
    if z.size == 0:
        return kin, extent
    if z.ndim != 2 or not np.all(np.isfinite(z)):
        raise ValueError("measurements must be a finite (m, d) array")
    d = extent.dim
    count = z.shape[0]
    if not extent.nu > 2 * d + 2:
        raise ValueError("extent dof too small for the correction")
    h = position_matrix(kin.dim, d)
    x_hat = extent.v_mat / (extent.nu - 2 * d - 2)
    y = sensor.lam * x_hat + sensor.r
    zbar, scatter = measurement_statistics(z)

    s = nm.check_spd(h @ kin.cov @ h.T + y / count, "innovation covariance")
    s_inv = nm.spd_inv(s)
    gain = kin.cov @ h.T @ s_inv
    innov = zbar - h @ kin.mean
    mean = kin.mean + gain @ innov
    cov = nm.symmetrize(kin.cov - gain @ s @ gain.T)

    x_root = nm.sym_sqrt(x_hat)
    s_map = x_root @ nm.inv_sym_sqrt(s)
    y_map = x_root @ nm.inv_sym_sqrt(y)
    n_hat = s_map @ np.outer(innov, innov) @ s_map.T
    y_hat = y_map @ scatter @ y_map.T
    v_mat = nm.symmetrize(extent.v_mat + n_hat + y_hat)
    return GaussianState(mean, cov), ExtentState(extent.nu + count, v_mat)


def log_likelihood(kin, extent, meas, sensor):
    """Predictive log-likelihood of a measurement set, used for mode weights.

    Combines the centroid density N(zbar; H m, S) with the scatter density
    W(scatter; m - 1, Y) when at least d + 1 points are available.
    """
    from .matvar import WishartParams, wishart_logpdf

    z = _points(meas)
    if z.size == 0:
        return 0.0
    d = extent.dim
    count = z.shape[0]
    h = position_matrix(kin.dim, d)
    x_hat = extent.v_mat / (extent.nu - 2 * d - 2)
    y = nm.symmetrize(sensor.lam * x_hat + sensor.r)
    zbar, scatter = measurement_statistics(z)
    s = nm.symmetrize(h @ kin.cov @ h.T + y / count)
    innov = zbar - h @ kin.mean
    s_inv, ld = nm.spd_inv_logdet(s)
    out = -0.5 * (d * np.log(2 * np.pi) + ld + innov @ s_inv @ innov)
    if count > d:
        out += wishart_logpdf(scatter, WishartParams(count - 1, y))
    return float(out)
