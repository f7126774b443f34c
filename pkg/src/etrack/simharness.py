"""Scenario simulation, estimators M1-M3 and the Monte-Carlo metrics.

Estimators:

* ``imm`` (M1): interacting multiple models of CV kinematics with
  the kinematics-independent non-central IW prediction,
* ``granstrom`` (M2): CT kinematics with the Wishart-transition prediction,
* ``proposed`` (M3): CT kinematics with the kinematic-dependent non-central
  IW prediction.

All three share the same measurement update. Angles are radians here; the
config layer converts from degrees.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nm
from .correction import MeasurementSet, SensorModel, correct, log_likelihood
from .extent import (
    VOLUME_COUPLED,
    VOLUME_PRESERVING,
    V_RULES,
    ExtentState,
    RotationTransform,
    TransitionConfig,
    collapse_mixture,
    predict_bartlett,
    predict_granstrom,
    predict_proposed,
    q_isotropic_volume,
    q_scaled_inverse,
    v_setting_volume_coupled,
)
from .kinematics import CT, CV, GaussianState, MotionModel, predict_kinematic
from .matvar import InverseWishartParams, iw_element_variance

IMM = "imm"
GRANSTROM = "granstrom"
PROPOSED = "proposed"
ESTIMATOR_KINDS = (IMM, GRANSTROM, PROPOSED)
MOTION_OF_KIND = {IMM: CV, GRANSTROM: CT, PROPOSED: CT}
Q_RULES = ("scaled-inverse", "isotropic-volume")


class DivergenceError(RuntimeError):
    """A filter left the admissible state space (non-SPD matrix or nu too small)."""


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class Segment:
    duration: int
    speed: float
    turn_rate: float  # rad/s

    def __post_init__(self):
        if int(self.duration) != self.duration or self.duration < 1:
            raise ValueError("segment duration must be an integer >= 1")
        if not self.speed >= 0:
            raise ValueError("segment speed must be non-negative")


@dataclass(frozen=True)
class ModeConfig:
    """One CV model of the M1 mixture."""

    q_tilde: float
    q_rule: str
    q_coeff: float

    def __post_init__(self):
        if self.q_rule not in Q_RULES:
            raise ValueError(f"unknown Q rule {self.q_rule!r}")


@dataclass(frozen=True)
class EstimatorConfig:
    name: str
    kind: str
    sigma_a: float = 2.0
    sigma_omega: float = math.radians(0.1)
    n: float = 30.0
    q_rule: str = "scaled-inverse"
    q_coeff: float = 0.33
    v_rule: str = VOLUME_PRESERVING
    nu_mode: str = "closed"
    half_factor: bool = False
    modes: tuple = ()
    stay_prob: float = 0.9

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.q_rule not in Q_RULES:
            raise ValueError(f"unknown Q rule {self.q_rule!r}")
        if self.v_rule not in V_RULES:
            raise ValueError(f"unknown v rule {self.v_rule!r}")
        if self.nu_mode not in ("closed", "optimal"):
            raise ValueError(f"unknown nu mode {self.nu_mode!r}")
        if self.kind == IMM:
            if not self.modes:
                raise ValueError("imm needs at least one mode")
            if not 0.0 < self.stay_prob <= 1.0:
                raise ValueError("stay probability must lie in (0, 1]")
        if self.kind == GRANSTROM and not self.n > 3:
            raise ValueError("Wishart transition dof n must exceed d + 1")

    @property
    def motion(self):
        return MOTION_OF_KIND[self.kind]


@dataclass(frozen=True)
class InitConfig:
    """Prior of every filter at k = 0, centred on a perturbed truth."""

    nu: float = 10.0
    pos_std: float = 10.0
    vel_std: float = 5.0
    omega_std: float = math.radians(2.0)
    perturb: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    segments: tuple
    extent_diameters: tuple = (50.0, 16.0)
    T: float = 1.0
    poisson_mean: float = 10.0
    r: np.ndarray = field(default_factory=lambda: 1.5**2 * np.eye(2))
    n_runs: int = 900
    master_seed: int = 0
    estimators: tuple = ()
    lam: float = 0.25
    initial_heading: float = 0.0
    init: InitConfig = InitConfig()
    name: str = "scenario"

    def __post_init__(self):
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        if len(self.extent_diameters) != 2 or min(self.extent_diameters) <= 0:
            raise ValueError("extent diameters must be two positive lengths")
        if not self.T > 0:
            raise ValueError("time step must be positive")
        if not self.poisson_mean > 0:
            raise ValueError("Poisson mean must be positive")
        if self.n_runs < 1:
            raise ValueError("need at least one run")
        r = nm.symmetrize(self.r)
        if np.any(r):
            nm.check_spd(r, "R")
        object.__setattr__(self, "r", r)
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ValueError("estimator names must be unique")

    @property
    def n_steps(self):
        return sum(s.duration for s in self.segments)

    def sensor(self):
        return SensorModel(self.r, self.lam)

    def snapshot(self):
        """JSON-ready description of the resolved config (angles in degrees)."""

        def conv(obj):
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if isinstance(obj, (list, tuple)):
                return [conv(o) for o in obj]
            if isinstance(obj, dict):
                return {k: conv(v) for k, v in obj.items()}
            return obj

        out = conv(asdict(self))
        for seg in out["segments"]:
            seg["turn_rate_deg"] = math.degrees(seg.pop("turn_rate"))
        out["initial_heading_deg"] = math.degrees(out.pop("initial_heading"))
        out["init"]["omega_std_deg"] = math.degrees(out["init"].pop("omega_std"))
        for est in out["estimators"]:
            est["sigma_omega_deg"] = math.degrees(est.pop("sigma_omega"))
        return out


# ---------------------------------------------------------------- truth


@dataclass(frozen=True)
class GroundTruth:
    positions: np.ndarray  # (K, 2)
    velocities: np.ndarray  # (K, 2)
    headings: np.ndarray  # (K,)
    turn_rates: np.ndarray  # (K,) rad/s, rate applied from k to k + 1
    extents: np.ndarray  # (K, 2, 2)

    @property
    def n_steps(self):
        return self.positions.shape[0]

    def state(self, k, motion):
        x = np.concatenate([self.positions[k], self.velocities[k]])
        if motion == CT:
            x = np.append(x, self.turn_rates[k])
        return x


def extent_matrix(diameters, heading):
    """Ellipse {y : y^T X^{-1} y <= 1} with the given diameters, major axis at heading."""
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    axes = np.diag([(0.5 * diameters[0]) ** 2, (0.5 * diameters[1]) ** 2])
    return nm.symmetrize(rot @ axes @ rot.T)


def generate_truth(cfg):
    """Piecewise constant-speed, constant-turn trajectory with a rigid extent."""
    rates = np.concatenate([np.full(s.duration, s.turn_rate) for s in cfg.segments])
    speeds = np.concatenate([np.full(s.duration, s.speed) for s in cfg.segments])
    n = rates.size
    pos = np.zeros((n, 2))
    head = np.zeros(n)
    head[0] = cfg.initial_heading
    T = cfg.T
    for k in range(n - 1):
        w, h, sp = rates[k], head[k], speeds[k]
        if abs(w) < 1e-12:
            step = sp * T * np.array([math.cos(h), math.sin(h)])
        else:
            # exact arc; chord length 2 sp sin(wT/2)/w along h + wT/2
            chord = 2.0 * sp * math.sin(0.5 * w * T) / w
            step = chord * np.array([math.cos(h + 0.5 * w * T), math.sin(h + 0.5 * w * T)])
        pos[k + 1] = pos[k] + step
        head[k + 1] = h + w * T
    vel = speeds[:, None] * np.stack([np.cos(head), np.sin(head)], axis=1)
    ext = np.stack([extent_matrix(cfg.extent_diameters, h) for h in head])
    return GroundTruth(pos, vel, head, rates, ext)


def segment_bounds(cfg):
    """[(start, stop, turn_rate)] step ranges of the scenario segments."""
    out, k = [], 0
    for s in cfg.segments:
        out.append((k, k + s.duration, s.turn_rate))
        k += s.duration
    return out


def uniform_ellipsoid(rng, x, size):
    """``size`` points uniform over {y : y^T X^{-1} y <= 1}."""
    d = x.shape[0]
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = rng.random(size) ** (1.0 / d)
    return (g * radius[:, None]) @ nm.sym_sqrt(x)


def generate_measurements(rng, center, extent, sensor, poisson_mean):
    """Poisson count of points uniform over the extent plus Gaussian noise."""
    count = int(rng.poisson(poisson_mean))
    d = extent.shape[0]
    pts = np.asarray(center, dtype=float) + uniform_ellipsoid(rng, extent, count)
    if np.any(sensor.r):
        pts = pts + rng.standard_normal((count, d)) @ nm.cholesky(sensor.r).T
    return MeasurementSet(pts.reshape(count, d))


# ---------------------------------------------------------------- metrics


def gw_distance(truth_pos, truth_ext, kin, extent):
    """Gaussian Wasserstein distance between the estimate and the truth."""
    x_bar = extent.mean()
    d = x_bar.shape[0]
    root = nm.sym_sqrt(truth_ext)
    cross = nm.sym_sqrt(root @ x_bar @ root)
    err = kin.mean[:d] - np.asarray(truth_pos, dtype=float)
    d2 = np.trace(truth_ext + x_bar - 2.0 * cross) + err @ err
    return math.sqrt(max(d2, 0.0))


def nees_terms(kin, extent, truth_state, truth_ext):
    """Per-run NEES contributions (kinematic / n_x, extent) at one step.

    The kinematic term uses P^{-1}; the extent normaliser is the sum of the
    IW element variances, so a truth drawn from the estimate scores about 1.
    """
    err = kin.mean - truth_state
    nees_x = float(err @ nm.spd_inv(kin.cov) @ err) / kin.dim
    d = extent.dim
    if not extent.nu > 2 * d + 4:
        raise ValueError("extent variance undefined for nu <= 2d + 4")
    e = float(np.sum(iw_element_variance(InverseWishartParams(extent.nu, extent.v_mat))))
    diff = extent.mean() - truth_ext
    return nees_x, float(np.sum(diff * diff)) / e


def anees(kins, extents, truth_states, truth_exts):
    """(ANEES_x, ANEES_X) over a set of runs at one step."""
    terms = np.array(
        [nees_terms(k, e, t, x) for k, e, t, x in zip(kins, extents, truth_states, truth_exts)]
    )
    return float(np.mean(terms[:, 0])), float(np.mean(terms[:, 1]))


# ---------------------------------------------------------------- estimators


def _q_rule(rule, coeff):
    return q_scaled_inverse(coeff) if rule == "scaled-inverse" else q_isotropic_volume(coeff)


def _motion(cfg, T):
    if cfg.motion == CV:
        return None
    return MotionModel(CT, T, sigma_a=cfg.sigma_a, sigma_omega=cfg.sigma_omega)


def _mix_gaussians(weights, states):
    mean = sum(w * s.mean for w, s in zip(weights, states))
    cov = sum(w * (s.cov + np.outer(s.mean - mean, s.mean - mean)) for w, s in zip(weights, states))
    return GaussianState(mean, cov)


class SingleModelFilter:
    """M2 / M3: one CT kinematic model with a kinematic-dependent extent prediction."""

    def __init__(self, cfg, T, sensor, kin, extent):
        self.cfg = cfg
        self.sensor = sensor
        self.motion = _motion(cfg, T)
        self.m_fn = RotationTransform(T)
        if cfg.kind == PROPOSED:
            self.transition = TransitionConfig(
                q=_q_rule(cfg.q_rule, cfg.q_coeff),
                m_fn=self.m_fn,
                v_rule=cfg.v_rule,
                nu_mode=cfg.nu_mode,
                half_factor=cfg.half_factor,
            )
        self.kin, self.extent = kin, extent

    def predict(self):
        # the extent prediction uses the kinematic posterior at k
        if self.cfg.kind == PROPOSED:
            ext = predict_proposed(self.extent, self.kin, self.transition)
        else:
            ext = predict_granstrom(
                self.extent, self.kin, self.m_fn, self.cfg.n, self.cfg.half_factor
            )
        self.kin = predict_kinematic(self.kin, self.motion)
        self.extent = ext

    def update(self, meas):
        self.kin, self.extent = correct(self.kin, self.extent, meas, self.sensor)

    def estimate(self):
        return self.kin, self.extent


class ImmFilter:
    """M1: interacting multiple CV models with the fixed-M non-central IW prediction."""

    def __init__(self, cfg, T, sensor, kin, extent):
        self.cfg = cfg
        self.sensor = sensor
        r = len(cfg.modes)
        off = (1.0 - cfg.stay_prob) / (r - 1) if r > 1 else 0.0
        self.tpm = np.full((r, r), off) + (cfg.stay_prob - off) * np.eye(r)
        self.models = [MotionModel(CV, T, q_tilde=m.q_tilde) for m in cfg.modes]
        self.q_rules = [_q_rule(m.q_rule, m.q_coeff) for m in cfg.modes]
        self.probs = np.full(r, 1.0 / r)
        self.kins = [kin] * r
        self.extents = [extent] * r
        self.m = np.eye(extent.dim)

    def predict(self):
        c = self.tpm.T @ self.probs
        mix = (self.tpm * self.probs[:, None]) / c[None, :]
        kins, extents = [], []
        for j, (model, q_rule) in enumerate(zip(self.models, self.q_rules)):
            kin = _mix_gaussians(mix[:, j], self.kins)
            ext = collapse_mixture(mix[:, j], self.extents)
            q = q_rule(ext.v_mat)
            v = v_setting_volume_coupled(ext.nu, q, ext.v_mat)
            extents.append(predict_bartlett(ext, self.m, q, v))
            kins.append(predict_kinematic(kin, model))
        self.kins, self.extents, self.probs = kins, extents, c

    def update(self, meas):
        if meas.count == 0:
            return
        loglik = np.array(
            [log_likelihood(k, e, meas, self.sensor) for k, e in zip(self.kins, self.extents)]
        )
        out = [correct(k, e, meas, self.sensor) for k, e in zip(self.kins, self.extents)]
        self.kins = [o[0] for o in out]
        self.extents = [o[1] for o in out]
        logw = np.log(self.probs) + loglik
        w = np.exp(logw - logw.max())
        self.probs = w / w.sum()

    def estimate(self):
        return _mix_gaussians(self.probs, self.kins), collapse_mixture(self.probs, self.extents)


def make_filter(cfg, T, sensor, kin, extent):
    if cfg.kind == IMM:
        return ImmFilter(cfg, T, sensor, kin, extent)
    return SingleModelFilter(cfg, T, sensor, kin, extent)


def initial_states(cfg, truth, motion, noise):
    """Kinematic prior and extent prior for one estimator.

    ``noise`` is a standard normal 5-vector shared by all estimators of a run.
    The extent prior is a circle with the true area, or the true extent when
    the initialisation is not perturbed.
    """
    init = cfg.init
    std = [init.pos_std] * 2 + [init.vel_std] * 2
    if motion == CT:
        std.append(init.omega_std)
    std = np.array(std)
    x0 = truth.state(0, motion)
    if init.perturb:
        x0 = x0 + std * noise[: std.size]
    kin = GaussianState(x0, np.diag(std**2))
    d = 2
    if init.perturb:
        shape = math.sqrt(np.linalg.det(truth.extents[0])) * np.eye(d)
    else:
        shape = truth.extents[0]
    extent = ExtentState(init.nu, (init.nu - 2 * d - 2) * shape)
    return kin, extent


def _check_state(kin, extent):
    d = extent.dim
    if not extent.nu > 2 * d + 2 + 1e-9:
        raise DivergenceError(f"extent dof {extent.nu} fell to the floor")
    try:
        nm.cholesky(kin.cov)
        nm.cholesky(extent.v_mat)
    except nm.NotPositiveDefiniteError as err:
        raise DivergenceError(str(err)) from None
    if not (np.all(np.isfinite(kin.mean)) and np.all(np.isfinite(kin.cov))):
        raise DivergenceError("non-finite kinematic state")


# ---------------------------------------------------------------- Monte Carlo

METRICS = ("gw2", "nees_x", "nees_ext", "nu", "logdet_v")


def simulate_run(cfg, seed_seq, truth=None):
    """One Monte-Carlo run; returns {estimator: (K, 5) array or None if diverged}."""
    truth = generate_truth(cfg) if truth is None else truth
    rng = np.random.default_rng(seed_seq)
    sensor = cfg.sensor()
    noise = rng.standard_normal(5)
    scans = [
        generate_measurements(rng, truth.positions[k], truth.extents[k], sensor, cfg.poisson_mean)
        for k in range(truth.n_steps)
    ]
    out = {}
    for est in cfg.estimators:
        kin, ext = initial_states(cfg, truth, est.motion, noise)
        rows = np.empty((truth.n_steps, len(METRICS)))
        try:
            filt = make_filter(est, cfg.T, sensor, kin, ext)
            for k in range(truth.n_steps):
                if k > 0:
                    filt.predict()
                filt.update(scans[k])
                kin_k, ext_k = filt.estimate()
                _check_state(kin_k, ext_k)
                gw = gw_distance(truth.positions[k], truth.extents[k], kin_k, ext_k)
                nx, ne = nees_terms(
                    kin_k, ext_k, truth.state(k, est.motion), truth.extents[k]
                )
                rows[k] = (gw * gw, nx, ne, ext_k.nu, nm.logdet(ext_k.v_mat))
        except (DivergenceError, ValueError, np.linalg.LinAlgError, FloatingPointError):
            rows = None
        out[est.name] = rows
    return out


def _run_chunk(args):
    cfg, seeds = args
    truth = generate_truth(cfg)
    return [simulate_run(cfg, s, truth) for s in seeds]


@dataclass
class MetricsReport:
    """Per-step, per-estimator aggregates over the non-diverged runs.

    ``gw`` is the root of the run-averaged squared GW distance.
    """

    estimators: tuple
    steps: np.ndarray
    gw: dict
    anees_x: dict
    anees_ext: dict
    nu: dict
    logdet_v: dict
    n_runs: int
    diverged: dict
    master_seed: int

    def to_dict(self):
        def arr(a):
            return [float(v) for v in a]

        return {
            "estimators": list(self.estimators),
            "steps": [int(k) for k in self.steps],
            "n_runs": self.n_runs,
            "master_seed": self.master_seed,
            "diverged": {k: list(v) for k, v in self.diverged.items()},
            "divergence_counts": {k: len(v) for k, v in self.diverged.items()},
            "metrics": {
                name: {
                    "gw": arr(self.gw[name]),
                    "anees_x": arr(self.anees_x[name]),
                    "anees_ext": arr(self.anees_ext[name]),
                    "nu": arr(self.nu[name]),
                    "logdet_V": arr(self.logdet_v[name]),
                }
                for name in self.estimators
            },
        }

    def to_bytes(self):
        """Canonical serialisation; floats are written with full round-trip precision."""
        return json.dumps(self.to_dict(), sort_keys=True).encode()

    def summary(self):
        out = {}
        for name in self.estimators:
            out[name] = {
                "mean_gw": float(np.mean(self.gw[name])),
                "max_gw": float(np.max(self.gw[name])),
                "mean_anees_x": float(np.mean(self.anees_x[name])),
                "mean_anees_ext": float(np.mean(self.anees_ext[name])),
                "diverged_runs": len(self.diverged[name]),
            }
        return out


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("ETRACK_THREADS", "1"))
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def run_monte_carlo(cfg, threads=None):
    """N independent runs with per-run streams spawned from ``master_seed``.

    Results are reduced in run-index order, so the report does not depend on
    the number of workers or their completion order.
    """
    threads = resolve_threads(threads)
    seeds = np.random.SeedSequence(cfg.master_seed).spawn(cfg.n_runs)
    if threads == 1:
        results = _run_chunk((cfg, seeds))
    else:
        chunks = [seeds[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, c) for c in chunks]))
        results = [None] * cfg.n_runs
        for i, part in enumerate(parts):
            results[i::threads] = part
    return reduce_runs(cfg, results)


def reduce_runs(cfg, results):
    names = tuple(e.name for e in cfg.estimators)
    n_steps = cfg.n_steps
    agg = {key: {} for key in METRICS}
    diverged = {}
    for name in names:
        good = [r[name] for r in results if r[name] is not None]
        diverged[name] = [i for i, r in enumerate(results) if r[name] is None]
        if good:
            stack = np.stack(good)
            # correctly rounded sums: bit-identical under any run ordering
            flat = stack.reshape(len(good), -1).T
            mean = np.array([math.fsum(col) for col in flat]).reshape(stack.shape[1:]) / len(good)
        else:
            mean = np.full((n_steps, len(METRICS)), np.nan)
        for j, key in enumerate(METRICS):
            agg[key][name] = mean[:, j]
    return MetricsReport(
        estimators=names,
        steps=np.arange(n_steps),
        gw={n: np.sqrt(agg["gw2"][n]) for n in names},
        anees_x=agg["nees_x"],
        anees_ext=agg["nees_ext"],
        nu=agg["nu"],
        logdet_v=agg["logdet_v"],
        n_runs=len(results),
        diverged=diverged,
        master_seed=cfg.master_seed,
    )


def reference_estimators(nu_mode="closed", half_factor=False):
    """M1, M2 and M3 with the constant-turn experiment settings."""
    modes = (
        ModeConfig(0.001, "scaled-inverse", 0.2),
        ModeConfig(3.0, "scaled-inverse", 0.33),
        ModeConfig(6.75, "isotropic-volume", 1.25),
    )
    return (
        EstimatorConfig("M1", IMM, modes=modes, v_rule=VOLUME_COUPLED),
        EstimatorConfig("M2", GRANSTROM, n=30.0, half_factor=half_factor),
        EstimatorConfig(
            "M3", PROPOSED, q_coeff=0.33, nu_mode=nu_mode, half_factor=half_factor
        ),
    )
