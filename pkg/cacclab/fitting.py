"""This module identifies the road load and air drag coefficients of a vehicle from drive logs.

Each log sample carries the wheel force F_w measured at speed v and acceleration a while the
vehicle drove at a nominal gap label d_target behind another vehicle (``inf`` for free road)
in one powertrain mode. Samples sharing a (d_target, mode) label form a cluster. The fit
minimizes the sum over clusters of the squared residuals

    F_w - M a - M g C_r - C_v v - 1/2 rho A C_x(d_target) v^2

over (C_r, C_v, C_x0, C_x1, C_x2), with all coefficients nonnegative and C_x2 >= C_x1 so
that C_x(d) stays nonnegative at every gap label. Internally C_x2 is replaced by the
nonnegative excess C_x2 - C_x1, which turns the constraints into plain bounds for
``scipy.optimize.least_squares``. The road grade is zero in every fitting campaign, and logs
with a nonzero grade are rejected.

Samples are split into training and validation sets per cluster, so every cluster with at
least two samples appears on both sides. Validation compares the predicted wheel torque
F_w R_w against the measured one through ``powertrain.normalized_residuals()``.

::

        samples = fitting.read_drive_log("drive_log.csv")
        train, validation = fitting.split(samples, fraction=0.8, seed=0)
        result = fitting.fit(train)
        residuals = fitting.validate(result, validation)
        fitting.write_fit_report(result, "fit-output")

Drive log CSV files have the header k,v,a,F_w,d_target,mode,theta, with d_target written as
"inf" for free road.
"""

import math
import os
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import kim_edn
import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from . import dynamics
from . import parameters
from . import powertrain
from .powertrain import PowertrainMode
from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

FIT_PARAMS = ("c_r", "c_v", "c_x0", "c_x1", "c_x2")
DEFAULT_INITIAL_GUESS = (0.01, 0.0, 0.3, 50.0, 100.0)
LOG_COLUMNS = ("k", "v", "a", "F_w", "d_target", "mode", "theta")

# speeds [m/s] and time gaps [s] of the track campaign
TRACK_SPEEDS = (24.6, 29.1, 33.5)
TRACK_TIME_GAPS = (0.3, 0.5, 1.0, 2.0, math.inf)

MIN_EXCESS = 1e-6
FIT_REPORT_FILE = "fit-report.edn"
FIT_TEXT_FILE = "fit-report.txt"
FIT_PARAMS_FILE = "vehicle.edn"


@dataclass(frozen=True)
class DriveLogSample:
    """One pre-cleaned drive log sample.

    Parameters
    ----------
    k : int
        sample index
    v : float
        speed [m/s]
    a : float
        acceleration [m/s^2]
    F_w : float
        wheel force [N]
    d_target : float
        nominal gap label [m], ``math.inf`` on free road
    mode : PowertrainMode
    theta : float
        road grade [rad]
    """

    k: int
    v: float
    a: float
    F_w: float
    d_target: float
    mode: PowertrainMode = PowertrainMode.FE
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", PowertrainMode.parse(self.mode))
        object.__setattr__(self, "d_target", parameters.parse_gap(self.d_target))
        for name in ("v", "a", "F_w", "theta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"Sample {self.k}: {name} must be finite, got {getattr(self, name)}")
        if not self.d_target > 0:
            raise ValueError(f"Sample {self.k}: gap label must be positive, got {self.d_target}")

    @property
    def label(self):
        return (self.d_target, self.mode)


@dataclass
class FitResult:
    """Fitted coefficients with their costs.

    ``train_cost`` is the sum of squared force residuals over the training set [N^2],
    ``per_cluster_cost`` the same sum per (d_target, mode) label.
    """

    c_r: float
    c_v: float
    c_x0: float
    c_x1: float
    c_x2: float
    train_cost: float
    initial_cost: float = math.nan
    validation_rms: float = math.nan
    per_cluster_cost: dict = field(default_factory=dict)
    converged: bool = True
    nfev: int = 0
    rank: int = len(FIT_PARAMS)
    message: str = ""

    @property
    def coefficients(self):
        return OrderedDict((name, getattr(self, name)) for name in FIT_PARAMS)

    def to_vehicle_params(self, base=None):
        """Known parameters from `base` with the fitted coefficients substituted"""
        base = base or dynamics.VehicleParams()
        return base.replace(**self.coefficients)

    def to_config(self):
        report = OrderedDict()
        report["coefficients"] = OrderedDict((k, float(v)) for k, v in self.coefficients.items())
        report["converged"] = bool(self.converged)
        report["initial-cost"] = float(self.initial_cost)
        report["message"] = self.message
        report["nfev"] = int(self.nfev)
        report["per-cluster-cost"] = [
            OrderedDict(
                [
                    ("cost", float(cost)),
                    ("d_target", parameters.format_gap(gap)),
                    ("mode", mode.value),
                ]
            )
            for (gap, mode), cost in sorted(
                self.per_cluster_cost.items(), key=lambda item: (item[0][0], item[0][1].value)
            )
        ]
        report["rank"] = int(self.rank)
        report["train-cost"] = float(self.train_cost)
        if not math.isnan(self.validation_rms):
            report["validation-rms"] = float(self.validation_rms)
        return report


def cluster(samples, labels=None):
    """Group samples by their (d_target, mode) label.

    Parameters
    ----------
    samples : list of DriveLogSample
    labels : iterable of float, optional
        declared gap labels; samples carrying any other gap raise UnknownLabelError

    Returns
    -------
    OrderedDict
        (d_target, mode) -> list of samples, in first-seen order

    Raises
    ------
    EmptyInputError
        no samples
    UnknownLabelError
        a gap label outside `labels`
    """
    if not samples:
        raise cf.EmptyInputError("Cannot cluster an empty sample list")
    allowed = None if labels is None else {parameters.parse_gap(g) for g in labels}
    clusters = OrderedDict()
    for s in samples:
        if allowed is not None and s.d_target not in allowed:
            errmsg = f"Sample {s.k} carries gap label {s.d_target}, not among {sorted(allowed)}"
            logger.error(errmsg)
            raise cf.UnknownLabelError(errmsg)
        clusters.setdefault(s.label, []).append(s)
    return clusters


def split(samples, fraction=0.8, seed=0):
    """Seeded train/validation split, stratified per cluster.

    Every cluster contributes round(fraction * n) samples to training, kept between 1 and
    n - 1 when the cluster holds at least two samples. Both sets keep the input order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"Split fraction must lie strictly between 0 and 1, got {fraction}")
    rng = np.random.default_rng(seed)
    order = {id(s): i for i, s in enumerate(samples)}
    train, validation = [], []
    for members in cluster(samples).values():
        n = len(members)
        n_train = int(round(fraction * n))
        if n >= 2:
            n_train = min(max(n_train, 1), n - 1)
        else:
            n_train = n
        perm = rng.permutation(n)
        train.extend(members[i] for i in perm[:n_train])
        validation.extend(members[i] for i in perm[n_train:])
    train.sort(key=lambda s: order[id(s)])
    validation.sort(key=lambda s: order[id(s)])
    logger.debug(f"Split {len(samples)} samples into {len(train)} train / {len(validation)} validation")
    return train, validation


def _arrays(samples):
    v = np.array([s.v for s in samples], dtype=float)
    a = np.array([s.a for s in samples], dtype=float)
    force = np.array([s.F_w for s in samples], dtype=float)
    gap = np.array([s.d_target for s in samples], dtype=float)
    theta = np.array([s.theta for s in samples], dtype=float)
    return v, a, force, gap, theta


def _predicted_force(params, v, a, gap):
    return params.mass * a + dynamics.road_load(params, dynamics.FLAT_ROAD, v, gap)


def _model_residuals(coef, base, v, a, force, gap):
    """Force residuals for the natural coefficient vector (C_r, C_v, C_x0, C_x1, C_x2)"""
    c_r, c_v, c_x0, c_x1, c_x2 = coef
    free = np.isinf(gap)
    cx = np.where(free, c_x0, c_x0 * (1.0 - c_x1 / np.where(free, 1.0, gap + c_x2)))
    drag = 0.5 * base.air_density * base.frontal_area * cx * v**2
    return force - base.mass * a - base.mass * base.gravity * c_r - c_v * v - drag


def _to_natural(q):
    c_r, c_v, c_x0, c_x1, excess = q
    return np.array([c_r, c_v, c_x0, c_x1, c_x1 + excess])


def fit(
    train,
    initial_guess=DEFAULT_INITIAL_GUESS,
    params=None,
    fixed=None,
    max_nfev=500,
    gtol=1e-8,
):
    """Box-constrained nonlinear least squares fit of the road load and drag coefficients.

    Parameters
    ----------
    train : list of DriveLogSample
    initial_guess : sequence
        (C_r, C_v, C_x0, C_x1, C_x2)
    params : dynamics.VehicleParams, optional
        known mass, wheel radius, air density, frontal area and gravity
    fixed : dict, optional
        coefficients held at given values; any of c_r, c_v, c_x0, c_x1. Holding c_x1 at
        zero also holds c_x2, which then has no influence.
    max_nfev : int
        residual evaluation cap; reaching it is reported, not raised
    gtol : float
        gradient tolerance

    Returns
    -------
    FitResult
    """
    if not train:
        raise cf.EmptyInputError("Cannot fit on an empty training set")
    base = params or dynamics.VehicleParams()
    v, a, force, gap, theta = _arrays(train)
    if np.any(theta != 0):
        errmsg = "Fitting assumes a flat road; the training set contains nonzero grades"
        logger.error(errmsg)
        raise cf.InvalidGradeError(errmsg)

    guess = np.asarray(initial_guess, dtype=float)
    if guess.shape != (len(FIT_PARAMS),) or np.any(guess < 0):
        raise ValueError(f"Initial guess must hold five nonnegative coefficients, got {initial_guess}")
    if guess[4] < guess[3]:
        raise ValueError(f"Initial guess needs c_x2 >= c_x1, got {guess[4]} < {guess[3]}")
    q0 = guess.copy()
    q0[4] = max(guess[4] - guess[3], MIN_EXCESS)

    fixed = dict(fixed or {})
    unknown = set(fixed) - set(FIT_PARAMS[:4])
    if unknown:
        raise ValueError(f"Only c_r, c_v, c_x0 and c_x1 can be held fixed, got {sorted(unknown)}")
    for name, val in fixed.items():
        q0[FIT_PARAMS.index(name)] = float(val)
    free = [i for i, name in enumerate(FIT_PARAMS) if name not in fixed]
    if fixed.get("c_x1", None) == 0:
        free.remove(4)

    def residuals(x):
        q = q0.copy()
        q[free] = x
        return _model_residuals(_to_natural(q), base, v, a, force, gap)

    lower = np.zeros(len(free))
    lower[[j for j, i in enumerate(free) if i == 4]] = MIN_EXCESS
    x0 = np.maximum(q0[free], lower)
    initial = residuals(x0)
    initial_cost = float(np.sum(initial**2))

    res = least_squares(
        residuals,
        x0,
        bounds=(lower, np.full(len(free), np.inf)),
        method="trf",
        x_scale="jac",
        ftol=1e-15,
        xtol=1e-15,
        gtol=gtol,
        max_nfev=max_nfev,
    )
    x = res.x
    cost = float(np.sum(res.fun**2))
    if cost > initial_cost:
        x, cost = x0, initial_cost

    rank = int(np.linalg.matrix_rank(res.jac)) if res.jac.size else 0
    if rank < len(free):
        msg = f"Fit is rank deficient ({rank} of {len(free)} coefficients identifiable)"
        logger.warning(msg)
        warnings.warn(msg)
    converged = res.status > 0
    if not converged:
        logger.warning(f"Fit stopped after {res.nfev} evaluations: {res.message}")

    q = q0.copy()
    q[free] = x
    coef = _to_natural(q)
    per_cluster = OrderedDict()
    final = _model_residuals(coef, base, v, a, force, gap)
    for label, members in cluster(train).items():
        mask = np.array([s.label == label for s in train])
        per_cluster[label] = float(np.sum(final[mask] ** 2))
        logger.debug(f"Cluster d_target={label[0]} mode={label[1].value}: {len(members)} samples")

    result = FitResult(
        *(float(c) for c in coef),
        train_cost=cost,
        initial_cost=initial_cost,
        per_cluster_cost=per_cluster,
        converged=converged,
        nfev=int(res.nfev),
        rank=rank,
        message=str(res.message),
    )
    logger.info(
        f"Fit finished after {res.nfev} evaluations: c_r={result.c_r:.5g} c_v={result.c_v:.5g} "
        f"c_x0={result.c_x0:.5g} c_x1={result.c_x1:.5g} c_x2={result.c_x2:.5g}"
    )
    return result


def predicted_torque(result, samples, params=None):
    """Wheel torque F_w R_w predicted by the fitted model"""
    base = result.to_vehicle_params(params)
    v, a, _, gap, _ = _arrays(samples)
    return _predicted_force(base, v, a, gap) * base.wheel_radius


def measured_torque(samples, params=None):
    base = params or dynamics.VehicleParams()
    return np.array([s.F_w for s in samples], dtype=float) * base.wheel_radius


def validation_residuals(result, validation, params=None):
    """Raw torque residuals measured - predicted [N m]"""
    if not validation:
        raise cf.EmptyInputError("Cannot validate on an empty set")
    return powertrain.raw_residuals(
        predicted_torque(result, validation, params), measured_torque(validation, params)
    )


def validate(result, validation, params=None):
    """Normalized torque residuals on the validation set; also records their raw RMS in
    ``result.validation_rms``"""
    raw = validation_residuals(result, validation, params)
    result.validation_rms = float(np.sqrt(np.mean(raw**2)))
    return powertrain.normalized_residuals(
        predicted_torque(result, validation, params), measured_torque(validation, params)
    )


def synthetic_drive_log(
    params=None,
    speeds=TRACK_SPEEDS,
    gaps=None,
    time_gaps=TRACK_TIME_GAPS,
    modes=tuple(PowertrainMode),
    samples_per_cell=20,
    speed_jitter=0.5,
    accel_range=(-0.3, 0.3),
    noise_std=0.0,
    seed=0,
):
    """Labelled drive log generated from the vehicle model.

    Labels come from `gaps` when given, otherwise from speed times time gap for every
    speed. Samples scatter uniformly around the nominal speed and over `accel_range`; the
    wheel force is M a plus the road load at the labelled gap, plus Gaussian noise of
    standard deviation `noise_std` [N].
    """
    base = params or dynamics.VehicleParams()
    rng = np.random.default_rng(seed)
    samples = []
    k = 0
    for mode in modes:
        mode = PowertrainMode.parse(mode)
        for speed in speeds:
            labels = gaps if gaps is not None else [speed * tau for tau in time_gaps]
            for gap in labels:
                gap = parameters.parse_gap(gap)
                v = speed + rng.uniform(-speed_jitter, speed_jitter, samples_per_cell)
                a = rng.uniform(accel_range[0], accel_range[1], samples_per_cell)
                force = _predicted_force(base, v, a, gap)
                if noise_std > 0:
                    force = force + rng.normal(0.0, noise_std, samples_per_cell)
                for vi, ai, fi in zip(v, a, np.atleast_1d(force)):
                    samples.append(
                        DriveLogSample(k=k, v=float(vi), a=float(ai), F_w=float(fi), d_target=gap, mode=mode)
                    )
                    k += 1
    logger.debug(f"Generated {len(samples)} synthetic drive log samples")
    return samples


def read_drive_log(path):
    """Read samples from a drive log CSV file"""
    try:
        frame = pd.read_csv(path, dtype={"mode": str, "d_target": str})
    except OSError as e:
        raise OSError(f"Could not read drive log {path}: {e}") from e
    missing = [c for c in LOG_COLUMNS if c not in frame.columns and c != "theta"]
    if missing:
        raise cf.InvalidConfigFieldError(f"Drive log {path} lacks columns {missing}")
    if "theta" not in frame.columns:
        frame["theta"] = 0.0
    if frame.empty:
        raise cf.EmptyInputError(f"Drive log {path} holds no samples")
    return [
        DriveLogSample(
            k=int(row.k),
            v=float(row.v),
            a=float(row.a),
            F_w=float(row.F_w),
            d_target=parameters.parse_gap(row.d_target),
            mode=row.mode,
            theta=float(row.theta),
        )
        for row in frame.itertuples(index=False)
    ]


def write_drive_log(samples, path):
    frame = pd.DataFrame(
        {
            "k": [s.k for s in samples],
            "v": [s.v for s in samples],
            "a": [s.a for s in samples],
            "F_w": [s.F_w for s in samples],
            "d_target": [parameters.format_gap(s.d_target) for s in samples],
            "mode": [s.mode.value for s in samples],
            "theta": [s.theta for s in samples],
        },
        columns=list(LOG_COLUMNS),
    )
    try:
        frame.to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise OSError(f"Could not write drive log {path}: {e}") from e


def format_report(result):
    """Plain text summary of a fit"""
    lines = ["Road load and drag fit", ""]
    for name, val in result.coefficients.items():
        lines.append(f"  {name:<6} = {val:.6g}")
    lines.append("")
    lines.append(f"  train cost      = {result.train_cost:.6g} N^2 (initial {result.initial_cost:.6g})")
    if not math.isnan(result.validation_rms):
        lines.append(f"  validation RMS  = {result.validation_rms:.6g} N m")
    lines.append(f"  evaluations     = {result.nfev}, converged: {result.converged}")
    lines.append(f"  rank            = {result.rank}")
    lines.append("")
    lines.append("  cluster cost")
    for (gap, mode), cost in result.per_cluster_cost.items():
        lines.append(f"    d_target={parameters.format_gap(gap)} mode={mode.value}: {cost:.6g}")
    return "\n".join(lines) + "\n"


def write_fit_report(result, out_dir, params=None):
    """Write the fitted vehicle parameters, an edn report and a text report into `out_dir`"""
    os.makedirs(out_dir, exist_ok=True)
    dynamics.write_vehicle_params(
        result.to_vehicle_params(params), os.path.join(out_dir, FIT_PARAMS_FILE)
    )
    dest = os.path.join(out_dir, FIT_REPORT_FILE)
    try:
        with open(dest, "w") as f:
            kim_edn.dump(result.to_config(), f, indent=4)
        with open(os.path.join(out_dir, FIT_TEXT_FILE), "w") as f:
            f.write(format_report(result))
    except OSError as e:
        raise OSError(f"Could not write fit report to {out_dir}: {e}") from e
    logger.info(f"Fit report written to {out_dir}")
