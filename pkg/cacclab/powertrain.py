"""This module converts wheel torque and speed into battery and fuel power for the two operating
modes of a pre-transmission hybrid powertrain, integrates them over trajectories, and looks up
measured or model-derived energy savings of a following vehicle.

In full electric mode (FE) only the motor propels the vehicle and the battery also feeds the
auxiliary load P_a; in full combustion mode (FC) only the engine does:

    FE:  P_b = T_w w_w / eta_m(T_w / r_g, w_w r_g) + P_a,   P_f = P_a
    FC:  P_b = 0,                                        P_f = T_w w_w / eta_e(T_w / r_g, w_w r_g)

The model only covers positive wheel torque and speed. Outside that region the prime mover term
is zero, so regeneration is not credited.

Efficiency maps are either constants or rectilinear grids read from CSV files whose first row
holds the axle speed axis [rad/s] and first column the axle torque axis [N m]. Savings tables
use the same layout with speed [m/s] down the first column and time gap [s] along the first row,
one file per mode.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator

from . import dynamics
from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")


class PowertrainMode(enum.Enum):
    FE = "FE"
    FC = "FC"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError as e:
            raise ValueError(f"Powertrain mode must be FE or FC, got {value!r}") from e


def _strictly_increasing(axis):
    axis = np.asarray(axis, dtype=float)
    return axis.ndim == 1 and axis.size >= 2 and np.all(np.diff(axis) > 0)


def _read_grid_csv(path):
    """Read a CSV grid: first row is the column axis, first column the row axis"""
    try:
        frame = pd.read_csv(path, index_col=0)
    except OSError as e:
        raise OSError(f"Could not read grid file {path}: {e}") from e
    rows = frame.index.to_numpy(dtype=float)
    cols = np.array([float(c) for c in frame.columns])
    return rows, cols, frame.to_numpy(dtype=float)


class EfficiencyMap:
    """Efficiency as a function of axle torque [N m] and axle speed [rad/s].

    Parameters
    ----------
    constant : float, optional
        efficiency used everywhere
    torque_axis, speed_axis : array, optional
        strictly increasing grid axes
    values : array, optional
        efficiencies, shape (len(torque_axis), len(speed_axis)), all in (0, 1]
    extrapolate : bool
        hold the edge values outside the grid instead of raising
    """

    def __init__(
        self,
        constant=None,
        torque_axis=None,
        speed_axis=None,
        values=None,
        extrapolate=False,
        name="efficiency",
    ):
        self.name = name
        self.extrapolate = extrapolate
        if constant is not None:
            if not 0 < constant <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {constant}")
            self.constant = float(constant)
            self._interp = None
            return

        if not (_strictly_increasing(torque_axis) and _strictly_increasing(speed_axis)):
            raise ValueError(f"{name} map axes must be strictly increasing with at least two nodes")
        values = np.asarray(values, dtype=float)
        if values.shape != (len(torque_axis), len(speed_axis)):
            raise ValueError(
                f"{name} map has shape {values.shape}, axes need "
                f"({len(torque_axis)}, {len(speed_axis)})"
            )
        if not np.all((values > 0) & (values <= 1)):
            raise ValueError(f"{name} map values must lie in (0, 1]")
        self.constant = None
        self.torque_axis = np.asarray(torque_axis, dtype=float)
        self.speed_axis = np.asarray(speed_axis, dtype=float)
        self.values = values
        self._interp = RegularGridInterpolator(
            (self.torque_axis, self.speed_axis), values, method="linear"
        )

    @classmethod
    def from_csv(cls, path, extrapolate=False, name="efficiency"):
        torque_axis, speed_axis, values = _read_grid_csv(path)
        logger.debug(f"{name} map read from {path} ({values.shape[0]}x{values.shape[1]})")
        return cls(
            torque_axis=torque_axis,
            speed_axis=speed_axis,
            values=values,
            extrapolate=extrapolate,
            name=name,
        )

    @classmethod
    def from_config(cls, value, name="efficiency"):
        """A number is a constant efficiency, a string the path of a CSV map"""
        if isinstance(value, str):
            return cls.from_csv(value, name=name)
        return cls(constant=float(value), name=name)

    def __call__(self, torque, speed):
        torque = np.asarray(torque, dtype=float)
        speed = np.asarray(speed, dtype=float)
        if self._interp is None:
            return np.full(np.broadcast(torque, speed).shape, self.constant)[()]

        torque, speed = np.broadcast_arrays(torque, speed)
        lo_t, hi_t = self.torque_axis[[0, -1]]
        lo_s, hi_s = self.speed_axis[[0, -1]]
        outside = (torque < lo_t) | (torque > hi_t) | (speed < lo_s) | (speed > hi_s)
        if np.any(outside):
            if not self.extrapolate:
                errmsg = (
                    f"{self.name} lookup outside map domain "
                    f"(torque [{lo_t}, {hi_t}], speed [{lo_s}, {hi_s}])"
                )
                logger.error(errmsg)
                raise cf.EfficiencyMapDomainError(errmsg)
            torque = np.clip(torque, lo_t, hi_t)
            speed = np.clip(speed, lo_s, hi_s)
        pts = np.stack([torque.ravel(), speed.ravel()], axis=-1)
        return self._interp(pts).reshape(torque.shape)[()]

    def __repr__(self):
        if self._interp is None:
            return f"EfficiencyMap(constant={self.constant})"
        return f"EfficiencyMap({self.values.shape[0]}x{self.values.shape[1]} grid)"


@dataclass(frozen=True)
class PowertrainConfig:
    gear_ratio: float = 1.0
    aux_power: float = 500.0
    eta_m: EfficiencyMap = field(default_factory=lambda: EfficiencyMap(0.90, name="eta_m"))
    eta_e: EfficiencyMap = field(default_factory=lambda: EfficiencyMap(0.36, name="eta_e"))

    def __post_init__(self):
        if not self.gear_ratio > 0:
            raise ValueError(f"gear_ratio must be positive, got {self.gear_ratio}")
        if not self.aux_power >= 0:
            raise ValueError(f"aux_power must be nonnegative, got {self.aux_power}")

    @classmethod
    def from_config(cls, section):
        return cls(
            gear_ratio=float(section["gear_ratio"]),
            aux_power=float(section["aux_power"]),
            eta_m=EfficiencyMap.from_config(section["eta_m"], name="eta_m"),
            eta_e=EfficiencyMap.from_config(section["eta_e"], name="eta_e"),
        )


def instantaneous_power(cfg, mode, torque, omega):
    """Battery and fuel power for wheel torque `torque` [N m] at wheel speed `omega` [rad/s].

    Accepts scalars or arrays.

    Returns
    -------
    tuple
        (P_b, P_f) in W
    """
    mode = PowertrainMode.parse(mode)
    torque = np.asarray(torque, dtype=float)
    omega = np.asarray(omega, dtype=float)
    torque, omega = np.broadcast_arrays(torque, omega)
    driving = (torque > 0) & (omega > 0)
    wheel = np.where(driving, torque * omega, 0.0)

    prime = np.zeros_like(wheel)
    if np.any(driving):
        eta = cfg.eta_m if mode is PowertrainMode.FE else cfg.eta_e
        eff = np.asarray(eta(torque[driving] / cfg.gear_ratio, omega[driving] * cfg.gear_ratio))
        prime[driving] = wheel[driving] / eff

    if mode is PowertrainMode.FE:
        p_b = prime + cfg.aux_power
        p_f = np.full_like(wheel, cfg.aux_power)
    else:
        p_b = np.zeros_like(wheel)
        p_f = prime
    return p_b[()], p_f[()]


def _power_columns(log):
    if hasattr(log, "power_columns"):
        return log.power_columns()
    return (
        np.asarray(log["t"], dtype=float),
        np.asarray(log["T_w"], dtype=float),
        np.asarray(log["omega_w"], dtype=float),
    )


def trajectory_energy(cfg, mode, log):
    """Integrate wheel, battery and fuel power over a trajectory with the trapezoidal rule.

    Parameters
    ----------
    cfg : PowertrainConfig
    mode : PowertrainMode
    log : TrajectoryLog or DataFrame
        anything with columns t, T_w and omega_w, or a ``power_columns()`` method

    Returns
    -------
    tuple
        (E_wheel, E_b, E_f) in J; only positive wheel power is counted

    Raises
    ------
    EmptyLogError
        the log has no samples
    """
    t, torque, omega = _power_columns(log)
    if t.size == 0:
        raise cf.EmptyLogError("Cannot integrate energy over an empty log")
    if t.size > 1:
        dt = np.diff(t)
        if not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-9):
            raise ValueError("Energy integration needs a uniform time base")
    wheel = np.maximum(torque * omega, 0.0)
    p_b, p_f = instantaneous_power(cfg, mode, torque, omega)
    p_b = np.broadcast_to(p_b, t.shape)
    p_f = np.broadcast_to(p_f, t.shape)
    if t.size == 1:
        return 0.0, 0.0, 0.0
    return (
        float(trapezoid(wheel, t)),
        float(trapezoid(p_b, t)),
        float(trapezoid(p_f, t)),
    )


def raw_residuals(predicted, measured):
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.shape != measured.shape:
        raise ValueError(
            f"Predicted and measured series differ in length ({predicted.size} vs {measured.size})"
        )
    return measured - predicted


def normalized_residuals(predicted, measured):
    """Residuals divided by their RMS, so that the output has unit RMS.

    Raises
    ------
    DegenerateResidualError
        fewer than two samples, or all residuals zero
    """
    res = raw_residuals(predicted, measured)
    if res.size < 2:
        raise cf.DegenerateResidualError(
            f"Normalized residuals need at least two samples, got {res.size}"
        )
    rms = float(np.sqrt(np.mean(res**2)))
    if rms == 0.0:
        raise cf.DegenerateResidualError("Residual RMS is zero; nothing to normalize")
    return res / rms


class SavingsTable:
    """Fractional energy saving of a follower against a lone vehicle, per mode.

    Parameters
    ----------
    speeds : array
        strictly increasing speed axis [m/s]
    time_gaps : array
        strictly increasing finite time gap axis [s]
    values : dict
        PowertrainMode -> array of shape (len(speeds), len(time_gaps))
    source : str
        "measured" or "model-derived", carried into reports
    """

    def __init__(self, speeds, time_gaps, values, source="measured"):
        speeds = np.asarray(speeds, dtype=float)
        time_gaps = np.asarray(time_gaps, dtype=float)
        if not (_strictly_increasing(speeds) and _strictly_increasing(time_gaps)):
            raise ValueError("Savings table axes must be strictly increasing with at least two nodes")
        if not np.all(np.isfinite(time_gaps)):
            raise ValueError("Savings table time gap axis must be finite")
        self.speeds = speeds
        self.time_gaps = time_gaps
        self.source = source
        self.values = {}
        self._interp = {}
        for mode, grid in values.items():
            mode = PowertrainMode.parse(mode)
            grid = np.asarray(grid, dtype=float)
            if grid.shape != (speeds.size, time_gaps.size):
                raise ValueError(
                    f"Savings grid for {mode.value} has shape {grid.shape}, "
                    f"expected ({speeds.size}, {time_gaps.size})"
                )
            self.values[mode] = grid
            self._interp[mode] = RegularGridInterpolator(
                (speeds, time_gaps), grid, method="linear"
            )

    @property
    def modes(self):
        return sorted(self.values, key=lambda m: m.value)

    @classmethod
    def from_csv(cls, paths, source="measured"):
        """Read one CSV per mode, given as a dict mode -> path.

        A column headed "inf" is accepted and dropped: the saving at infinite time gap is
        zero by convention.
        """
        speeds = time_gaps = None
        values = {}
        for mode, path in paths.items():
            rows, cols, grid = _read_grid_csv(path)
            finite = np.isfinite(cols)
            if not np.all(finite) and np.any(grid[:, ~finite] != 0):
                logger.warning(f"Nonzero savings at infinite time gap in {path} ignored")
            rows, cols, grid = rows, cols[finite], grid[:, finite]
            if speeds is None:
                speeds, time_gaps = rows, cols
            elif not (np.array_equal(rows, speeds) and np.array_equal(cols, time_gaps)):
                raise ValueError(f"Savings table {path} does not share the axes of the other modes")
            values[mode] = grid
        return cls(speeds, time_gaps, values, source=source)

    def to_csv(self, mode, path):
        mode = PowertrainMode.parse(mode)
        frame = pd.DataFrame(
            self.values[mode],
            index=pd.Index(self.speeds, name="speed"),
            columns=[repr(float(g)) for g in self.time_gaps],
        )
        try:
            frame.to_csv(path, float_format="%.10g")
        except OSError as e:
            raise OSError(f"Could not write savings table {path}: {e}") from e


def energy_saving_lookup(table, speed, time_gap, mode):
    """Bilinear lookup of the saving fraction at (speed, time gap), clamped to [-1, 1].

    Raises
    ------
    OutOfTableError
        the query lies outside the table hull
    """
    mode = PowertrainMode.parse(mode)
    if mode not in table.values:
        raise cf.OutOfTableError(f"Savings table has no {mode.value} surface")
    if math.isinf(time_gap) and time_gap > 0:
        return 0.0
    if not (
        table.speeds[0] <= speed <= table.speeds[-1]
        and table.time_gaps[0] <= time_gap <= table.time_gaps[-1]
    ):
        errmsg = (
            f"Savings lookup at speed {speed} m/s, time gap {time_gap} s lies outside the table "
            f"([{table.speeds[0]}, {table.speeds[-1]}] x [{table.time_gaps[0]}, {table.time_gaps[-1]}])"
        )
        logger.error(errmsg)
        raise cf.OutOfTableError(errmsg)
    val = float(table._interp[mode]([[speed, time_gap]])[0])
    return float(np.clip(val, -1.0, 1.0))


def model_savings_table(
    params, cfg, speeds, time_gaps, road=dynamics.FLAT_ROAD, modes=tuple(PowertrainMode)
):
    """Savings table derived from the drag and powertrain models at steady state.

    The saving at (v, tau) compares the consumed power of a follower holding speed v at gap
    v * tau with the same vehicle on a free road.
    """
    speeds = np.asarray(speeds, dtype=float)
    time_gaps = np.asarray(time_gaps, dtype=float)
    values = {}
    for mode in modes:
        mode = PowertrainMode.parse(mode)
        grid = np.empty((speeds.size, time_gaps.size))
        for i, v in enumerate(speeds):
            omega = v / params.wheel_radius
            lone = instantaneous_power(
                cfg, mode, dynamics.steady_torque(params, road, v, dynamics.FREE_ROAD), omega
            )
            for j, tau in enumerate(time_gaps):
                follow = instantaneous_power(
                    cfg, mode, dynamics.steady_torque(params, road, v, v * tau), omega
                )
                k = 0 if mode is PowertrainMode.FE else 1
                grid[i, j] = 1.0 - float(follow[k]) / float(lone[k])
        values[mode] = grid
    logger.debug(
        f"Model-derived savings table over {speeds.size} speeds x {time_gaps.size} time gaps"
    )
    return SavingsTable(speeds, time_gaps, values, source="model-derived")
