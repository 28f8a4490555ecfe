"""This module holds the vehicle parameters, the distance-dependent air drag model and the
discrete-time longitudinal dynamics shared by the plant simulator and the controller.

The drag coefficient of a follower at gap d behind another vehicle is

    C_x(d) = C_x0 * (1 - C_x1 / (d + C_x2))

which increases monotonically towards the free-road value C_x0. A vehicle with nothing in
front of it is described by the gap ``FREE_ROAD`` (positive infinity); the drag model is then
bypassed and C_x0 is returned directly.

The state of the two-vehicle system is ``PlatoonState(d, v, v_f)``: the gap, the ego speed
and the front speed. ``step()`` advances it by one explicit Euler step of length t_s with the
drag evaluated at the gap at the start of the step, and clamps both speeds at zero.

All functions are pure, and the numeric ones accept numpy arrays as well as scalars.
Units are SI throughout.

::

        params = dynamics.VehicleParams()
        x = dynamics.PlatoonState(d=50.0, v=15.0, v_f=25.0)
        torque = dynamics.steady_torque(params, dynamics.FLAT_ROAD, 15.0, 50.0)
        x_next = dynamics.step(params, dynamics.FLAT_ROAD, x, torque, 0.0, 0.2)
"""

import dataclasses
import math
from dataclasses import dataclass

import kim_edn
import numpy as np

from . import parameters
from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

FREE_ROAD = math.inf

VEHICLE_KEYS = (
    "mass",
    "wheel_radius",
    "air_density",
    "frontal_area",
    "c_r",
    "c_v",
    "c_x0",
    "c_x1",
    "c_x2",
    "gravity",
)


@dataclass(frozen=True)
class VehicleParams:
    """Known and fitted parameters of one vehicle.

    Defaults are the values of the hybrid test vehicle the drag model was identified on.
    """

    mass: float = 1844.0
    wheel_radius: float = 0.288
    air_density: float = 1.206
    frontal_area: float = 2.629
    c_r: float = 0.0093
    c_v: float = 0.0
    c_x0: float = 0.3350
    c_x1: float = 68.3193
    c_x2: float = 142.4522
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mass", "wheel_radius", "air_density", "frontal_area", "gravity"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise cf.InvalidVehicleParamsError(f"{name} must be positive, got {val}")
        for name in ("c_r", "c_v", "c_x0", "c_x1"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise cf.InvalidVehicleParamsError(f"{name} must be nonnegative, got {val}")
        # C_x(d) > 0 for every d >= 0
        if not (np.isfinite(self.c_x2) and self.c_x2 > self.c_x1):
            raise cf.InvalidVehicleParamsError(
                f"c_x2 ({self.c_x2}) must exceed c_x1 ({self.c_x1}) for a positive drag coefficient"
            )

    @classmethod
    def from_config(cls, section):
        """Build from a flat dict of vehicle keys, ignoring the road grade"""
        return cls(**{k: float(section[k]) for k in VEHICLE_KEYS if k in section})

    def to_config(self):
        return {k: float(getattr(self, k)) for k in VEHICLE_KEYS}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PlatoonState:
    """Gap [m], ego speed [m/s] and front speed [m/s]"""

    d: float
    v: float
    v_f: float

    def __post_init__(self):
        if self.v < 0 or self.v_f < 0:
            raise ValueError(f"Speeds must be nonnegative, got v={self.v}, v_f={self.v_f}")

    def as_array(self):
        return np.array([self.d, self.v, self.v_f], dtype=float)


@dataclass(frozen=True)
class RoadProfile:
    """Road grade [rad], constant over a prediction horizon"""

    theta: float = 0.0

    def __post_init__(self):
        if not abs(self.theta) < math.pi / 2:
            raise cf.InvalidGradeError(f"Road grade must lie in (-pi/2, pi/2), got {self.theta}")

    @classmethod
    def from_config(cls, section):
        return cls(theta=float(section.get("theta", 0.0)))


FLAT_ROAD = RoadProfile(0.0)


def _out(val):
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


def drag_coefficient(params, d):
    """Air drag coefficient at gap `d`.

    Parameters
    ----------
    params : VehicleParams
    d : float or array
        gap to the front vehicle [m], ``FREE_ROAD`` when there is none

    Returns
    -------
    float or array
        C_x0 * (1 - C_x1 / (d + C_x2)), or C_x0 at an infinite gap

    Raises
    ------
    DragDomainError
        d + C_x2 <= 0
    """
    d = np.asarray(d, dtype=float)
    free = np.isinf(d) & (d > 0)
    denom = np.where(free, 1.0, d + params.c_x2)
    if np.any(np.isnan(d)) or np.any(denom <= 0):
        errmsg = f"Drag model undefined at gap {d} (d + c_x2 must be positive)"
        logger.error(errmsg)
        raise cf.DragDomainError(errmsg)
    cx = np.where(free, params.c_x0, params.c_x0 * (1.0 - params.c_x1 / denom))
    return _out(cx)


def grade_force(params, road):
    """Gravity and rolling resistance, M g (sin(theta) + C_r cos(theta))"""
    return params.mass * params.gravity * (
        math.sin(road.theta) + params.c_r * math.cos(road.theta)
    )


def drag_force(params, v, d=FREE_ROAD):
    """Aerodynamic force 1/2 rho A C_x(d) v^2"""
    v = np.asarray(v, dtype=float)
    return _out(
        0.5 * params.air_density * params.frontal_area * drag_coefficient(params, d) * v**2
    )


def road_load(params, road, v, d=FREE_ROAD):
    """Total resistive force [N] at speed `v` and gap `d`"""
    v = np.asarray(v, dtype=float)
    return _out(grade_force(params, road) + params.c_v * v + drag_force(params, v, d))


def steady_torque(params, road, v, d=FREE_ROAD):
    """Wheel torque [N m] that holds speed `v` constant at gap `d`"""
    return _out(np.asarray(road_load(params, road, v, d)) * params.wheel_radius)


def step(params, road, x, torque, a_f, t_s):
    """Advance the platoon state by one step.

    Parameters
    ----------
    params : VehicleParams
    road : RoadProfile
    x : PlatoonState
        state at the start of the step
    torque : float
        ego wheel torque [N m]
    a_f : float
        front vehicle acceleration over the step [m/s^2]
    t_s : float
        step length [s]

    Returns
    -------
    PlatoonState
        d' = d + t_s (v_f - v), v' = (v + t_s/M (T/R_w - road load at d))^+,
        v_f' = (v_f + t_s a_f)^+
    """
    if not t_s > 0:
        raise ValueError(f"Step length must be positive, got {t_s}")
    d_next = x.d + t_s * (x.v_f - x.v)
    accel = (torque / params.wheel_radius - road_load(params, road, x.v, x.d)) / params.mass
    v_next = max(x.v + t_s * accel, 0.0)
    v_f_next = max(x.v_f + t_s * a_f, 0.0)
    return PlatoonState(d=float(d_next), v=float(v_next), v_f=float(v_f_next))


def load_vehicle_params(path):
    """Read vehicle parameters from an edn file.

    The file either holds the flat vehicle keys directly (as written by
    ``write_vehicle_params()`` and by the fit) or a full experiment configuration, in
    which case its ``vehicle`` section is used. Missing keys keep their defaults.
    """
    try:
        with open(path, "r") as f:
            data = kim_edn.load(f)
    except OSError as e:
        raise OSError(f"Could not read vehicle parameters {path}: {e}") from e
    if "vehicle" in data:
        data = data["vehicle"]
    parameters.validate_config({"vehicle": data})
    return VehicleParams.from_config(data)


def write_vehicle_params(params, path):
    try:
        with open(path, "w") as outfile:
            kim_edn.dump(params.to_config(), outfile, indent=4)
    except OSError as e:
        raise OSError(f"Could not write vehicle parameters {path}: {e}") from e
