"""Simulated predecessor-following V2V link.

At every controller step t the front vehicle broadcasts a message describing its state h
steps earlier (position and speed at t - h), the bounds of its acceleration, and a forecast of
its acceleration for the N_T + 1 steps starting at t - h. The forecast is trusted: within the
trust window it equals the acceleration the front vehicle actually realizes. The receiver
reads the gap and front speed from the message with a bounded, uniformly distributed
measurement error.

Without connectivity (radar-only ACC) the delayed states are still measured, but the message
carries no forecast and no bounds, and the controller falls back to its own conservative
assumption about front braking.

Delays are whole controller steps. A time-varying latency is represented by its upper bound.

Noise draws come from a counter-based generator keyed by (seed, step, channel), so that a run
is reproducible and the two measurement channels are independent of each other.
"""

from dataclasses import dataclass

import numpy as np

from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

DISTANCE_CHANNEL = 0
SPEED_CHANNEL = 1
FORECAST_TOL = 1e-9


@dataclass(frozen=True)
class ChannelConfig:
    h_steps: int = 0
    n_d_max: float = 0.0
    n_vf_max: float = 0.0
    seed: int = 0
    connected: bool = True
    trust_horizon: int = 0

    def __post_init__(self):
        if self.h_steps < 0 or int(self.h_steps) != self.h_steps:
            raise ValueError(f"Delay must be a nonnegative whole number of steps, got {self.h_steps}")
        if self.n_d_max < 0 or self.n_vf_max < 0:
            raise ValueError(
                f"Noise bounds must be nonnegative, got n_d_max={self.n_d_max}, n_vf_max={self.n_vf_max}"
            )
        if self.trust_horizon < 0:
            raise ValueError(f"Trust horizon must be nonnegative, got {self.trust_horizon}")
        if self.seed < 0:
            raise ValueError(f"Seed must be nonnegative, got {self.seed}")

    @classmethod
    def from_config(cls, section):
        return cls(
            h_steps=int(section["h_steps"]),
            n_d_max=float(section["n_d_max"]),
            n_vf_max=float(section["n_vf_max"]),
            seed=int(section["seed"]),
            connected=bool(section["connected"]),
            trust_horizon=int(section["trust_horizon"]),
        )


@dataclass(frozen=True)
class V2VMessage:
    """Message received at step stamp + h, describing the front vehicle at step `stamp`"""

    s_f: float
    v_f: float
    a_bounds: tuple = None
    forecast: tuple = ()
    trust_horizon: int = 0
    stamp: int = 0

    def __post_init__(self):
        if self.trust_horizon < 0:
            raise ValueError(f"Trust horizon must be nonnegative, got {self.trust_horizon}")
        if self.a_bounds is None:
            if self.forecast:
                raise ValueError("A message without acceleration bounds cannot carry a forecast")
            return
        if len(self.forecast) != self.trust_horizon + 1:
            raise ValueError(
                f"Forecast holds {len(self.forecast)} values, trust horizon {self.trust_horizon} needs "
                f"{self.trust_horizon + 1}"
            )
        lo, hi = self.a_bounds
        for a in self.forecast:
            if not lo - FORECAST_TOL <= a <= hi + FORECAST_TOL:
                raise ValueError(f"Forecast acceleration {a} outside bounds [{lo}, {hi}]")

    @property
    def connected(self):
        return self.a_bounds is not None


@dataclass(frozen=True)
class Observation:
    """Noisy delayed gap and front speed, valid at step `stamp`"""

    d: float
    v_f: float
    stamp: int


class FrontTrajectory:
    """Realized motion of the front vehicle.

    The front vehicle drives at `v0` and follows a list of acceleration events
    (t_start, t_end, accel), holding the commanded acceleration during [t_start, t_end).
    Its speed is clamped at zero, and the realized accelerations (what the V2V forecast
    carries) account for the clamp. Before step 0 the vehicle is assumed to have cruised at
    `v0` for `prehistory` steps, so delayed messages exist from the start.

    Parameters
    ----------
    v0 : float
        initial speed [m/s]
    t_s : float
        step length [s]
    n_steps : int
        number of simulated steps
    events : list
        acceleration events [t_start, t_end, accel] in seconds and m/s^2
    s0 : float
        position at step 0 [m]
    prehistory : int
        number of constant-speed steps before step 0
    lookahead : int
        extra steps simulated after the end, so forecasts near the end are available
    """

    def __init__(self, v0, t_s, n_steps, events=(), s0=0.0, prehistory=0, lookahead=0):
        if v0 < 0:
            raise ValueError(f"Front speed must be nonnegative, got {v0}")
        self.t_s = float(t_s)
        self.prehistory = int(prehistory)
        self.events = [tuple(float(x) for x in e) for e in events]
        total = self.prehistory + int(n_steps) + int(lookahead) + 1

        # index i corresponds to step i - prehistory
        command = np.zeros(total)
        times = (np.arange(total) - self.prehistory) * self.t_s
        for t_start, t_end, accel in self.events:
            active = (times >= t_start - 1e-9) & (times < t_end - 1e-9)
            command[active] = accel

        v = np.empty(total + 1)
        s = np.empty(total + 1)
        accel = np.empty(total)
        v[0] = v0
        s[0] = s0 - self.prehistory * self.t_s * v0
        for i in range(total):
            if i < self.prehistory:
                command[i] = 0.0
            v[i + 1] = max(v[i] + self.t_s * command[i], 0.0)
            accel[i] = (v[i + 1] - v[i]) / self.t_s
            s[i + 1] = s[i] + self.t_s * v[i]
        self._v = v
        self._s = s
        self._accel = accel

    def _index(self, k):
        i = int(k) + self.prehistory
        if i < 0:
            raise cf.InsufficientHistoryError(
                f"Front history starts at step {-self.prehistory}, step {k} requested"
            )
        return i

    def speed(self, k):
        return float(self._v[self._index(k)])

    def position(self, k):
        return float(self._s[self._index(k)])

    def accel(self, k):
        i = self._index(k)
        if i >= self._accel.size:
            return 0.0
        return float(self._accel[i])

    def last_step(self):
        return self._accel.size - self.prehistory - 1


def emit(front, t, cfg, a_bounds, trust_horizon=None):
    """Build the message the front vehicle's data produce at step `t`.

    Parameters
    ----------
    front : FrontTrajectory
    t : int
        current step
    cfg : ChannelConfig
    a_bounds : tuple
        (a_min, a_max) announced in the message, the bounds the controller is configured with
    trust_horizon : int, optional
        overrides cfg.trust_horizon

    Raises
    ------
    InsufficientHistoryError
        the front history does not reach back to t - h
    """
    n_t = cfg.trust_horizon if trust_horizon is None else int(trust_horizon)
    stamp = int(t) - cfg.h_steps
    s_f = front.position(stamp)
    v_f = front.speed(stamp)
    if not cfg.connected:
        return V2VMessage(s_f=s_f, v_f=v_f, a_bounds=None, forecast=(), trust_horizon=0, stamp=stamp)
    forecast = tuple(front.accel(stamp + j) for j in range(n_t + 1))
    return V2VMessage(
        s_f=s_f,
        v_f=v_f,
        a_bounds=(float(a_bounds[0]), float(a_bounds[1])),
        forecast=forecast,
        trust_horizon=n_t,
        stamp=stamp,
    )


def noise_generator(seed, step, channel):
    """Independent generator for one (seed, step, channel) triple"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(step), int(channel)])))


def bounded_noise(bound, seed, step, channel):
    if bound == 0:
        return 0.0
    return float(noise_generator(seed, step, channel).uniform(-bound, bound))


def receive(msg, ego_position_at_stamp, cfg, step=None):
    """Delayed gap and front speed as the ego vehicle reads them.

    Parameters
    ----------
    msg : V2VMessage
    ego_position_at_stamp : float
        ego position at step msg.stamp [m]
    cfg : ChannelConfig
    step : int, optional
        counter keying the noise draw, by default msg.stamp + h

    Returns
    -------
    Observation
        d = gap at the stamp + uniform noise in [-n_d_max, n_d_max],
        v_f = front speed at the stamp + uniform noise in [-n_vf_max, n_vf_max]
    """
    step = msg.stamp + cfg.h_steps if step is None else step
    # the counter must be nonnegative
    counter = max(int(step), 0)
    gap = msg.s_f - ego_position_at_stamp
    n_d = bounded_noise(cfg.n_d_max, cfg.seed, counter, DISTANCE_CHANNEL)
    n_vf = bounded_noise(cfg.n_vf_max, cfg.seed, counter, SPEED_CHANNEL)
    return Observation(d=float(gap + n_d), v_f=float(msg.v_f + n_vf), stamp=msg.stamp)
