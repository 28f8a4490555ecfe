"""This module runs the closed-loop experiments: a front vehicle at constant speed (optionally
with braking or acceleration events), an ego vehicle under the CACC controller behind it,
and one run per value of a single swept setting:

* ``h``: measurement delay in steps
* ``a_min``: assumed worst-case front braking [m/s^2]
* ``n_t``: trust horizon of the V2V acceleration forecast in steps
* ``noise``: bound of the uniform gap [m] and front speed [m/s] measurement noise

Every other setting comes from the experiment configuration, whose defaults reproduce the
reference setup (horizon 20, t_s = 0.2 s, d_min = 5 m, v_max = 40 m/s, wheel torque in
[-2500, 1083] N m, no delay, a_min = -6 m/s^2, no forecast, no noise).

A run produces a ``TrajectoryLog``. The front vehicle driving alone, with free-road drag,
is the baseline every run is compared against. ``energy_report()`` integrates wheel,
battery and fuel energy over each run's steady-state window (the period after the gap has
settled, see ``detect_steady_state()``) and divides it by the baseline energy over a window
of the same length. ``export()`` writes trajectories, the report, plot data and solver
diagnostics into a run directory with a provenance record.

Runs are independent and deterministic per seed; with WORKERS > 1 they are spread over a
process pool. Invariant families are computed once per a_min in the parent process and
picked up from the cache by the workers.

::

        conf = parameters.load_config("experiment.edn")
        scenario = scenarios.ScenarioConfig.from_config(conf)
        logs = scenarios.run(scenario, conf)
        runs, baseline = scenarios.split_baseline(logs)
        pt_cfg = powertrain.PowertrainConfig.from_config(conf["powertrain"])
        report = scenarios.energy_report(runs, baseline, pt_cfg)
        scenarios.export(logs, report, "runs/h-sweep", conf)
"""

import dataclasses
import math
import os
import re
import shutil
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import kim_edn
import numpy as np
import pandas as pd

from . import controller
from . import dynamics
from . import invariant
from . import parameters
from . import powertrain
from . import v2v
from .src import config as cf
from .src import provenance
from .src.logger import logging

logger = logging.getLogger("cacclab")

SWEEPS = ("h", "a_min", "n_t", "noise")
SWEEP_ALIASES = {"n_max": "noise", "N_T": "n_t", "nt": "n_t"}

LOG_COLUMNS = ("t", "d", "v", "v_f", "T_w", "P_wheel")
DIAGNOSTIC_COLUMNS = ("t", "status", "iterations")

STEADY_SPAN = 5.0
STEADY_THRESHOLD = 0.05

RUN_FILE = "run.edn"
CONFIG_FILE = "config.edn"
REPORT_FILE = "report.csv"
TRAJECTORY_DIR = "trajectories"
DIAGNOSTICS_DIR = "diagnostics"
PLOT_DIR = "plot-data"
BASELINE_LABEL = "front"

FLOAT_FORMAT = "%.10g"


def normalize_sweep(name):
    name = SWEEP_ALIASES.get(name, name)
    if name not in SWEEPS:
        raise cf.InvalidScenarioError(f"Sweep variable must be one of {SWEEPS}, got {name!r}")
    return name


@dataclass(frozen=True)
class ScenarioConfig:
    """Initial conditions, duration and the swept setting of an experiment.

    Parameters
    ----------
    duration : float
        simulated time [s]
    t_s : float
        step length [s]
    front_speed, ego_speed : float
        initial speeds [m/s]
    gap : float
        initial gap [m]
    sweep : str
        one of h, a_min, n_t, noise
    values : tuple
        values of the swept setting, in report order
    events : tuple
        front acceleration events (t_start, t_end, accel)
    seeds : tuple
        noise seeds; each sweep value is run once per seed
    """

    duration: float = 60.0
    t_s: float = 0.2
    front_speed: float = 25.0
    ego_speed: float = 15.0
    gap: float = 50.0
    sweep: str = "h"
    values: tuple = (0, 1, 2)
    events: tuple = ()
    seeds: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "sweep", normalize_sweep(self.sweep))
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "events", tuple(tuple(float(x) for x in e) for e in self.events))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.duration > 0:
            raise cf.InvalidScenarioError(f"Scenario duration must be positive, got {self.duration}")
        if not self.t_s > 0:
            raise cf.InvalidScenarioError(f"Step length must be positive, got {self.t_s}")
        if self.front_speed < 0 or self.ego_speed < 0:
            raise cf.InvalidScenarioError(
                f"Initial speeds must be nonnegative, got front {self.front_speed}, ego {self.ego_speed}"
            )
        if not self.gap > 0:
            raise cf.InvalidScenarioError(f"Initial gap must be positive, got {self.gap}")
        if not self.values:
            raise cf.InvalidScenarioError("A sweep needs at least one value")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise cf.InvalidScenarioError(f"Seeds must be nonnegative, got {self.seeds}")
        for val in self.values:
            _check_sweep_value(self.sweep, val)
        for event in self.events:
            if len(event) != 3 or not event[0] < event[1]:
                raise cf.InvalidScenarioError(f"Front event must be [t_start, t_end, accel], got {event}")

    @property
    def n_steps(self):
        return int(round(self.duration / self.t_s))

    @classmethod
    def from_config(cls, conf, sweep=None):
        """Build from a full configuration; `sweep` overrides the configured sweep variable,
        taking the default value list of that sweep when it differs"""
        sc = conf["scenario"]
        name = normalize_sweep(sweep or sc["sweep"])
        values = sc["values"]
        if name != normalize_sweep(sc["sweep"]):
            values = DEFAULT_SWEEP_VALUES[name]
        return cls(
            duration=float(sc["duration"]),
            t_s=float(conf["mpc"]["t_s"]),
            front_speed=float(sc["front_speed"]),
            ego_speed=float(sc["ego_speed"]),
            gap=float(sc["gap"]),
            sweep=name,
            values=tuple(values),
            events=tuple(tuple(e) for e in sc["events"]),
            seeds=tuple(sc["seeds"]),
        )


DEFAULT_SWEEP_VALUES = {
    "h": (0, 1, 2),
    "a_min": (-9.0, -6.0, -3.0),
    "n_t": (0, 3, 8),
    "noise": (0.0, 0.15, 0.3),
}


def _check_sweep_value(sweep, val):
    if sweep in ("h", "n_t"):
        if int(val) != val or val < 0:
            raise cf.InvalidScenarioError(f"{sweep} values must be nonnegative whole steps, got {val}")
    elif sweep == "a_min":
        if not val < 0:
            raise cf.InvalidScenarioError(f"a_min values must be negative, got {val}")
    elif not val >= 0:
        raise cf.InvalidScenarioError(f"Noise bounds must be nonnegative, got {val}")


@dataclass(frozen=True)
class RunSpec:
    """Settings of one closed-loop run"""

    label: str
    sweep: str
    value: float
    h_steps: int
    a_min: float
    trust_horizon: int
    noise: float
    seed: int
    gap: float
    ego_speed: float
    front_speed: float
    duration: float
    events: tuple = ()


def run_specs(scenario, conf):
    """One RunSpec per (sweep value, seed), the other settings taken from `conf`"""
    channel = conf["channel"]
    base = OrderedDict(
        h=int(channel["h_steps"]),
        a_min=float(conf["mpc"]["a_min"]),
        n_t=int(channel["trust_horizon"]),
        noise=float(max(channel["n_d_max"], channel["n_vf_max"])),
    )
    specs = []
    for val in scenario.values:
        settings = dict(base)
        settings[scenario.sweep] = val
        for seed in scenario.seeds:
            label = f"{scenario.sweep}={val}"
            if len(scenario.seeds) > 1:
                label += f",seed={seed}"
            for event in scenario.events:
                if not settings["a_min"] - 1e-9 <= event[2] <= float(conf["mpc"]["a_max"]) + 1e-9:
                    raise cf.InvalidScenarioError(
                        f"Front event acceleration {event[2]} outside [{settings['a_min']}, {conf['mpc']['a_max']}]"
                    )
            specs.append(
                RunSpec(
                    label=label,
                    sweep=scenario.sweep,
                    value=val,
                    h_steps=int(settings["h"]),
                    a_min=float(settings["a_min"]),
                    trust_horizon=int(settings["n_t"]),
                    noise=float(settings["noise"]),
                    seed=seed,
                    gap=scenario.gap,
                    ego_speed=scenario.ego_speed,
                    front_speed=scenario.front_speed,
                    duration=scenario.duration,
                    events=scenario.events,
                )
            )
    return specs


class TrajectoryLog:
    """Per-step records of one run plus its metadata.

    The frame holds the columns t, d, v, v_f, T_w, P_wheel, status and iterations on a
    uniform time base.
    """

    def __init__(self, frame, metadata=None):
        self.frame = frame.reset_index(drop=True)
        self.metadata = OrderedDict(metadata or {})
        t = self.frame["t"].to_numpy(dtype=float)
        if t.size > 1:
            dt = np.diff(t)
            if not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-9):
                raise ValueError(f"Log {self.label} does not have a uniform time base")

    def __len__(self):
        return len(self.frame)

    def __repr__(self):
        return f"TrajectoryLog({self.label}, {len(self)} steps)"

    def __getitem__(self, column):
        return self.frame[column]

    @classmethod
    def from_records(cls, records, metadata=None):
        return cls(pd.DataFrame.from_records(records), metadata)

    @property
    def label(self):
        return self.metadata.get("label", "")

    @property
    def wheel_radius(self):
        return float(self.metadata.get("wheel_radius", dynamics.VehicleParams().wheel_radius))

    @property
    def is_baseline(self):
        return bool(self.metadata.get("baseline", False))

    @property
    def t_s(self):
        t = self.frame["t"].to_numpy(dtype=float)
        return float(t[1] - t[0]) if t.size > 1 else math.nan

    def column(self, name):
        return self.frame[name].to_numpy(dtype=float)

    def power_columns(self):
        """(t, T_w, wheel speed [rad/s]) for energy integration"""
        return self.column("t"), self.column("T_w"), self.column("v") / self.wheel_radius

    def window(self, t_a, t_b):
        """Sub-log with t_a <= t <= t_b"""
        t = self.column("t")
        mask = (t >= t_a - 1e-9) & (t <= t_b + 1e-9)
        return TrajectoryLog(self.frame[mask], self.metadata)

    def fallback_count(self):
        if "status" not in self.frame:
            return 0
        return int((self.frame["status"] == controller.FALLBACK).sum())

    def to_csv(self, path):
        try:
            self.frame.loc[:, list(LOG_COLUMNS)].to_csv(path, index=False, float_format=FLOAT_FORMAT)
        except OSError as e:
            raise OSError(f"Could not write trajectory {path}: {e}") from e

    def diagnostics_to_csv(self, path):
        try:
            self.frame.loc[:, list(DIAGNOSTIC_COLUMNS)].to_csv(path, index=False, float_format=FLOAT_FORMAT)
        except OSError as e:
            raise OSError(f"Could not write diagnostics {path}: {e}") from e

    @classmethod
    def from_csv(cls, path, metadata=None, diagnostics=None):
        try:
            frame = pd.read_csv(path)
            if diagnostics is not None and os.path.isfile(diagnostics):
                diag = pd.read_csv(diagnostics)
                frame["status"] = diag["status"].to_numpy()
                frame["iterations"] = diag["iterations"].to_numpy()
        except OSError as e:
            raise OSError(f"Could not read trajectory {path}: {e}") from e
        return cls(frame, metadata)


def split_baseline(logs):
    """Separate the baseline log from the runs"""
    runs = [log for log in logs if not log.is_baseline]
    baselines = [log for log in logs if log.is_baseline]
    if len(baselines) != 1:
        raise cf.InvalidScenarioError(f"Expected one baseline log, found {len(baselines)}")
    return runs, baselines[0]


def _systems(conf, a_min):
    params = dynamics.VehicleParams.from_config(conf["vehicle"])
    mpc = controller.MpcConfig.from_config(conf["mpc"])
    mpc = dataclasses.replace(mpc, a_min=float(a_min))
    inv = conf["invariant"]
    sys = mpc.linear_system(
        params,
        grade_range=(float(inv["grade_min"]), float(inv["grade_max"])),
        half_drag=bool(inv["half_drag"]),
    )
    return params, mpc, sys


def terminal_family(conf, a_min, cache_dir=None):
    """Cached invariant family for the configured bounds and the given a_min"""
    _, mpc, sys = _systems(conf, a_min)
    inv = conf["invariant"]
    return invariant.cached_invariant_family(
        sys,
        mpc.d_min,
        mpc.v_max,
        grid_step=float(inv["grid_step"]),
        tol=float(inv["tol"]),
        max_iter=int(inv["max_iter"]),
        cache_dir=cache_dir,
    )


def simulate(conf, spec, cache_dir=None, family=None):
    """Run one closed loop.

    Parameters
    ----------
    conf : dict
        full experiment configuration
    spec : RunSpec
    cache_dir : str, optional
        invariant cache directory
    family : invariant.InvariantFamily, optional
        terminal family, by default taken from the cache

    Returns
    -------
    TrajectoryLog
    """
    params, mpc, sys = _systems(conf, spec.a_min)
    road = dynamics.RoadProfile.from_config(conf["vehicle"])
    family = family or terminal_family(conf, spec.a_min, cache_dir)
    channel = v2v.ChannelConfig(
        h_steps=spec.h_steps,
        n_d_max=spec.noise,
        n_vf_max=spec.noise,
        seed=spec.seed,
        connected=bool(conf["channel"]["connected"]),
        trust_horizon=spec.trust_horizon,
    )
    n_steps = int(round(spec.duration / mpc.t_s))
    front = v2v.FrontTrajectory(
        spec.front_speed,
        mpc.t_s,
        n_steps,
        events=spec.events,
        s0=spec.gap,
        prehistory=spec.h_steps,
        lookahead=mpc.horizon + spec.trust_horizon + spec.h_steps,
    )
    plant = controller.PlantState.start(front, spec.ego_speed, spec.gap, prehistory=spec.h_steps)
    ctrl = controller.CaccController(params, mpc, family, channel, road=road, sys=sys)

    records = []
    for _ in range(n_steps + 1):
        _, record = controller.step_closed_loop(plant, front, channel, ctrl)
        records.append(record)

    metadata = OrderedDict(
        [
            ("a_min", spec.a_min),
            ("baseline", False),
            ("h_steps", spec.h_steps),
            ("label", spec.label),
            ("noise", spec.noise),
            ("seed", spec.seed),
            ("sweep", spec.sweep),
            ("trust_horizon", spec.trust_horizon),
            ("value", spec.value),
            ("wheel_radius", params.wheel_radius),
        ]
    )
    log = TrajectoryLog.from_records(records, metadata)
    fallbacks = log.fallback_count()
    logger.info(
        f"Run {spec.label} finished: min gap {log.column('d').min():.3f} m, {fallbacks} fallback steps"
    )
    if fallbacks:
        logger.warning(f"Run {spec.label} used the braking fallback {fallbacks} times")
    return log


def baseline_log(conf, scenario):
    """The front vehicle driving alone, with free-road drag"""
    params = dynamics.VehicleParams.from_config(conf["vehicle"])
    road = dynamics.RoadProfile.from_config(conf["vehicle"])
    front = v2v.FrontTrajectory(scenario.front_speed, scenario.t_s, scenario.n_steps, events=scenario.events)
    records = []
    for k in range(scenario.n_steps + 1):
        v = front.speed(k)
        a = front.accel(k)
        torque = params.wheel_radius * (
            params.mass * a + dynamics.road_load(params, road, v, dynamics.FREE_ROAD)
        )
        records.append(
            {
                "t": k * scenario.t_s,
                "d": math.inf,
                "v": v,
                "v_f": v,
                "T_w": torque,
                "P_wheel": torque * v / params.wheel_radius,
                "status": controller.OPTIMAL,
                "iterations": 0,
            }
        )
    metadata = OrderedDict(
        [("baseline", True), ("label", BASELINE_LABEL), ("wheel_radius", params.wheel_radius)]
    )
    return TrajectoryLog.from_records(records, metadata)


def _simulate_job(args):
    conf, spec, cache_dir = args
    return simulate(conf, spec, cache_dir=cache_dir)


def run(scenario, conf, cache_dir=None, workers=None):
    """Run every sweep value and the baseline.

    Returns
    -------
    list of TrajectoryLog
        one log per (sweep value, seed) in sweep order, then the baseline
    """
    specs = run_specs(scenario, conf)
    for a_min in sorted({spec.a_min for spec in specs}):
        terminal_family(conf, a_min, cache_dir)

    workers = int(workers if workers is not None else cf.WORKERS)
    jobs = [(conf, spec, cache_dir) for spec in specs]
    logger.info(f"Running {len(specs)} closed loops for sweep {scenario.sweep} on {workers} workers")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_simulate_job, jobs))
    else:
        logs = [_simulate_job(job) for job in jobs]
    logs.append(baseline_log(conf, scenario))
    return logs


def detect_steady_state(log, span=STEADY_SPAN, threshold=STEADY_THRESHOLD):
    """Steady-state window of a run.

    The window starts at the earliest time from which every `span`-long stretch of the gap
    varies by less than `threshold`, and ends with the log.

    Returns
    -------
    tuple
        (t_a, t_b) [s]

    Raises
    ------
    NoSteadyStateError
        the log is shorter than `span` or its last stretch has not settled
    """
    t = log.column("t")
    d = log.column("d")
    if t.size < 2:
        raise cf.NoSteadyStateError(f"Log {log.label} is too short for steady-state detection")
    width = int(round(span / (t[1] - t[0])))
    if width < 1 or t.size < width + 1:
        raise cf.NoSteadyStateError(f"Log {log.label} is shorter than the {span} s steady-state span")
    windows = np.lib.stride_tricks.sliding_window_view(d, width + 1)
    settled = np.ptp(windows, axis=1) < threshold
    if not settled[-1]:
        errmsg = f"No steady state in {log.label}: gap still varies by {np.ptp(windows[-1]):.3f} m at the end"
        logger.warning(errmsg)
        raise cf.NoSteadyStateError(errmsg)
    unsettled = np.nonzero(~settled)[0]
    start = 0 if unsettled.size == 0 else int(unsettled[-1]) + 1
    return float(t[start]), float(t[-1])


@dataclass
class EnergyRow:
    label: str
    value: object
    window: tuple
    wheel_ratio: float
    battery_ratio: float
    fuel_ratio: float
    battery_ratio_table: float = math.nan
    fuel_ratio_table: float = math.nan
    steady_gap: float = math.nan
    steady_speed: float = math.nan
    steady: bool = True


@dataclass
class EnergyReport:
    """Energy use of each run relative to the baseline, in percent.

    Battery energy is integrated in FE mode and fuel energy in FC mode. The ``*_table``
    columns come from the savings table at the steady-state speed and time gap when one is
    given. With ``mode`` set, the frame keeps only that mode's columns.
    """

    sweep: str
    rows: list = field(default_factory=list)
    table_source: str = ""
    mode: str = ""

    def to_frame(self):
        columns = OrderedDict(
            [
                ("label", [r.label for r in self.rows]),
                ("value", [r.value for r in self.rows]),
                ("t_a", [r.window[0] for r in self.rows]),
                ("t_b", [r.window[1] for r in self.rows]),
                ("wheel", [r.wheel_ratio for r in self.rows]),
                ("battery_FE", [r.battery_ratio for r in self.rows]),
                ("fuel_FC", [r.fuel_ratio for r in self.rows]),
                ("battery_FE_table", [r.battery_ratio_table for r in self.rows]),
                ("fuel_FC_table", [r.fuel_ratio_table for r in self.rows]),
                ("steady_gap", [r.steady_gap for r in self.rows]),
                ("steady_speed", [r.steady_speed for r in self.rows]),
            ]
        )
        if self.mode:
            fe = powertrain.PowertrainMode.parse(self.mode) is powertrain.PowertrainMode.FE
            other = "fuel_FC" if fe else "battery_FE"
            del columns[other]
            del columns[f"{other}_table"]
        return pd.DataFrame(columns)

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(f"No report row {label}")

    def to_csv(self, path):
        try:
            self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan")
        except OSError as e:
            raise OSError(f"Could not write report {path}: {e}") from e


def _energies(pt_cfg, log):
    wheel, battery, _ = powertrain.trajectory_energy(pt_cfg, powertrain.PowertrainMode.FE, log)
    _, _, fuel = powertrain.trajectory_energy(pt_cfg, powertrain.PowertrainMode.FC, log)
    return wheel, battery, fuel


def _baseline_window(baseline, log, t_a, t_b):
    if abs(baseline.t_s - log.t_s) > 1e-9:
        raise cf.WindowMismatchError(
            f"Baseline step {baseline.t_s} s differs from run {log.label} step {log.t_s} s"
        )
    t = baseline.column("t")
    if t_a < t[0] - 1e-9 or t_b > t[-1] + 1e-9:
        raise cf.WindowMismatchError(
            f"Baseline covers [{t[0]}, {t[-1]}] s, run {log.label} needs [{t_a}, {t_b}] s"
        )
    window = baseline.window(t_a, t_b)
    if len(window) != len(log.window(t_a, t_b)):
        raise cf.WindowMismatchError(f"Baseline window length differs from run {log.label}")
    return window


def _table_ratio(table, mode, speed, time_gap):
    if table is None or mode not in table.values:
        return math.nan
    try:
        return 100.0 * (1.0 - powertrain.energy_saving_lookup(table, speed, time_gap, mode))
    except cf.OutOfTableError as e:
        logger.warning(f"Savings table lookup skipped: {e}")
        return math.nan


def energy_report(logs, baseline, pt_cfg, savings_table=None, strict=True, mode=None):
    """Steady-state energy of each run relative to the baseline.

    Parameters
    ----------
    logs : list of TrajectoryLog
        runs in sweep order
    baseline : TrajectoryLog
        the front vehicle alone
    pt_cfg : powertrain.PowertrainConfig
    savings_table : powertrain.SavingsTable, optional
    strict : bool
        raise NoSteadyStateError for a run that never settles; otherwise its row holds NaN
    mode : str or PowertrainMode, optional
        report only the battery (FE) or the fuel (FC) columns

    Returns
    -------
    EnergyReport
        the baseline row first, at 100 percent
    """
    sweep = logs[0].metadata.get("sweep", "") if logs else ""
    mode = powertrain.PowertrainMode.parse(mode).value if mode else ""
    report = EnergyReport(sweep=sweep, table_source=savings_table.source if savings_table else "", mode=mode)
    t = baseline.column("t")
    report.rows.append(
        EnergyRow(
            label=BASELINE_LABEL,
            value="",
            window=(float(t[0]), float(t[-1])),
            wheel_ratio=100.0,
            battery_ratio=100.0,
            fuel_ratio=100.0,
            battery_ratio_table=100.0 if savings_table else math.nan,
            fuel_ratio_table=100.0 if savings_table else math.nan,
            steady_speed=float(np.mean(baseline.column("v"))),
            steady_gap=math.inf,
        )
    )
    for log in logs:
        try:
            t_a, t_b = detect_steady_state(log)
        except cf.NoSteadyStateError:
            if strict:
                raise
            nan = math.nan
            report.rows.append(
                EnergyRow(log.label, log.metadata.get("value", ""), (nan, nan), nan, nan, nan, steady=False)
            )
            continue
        run_window = log.window(t_a, t_b)
        base_window = _baseline_window(baseline, log, t_a, t_b)
        wheel, battery, fuel = _energies(pt_cfg, run_window)
        wheel0, battery0, fuel0 = _energies(pt_cfg, base_window)
        gap = float(np.mean(run_window.column("d")))
        speed = float(np.mean(run_window.column("v")))
        time_gap = gap / speed if speed > 0 else math.inf
        report.rows.append(
            EnergyRow(
                label=log.label,
                value=log.metadata.get("value", ""),
                window=(t_a, t_b),
                wheel_ratio=100.0 * wheel / wheel0,
                battery_ratio=100.0 * battery / battery0,
                fuel_ratio=100.0 * fuel / fuel0,
                battery_ratio_table=_table_ratio(savings_table, powertrain.PowertrainMode.FE, speed, time_gap),
                fuel_ratio_table=_table_ratio(savings_table, powertrain.PowertrainMode.FC, speed, time_gap),
                steady_gap=gap,
                steady_speed=speed,
            )
        )
        logger.info(
            f"{log.label}: steady from {t_a:.1f} s at gap {gap:.2f} m, wheel {100.0 * wheel / wheel0:.1f}%"
        )
    return report


def torque_increment_rms(log, t_from=0.0):
    """RMS of successive applied torque differences from `t_from` on [N m]"""
    t = log.column("t")
    torque = log.column("T_w")[t >= t_from - 1e-9]
    if torque.size < 2:
        raise cf.EmptyLogError(f"Log {log.label} has fewer than two torques after {t_from} s")
    return float(np.sqrt(np.mean(np.diff(torque) ** 2)))


def safety_violations(log, mpc, tol=controller.SAFETY_TOL):
    """Descriptions of every violated state or torque bound in a run"""
    found = []
    d = log.column("d")
    v = log.column("v")
    torque = log.column("T_w")
    checks = [
        (d < mpc.d_min - tol, "gap below d_min", d),
        (v < -tol, "negative speed", v),
        (v > mpc.v_max + tol, "speed above v_max", v),
        (torque < mpc.torque_min - tol, "torque below minimum", torque),
        (torque > mpc.torque_max + tol, "torque above maximum", torque),
    ]
    t = log.column("t")
    for mask, what, values in checks:
        if np.any(mask):
            i = int(np.argmax(mask))
            found.append(f"{log.label}: {what} at t={t[i]:.1f} s ({values[i]:.6g})")
    return found


def _file_label(label):
    return re.sub(r"[^A-Za-z0-9_.=,-]", "_", label)


def _plot_data(logs, baseline):
    """Wide table of gap, speeds and torque against time for one figure"""
    frame = OrderedDict([("t", baseline.column("t")), ("v_front", baseline.column("v"))])
    for log in logs:
        for column in ("d", "v", "T_w"):
            frame[f"{column}[{log.label}]"] = log.column(column)
    return pd.DataFrame(frame)


def export(logs, report, out_dir, conf=None, diagnostics=False):
    """Write a run directory.

    Layout: trajectories/<label>.csv (t, d, v, v_f, T_w, P_wheel) for every run and the
    baseline, report.csv, plot-data/<sweep>.csv, optionally diagnostics/<label>.csv, run.edn,
    config.edn when `conf` is given, and provenance.edn. config.edn is a complete
    configuration that ``cacc-lab simulate --config`` accepts. Everything except
    provenance.edn is byte-identical across re-exports of the same runs.
    """
    runs, baseline = split_baseline(logs)
    traj_dir = os.path.join(out_dir, TRAJECTORY_DIR)
    plot_dir = os.path.join(out_dir, PLOT_DIR)
    diag_dir = os.path.join(out_dir, DIAGNOSTICS_DIR)
    try:
        os.makedirs(traj_dir, exist_ok=True)
        os.makedirs(plot_dir, exist_ok=True)
        if diagnostics:
            os.makedirs(diag_dir, exist_ok=True)
        elif os.path.isdir(diag_dir):
            shutil.rmtree(diag_dir)
    except OSError as e:
        raise OSError(f"Could not create run directory {out_dir}: {e}") from e

    entries = []
    for log in runs + [baseline]:
        name = _file_label(log.label) + ".csv"
        log.to_csv(os.path.join(traj_dir, name))
        if diagnostics:
            log.diagnostics_to_csv(os.path.join(diag_dir, name))
        entries.append(OrderedDict([("file", name), ("metadata", provenance._canonical(log.metadata))]))

    report.to_csv(os.path.join(out_dir, REPORT_FILE))
    sweep = report.sweep or "runs"
    plot_path = os.path.join(plot_dir, f"{_file_label(sweep)}.csv")
    try:
        _plot_data(runs, baseline).to_csv(plot_path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OSError(f"Could not write plot data {plot_path}: {e}") from e

    manifest = OrderedDict()
    if conf is not None:
        manifest["config"] = provenance._canonical(conf)
        parameters.write_config(conf, os.path.join(out_dir, CONFIG_FILE))
    manifest["diagnostics"] = bool(diagnostics)
    manifest["format-version"] = cf.__format_version__
    manifest["runs"] = entries
    manifest["sweep"] = report.sweep
    dest = os.path.join(out_dir, RUN_FILE)
    try:
        with open(dest, "w") as f:
            kim_edn.dump(manifest, f, indent=4)
    except OSError as e:
        raise OSError(f"Could not write run manifest {dest}: {e}") from e

    provenance.write_provenance(out_dir, "simulate", config=conf)
    logger.info(f"Run directory written to {out_dir}")


def load_runs(run_dir, verify=True):
    """Read an exported run directory back.

    Returns
    -------
    tuple
        (configuration or None, list of TrajectoryLog with the baseline last)

    Raises
    ------
    ProvenanceMismatchError
        a file changed since export
    IncompatibleFormatError
        the directory was written by an unsupported format version
    """
    if verify:
        provenance.verify_provenance(run_dir)
    dest = os.path.join(run_dir, RUN_FILE)
    try:
        with open(dest) as f:
            manifest = kim_edn.load(f)
    except OSError as e:
        raise OSError(f"Could not read run manifest {dest}: {e}") from e
    provenance.check_format_version(manifest.get("format-version", "0"), source=run_dir)
    logs = []
    for entry in manifest["runs"]:
        diag = os.path.join(run_dir, DIAGNOSTICS_DIR, entry["file"]) if manifest.get("diagnostics") else None
        logs.append(
            TrajectoryLog.from_csv(
                os.path.join(run_dir, TRAJECTORY_DIR, entry["file"]),
                metadata=entry["metadata"],
                diagnostics=diag,
            )
        )
    return manifest.get("config"), logs


def random_initial_states(family, count, seed=0, gap_range=(5.0, 120.0), speed_range=(0.0, 35.0)):
    """Rejection-sample (gap, ego speed, front speed) triples inside the invariant family"""
    rng = np.random.default_rng(seed)
    found = []
    tries = 0
    while len(found) < count:
        tries += 1
        if tries > 1000 * count:
            raise RuntimeError(f"Found only {len(found)} of {count} feasible initial states")
        d = rng.uniform(*gap_range)
        v = rng.uniform(*speed_range)
        v_f = rng.uniform(*speed_range)
        if family.contains(d, v, v_f):
            found.append((float(d), float(v), float(v_f)))
    return found
