"""Closed-loop sweeps. The four reference sweeps run once per session and are shared."""

import functools
import math
import os

import numpy as np
import pandas as pd
import pytest

import cacclab.controller as controller
import cacclab.dynamics as dynamics
import cacclab.parameters as parameters
import cacclab.powertrain as powertrain
import cacclab.scenarios as scenarios
import cacclab.src.config as cf
from cacclab.tests import CACHE_DIR, D_MIN, cached_family, make_config

CONF = make_config()
PT_CFG = powertrain.PowertrainConfig.from_config(CONF["powertrain"])
MPC = controller.MpcConfig.from_config(CONF["mpc"])


@functools.lru_cache(maxsize=None)
def sweep(name):
    scenario = scenarios.ScenarioConfig.from_config(CONF, sweep=name)
    logs = scenarios.run(scenario, CONF, cache_dir=CACHE_DIR, workers=1)
    return scenarios.split_baseline(logs)


@functools.lru_cache(maxsize=None)
def sweep_report(name):
    runs, baseline = sweep(name)
    return scenarios.energy_report(runs, baseline, PT_CFG)


def synthetic_log(gap, duration=60.0, t_s=0.2, label="synthetic"):
    t = np.round(np.arange(0.0, duration + t_s / 2, t_s), 10)
    d = gap(t) if callable(gap) else np.full_like(t, gap)
    frame = pd.DataFrame(
        {"t": t, "d": d, "v": 25.0, "v_f": 25.0, "T_w": 140.0, "P_wheel": 140.0 * 25.0 / 0.288}
    )
    return scenarios.TrajectoryLog(frame, {"label": label})


def test_scenario_validation():
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.ScenarioConfig(duration=0.0)
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.ScenarioConfig(sweep="weather")
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.ScenarioConfig(sweep="a_min", values=(-6.0, 1.0))
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.ScenarioConfig(sweep="h", values=(0.5,))
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.ScenarioConfig(events=((5.0, 2.0, -1.0),))


def test_scenario_from_config():
    scenario = scenarios.ScenarioConfig.from_config(CONF)
    assert (scenario.sweep, scenario.values, scenario.n_steps) == ("h", (0, 1, 2), 300)
    scenario = scenarios.ScenarioConfig.from_config(CONF, sweep="n_max")
    assert scenario.sweep == "noise"
    assert scenario.values == (0.0, 0.15, 0.3)


def test_run_specs():
    conf = make_config(channel={"h_steps": 1, "trust_horizon": 3})
    scenario = scenarios.ScenarioConfig(sweep="a_min", values=(-9.0, -3.0), seeds=(0, 1))
    specs = scenarios.run_specs(scenario, conf)
    assert [s.label for s in specs] == [
        "a_min=-9.0,seed=0",
        "a_min=-9.0,seed=1",
        "a_min=-3.0,seed=0",
        "a_min=-3.0,seed=1",
    ]
    assert all(s.h_steps == 1 and s.trust_horizon == 3 for s in specs)
    assert specs[2].a_min == -3.0

    harsh = scenarios.ScenarioConfig(sweep="a_min", values=(-3.0,), events=((5.0, 6.0, -5.0),))
    with pytest.raises(cf.InvalidScenarioError):
        scenarios.run_specs(harsh, conf)


def test_steady_state_constant_gap():
    assert scenarios.detect_steady_state(synthetic_log(20.0)) == (0.0, 60.0)


def test_steady_state_after_settling():
    log = synthetic_log(lambda t: np.maximum(20.0, 50.0 - t))
    t_a, t_b = scenarios.detect_steady_state(log)
    assert 30.0 <= t_a <= 35.0
    assert t_b == 60.0


def test_steady_state_oscillating():
    with pytest.raises(cf.NoSteadyStateError):
        scenarios.detect_steady_state(synthetic_log(lambda t: 20.0 + np.sin(t)))
    with pytest.raises(cf.NoSteadyStateError):
        scenarios.detect_steady_state(synthetic_log(20.0, duration=3.0))


def test_baseline_log():
    scenario = scenarios.ScenarioConfig(duration=10.0)
    baseline = scenarios.baseline_log(CONF, scenario)
    assert baseline.is_baseline
    assert len(baseline) == 51
    assert np.allclose(baseline.column("T_w"), 144.04, atol=0.1)
    assert np.all(np.isinf(baseline.column("d")))


def test_baseline_against_itself():
    baseline = scenarios.baseline_log(CONF, scenarios.ScenarioConfig(duration=30.0))
    frame = baseline.frame.copy()
    frame["d"] = 30.0
    twin = scenarios.TrajectoryLog(frame, {"label": "twin", "sweep": "h", "value": 0})
    report = scenarios.energy_report([twin], baseline, PT_CFG)
    assert [r.label for r in report.rows] == [scenarios.BASELINE_LABEL, "twin"]
    row = report.row("twin")
    assert row.wheel_ratio == pytest.approx(100.0)
    assert row.battery_ratio == pytest.approx(100.0)
    assert row.fuel_ratio == pytest.approx(100.0)


def test_window_mismatch():
    baseline = scenarios.baseline_log(CONF, scenarios.ScenarioConfig(duration=20.0))
    longer = synthetic_log(20.0, duration=40.0)
    with pytest.raises(cf.WindowMismatchError):
        scenarios.energy_report([longer], baseline, PT_CFG)


def test_unsettled_run_in_lenient_report():
    baseline = scenarios.baseline_log(CONF, scenarios.ScenarioConfig(duration=60.0))
    wobbly = synthetic_log(lambda t: 20.0 + np.sin(t), label="wobbly")
    with pytest.raises(cf.NoSteadyStateError):
        scenarios.energy_report([wobbly], baseline, PT_CFG)
    report = scenarios.energy_report([wobbly], baseline, PT_CFG, strict=False)
    assert not report.row("wobbly").steady
    assert math.isnan(report.row("wobbly").wheel_ratio)


def test_savings_table_columns():
    baseline = scenarios.baseline_log(CONF, scenarios.ScenarioConfig(duration=30.0))
    run = synthetic_log(20.0, duration=30.0, label="table")
    table = powertrain.model_savings_table(
        dynamics.VehicleParams.from_config(CONF["vehicle"]), PT_CFG, speeds=[20.0, 30.0], time_gaps=[0.5, 1.0, 2.0]
    )
    report = scenarios.energy_report([run], baseline, PT_CFG, savings_table=table)
    assert report.table_source == "model-derived"
    row = report.row("table")
    assert 0.0 < row.battery_ratio_table < 100.0
    assert 0.0 < row.fuel_ratio_table < 100.0


def test_torque_increment_rms():
    log = synthetic_log(20.0)
    assert scenarios.torque_increment_rms(log) == 0.0
    with pytest.raises(cf.EmptyLogError):
        scenarios.torque_increment_rms(log, t_from=100.0)


def test_safety_violations():
    frame = synthetic_log(20.0).frame.copy()
    frame.loc[10, "d"] = 4.0
    frame.loc[20, "T_w"] = 2000.0
    log = scenarios.TrajectoryLog(frame, {"label": "bad"})
    found = scenarios.safety_violations(log, MPC)
    assert len(found) == 2
    assert "gap below d_min at t=2.0 s" in found[0]


def test_identical_seeds_identical_logs():
    conf = make_config(channel={"n_d_max": 0.3, "n_vf_max": 0.3, "seed": 4})
    scenario = scenarios.ScenarioConfig(duration=6.0, sweep="noise", values=(0.3,))
    spec = scenarios.run_specs(scenario, conf)[0]
    first = scenarios.simulate(conf, spec, cache_dir=CACHE_DIR)
    second = scenarios.simulate(conf, spec, cache_dir=CACHE_DIR)
    pd.testing.assert_frame_equal(first.frame, second.frame)


def run_spec(label, gap=50.0, ego_speed=15.0, front_speed=25.0, duration=8.0, noise=0.0, events=()):
    return scenarios.RunSpec(
        label=label,
        sweep="noise",
        value=noise,
        h_steps=0,
        a_min=-6.0,
        trust_horizon=0,
        noise=noise,
        seed=0,
        gap=gap,
        ego_speed=ego_speed,
        front_speed=front_speed,
        duration=duration,
        events=events,
    )


def test_random_feasible_starts_stay_safe():
    family = cached_family()
    for i, (d, v, v_f) in enumerate(scenarios.random_initial_states(family, 100, seed=5)):
        spec = run_spec(f"start {i}", gap=d, ego_speed=v, front_speed=v_f)
        log = scenarios.simulate(CONF, spec, family=family)
        assert log.fallback_count() == 0, spec
        assert scenarios.safety_violations(log, MPC) == [], spec


@pytest.mark.parametrize(
    "connected, noise", [(True, 0.0), (False, 0.0), (True, 0.3)], ids=["v2v", "radar-only", "noisy"]
)
def test_emergency_stop_of_the_front_vehicle(connected, noise):
    conf = make_config(channel={"connected": connected})
    spec = run_spec(f"stop noise={noise}", duration=40.0, noise=noise, events=((10.0, 30.0, -6.0),))
    log = scenarios.simulate(conf, spec, cache_dir=CACHE_DIR)
    assert log.column("v_f")[-1] == 0.0
    assert log.column("v")[-1] < 1.0
    assert log.column("d").min() >= D_MIN - controller.SAFETY_TOL
    assert log.fallback_count() == 0
    assert scenarios.safety_violations(log, MPC) == []


def test_delay_sweep():
    runs, baseline = sweep("h")
    assert [r.label for r in runs] == ["h=0", "h=1", "h=2"]
    for log in runs:
        assert len(log) == 301
        assert scenarios.safety_violations(log, MPC) == []
        assert log.fallback_count() == 0

    report = sweep_report("h")
    rows = [report.row(r.label) for r in runs]
    gaps = [r.steady_gap for r in rows]
    assert gaps[0] < gaps[1] < gaps[2]
    assert rows[0].steady_gap > D_MIN
    wheel = [r.wheel_ratio for r in rows]
    assert wheel[0] < wheel[1] < wheel[2] < 100.0
    for r in rows:
        assert r.wheel_ratio < r.battery_ratio < 100.0


def test_gap_settles_in_the_second_half():
    runs, _ = sweep("h")
    log = runs[0]
    d = log.column("d")
    t = log.column("t")
    assert abs(d[np.argmin(np.abs(t - 35.0))] - d[-1]) < 3.0
    t_a, _ = scenarios.detect_steady_state(log)
    # the gap error decays no faster than exp(-t v_f / |ego braking|), about 5 s per e-fold
    assert 30.0 <= t_a <= 45.0


def test_braking_bound_sweep():
    runs, _ = sweep("a_min")
    assert [r.label for r in runs] == ["a_min=-9.0", "a_min=-6.0", "a_min=-3.0"]
    for log in runs:
        assert scenarios.safety_violations(log, MPC) == []
    rows = [sweep_report("a_min").row(r.label) for r in runs]
    # milder assumed braking lets the ego follow closer and save more
    assert rows[0].steady_gap > rows[1].steady_gap > rows[2].steady_gap
    assert rows[0].wheel_ratio > rows[1].wheel_ratio > rows[2].wheel_ratio


def test_trust_horizon_sweep():
    runs, _ = sweep("n_t")
    for log in runs:
        assert scenarios.safety_violations(log, MPC) == []
    rows = [sweep_report("n_t").row(r.label) for r in runs]
    assert rows[0].steady_gap > rows[1].steady_gap
    assert rows[1].steady_gap >= rows[2].steady_gap - 0.05
    assert rows[0].wheel_ratio > rows[2].wheel_ratio


def test_wheel_ratio_matches_the_road_load_ratio():
    params = dynamics.VehicleParams.from_config(CONF["vehicle"])
    road = dynamics.RoadProfile.from_config(CONF["vehicle"])
    free_road = dynamics.steady_torque(params, road, 25.0)
    for name in ("h", "a_min", "n_t"):
        runs, _ = sweep(name)
        for log in runs:
            row = sweep_report(name).row(log.label)
            expected = 100.0 * dynamics.steady_torque(params, road, row.steady_speed, row.steady_gap) / free_road
            assert row.steady_speed == pytest.approx(25.0, abs=0.05)
            assert row.wheel_ratio == pytest.approx(expected, abs=1.0), log.label
    # even a 50 m gap leaves the ratio far below the 87.6 to 93.2 percent range
    assert 100.0 * dynamics.steady_torque(params, road, 25.0, 50.0) / free_road < 80.0


def test_noise_sweep():
    scenario = scenarios.ScenarioConfig(sweep="noise", values=(0.0, 0.15, 0.3), seeds=tuple(range(10)))
    runs, _ = scenarios.split_baseline(scenarios.run(scenario, CONF, cache_dir=CACHE_DIR))
    assert len(runs) == 30
    rms = {}
    for log in runs:
        assert scenarios.safety_violations(log, MPC) == []
        rms.setdefault(log.metadata["value"], []).append(scenarios.torque_increment_rms(log, t_from=30.0))
    means = [np.mean(rms[n]) for n in (0.0, 0.15, 0.3)]
    assert means[0] < means[1] < means[2]


def test_export_and_reload(tmp_path):
    runs, baseline = sweep("h")
    report = sweep_report("h")
    first = str(tmp_path / "first")
    second = str(tmp_path / "second")
    scenarios.export(runs + [baseline], report, first, conf=CONF, diagnostics=True)
    scenarios.export(runs + [baseline], report, second, conf=CONF, diagnostics=True)

    files = [scenarios.REPORT_FILE, scenarios.RUN_FILE, scenarios.CONFIG_FILE, os.path.join(scenarios.PLOT_DIR, "h.csv")]
    files += [os.path.join(scenarios.TRAJECTORY_DIR, f"{log.label}.csv") for log in runs + [baseline]]
    for rel in files:
        with open(os.path.join(first, rel), "rb") as a, open(os.path.join(second, rel), "rb") as b:
            assert a.read() == b.read()

    frame = pd.read_csv(os.path.join(first, scenarios.REPORT_FILE))
    assert len(frame) == len(runs) + 1

    conf, logs = scenarios.load_runs(first)
    assert conf["mpc"]["horizon"] == CONF["mpc"]["horizon"]
    assert parameters.load_config(os.path.join(first, scenarios.CONFIG_FILE)) == CONF
    reloaded_runs, reloaded_baseline = scenarios.split_baseline(logs)
    assert [log.label for log in reloaded_runs] == [log.label for log in runs]
    assert np.allclose(reloaded_runs[0].column("d"), runs[0].column("d"))
    assert reloaded_runs[0].fallback_count() == 0
    again = scenarios.energy_report(reloaded_runs, reloaded_baseline, PT_CFG)
    assert again.row("h=0").wheel_ratio == pytest.approx(report.row("h=0").wheel_ratio, rel=1e-6)


def test_reload_detects_tampering(tmp_path):
    runs, baseline = sweep("h")
    out = str(tmp_path / "run")
    scenarios.export(runs + [baseline], sweep_report("h"), out, conf=CONF)
    with open(os.path.join(out, scenarios.REPORT_FILE), "a") as f:
        f.write("extra\n")
    with pytest.raises(cf.ProvenanceMismatchError):
        scenarios.load_runs(out)


def test_report_mode_selects_columns():
    runs, baseline = sweep("h")
    full = scenarios.energy_report(runs, baseline, PT_CFG).to_frame()
    assert {"battery_FE", "fuel_FC"} <= set(full.columns)

    fc = scenarios.energy_report(runs, baseline, PT_CFG, mode="FC")
    assert fc.mode == "FC"
    frame = fc.to_frame()
    assert "fuel_FC" in frame and "fuel_FC_table" in frame
    assert "battery_FE" not in frame and "battery_FE_table" not in frame
    assert np.allclose(frame["fuel_FC"], full["fuel_FC"])

    fe = scenarios.energy_report(runs, baseline, PT_CFG, mode=powertrain.PowertrainMode.FE).to_frame()
    assert "battery_FE" in fe and "fuel_FC" not in fe
    with pytest.raises(ValueError):
        scenarios.energy_report(runs, baseline, PT_CFG, mode="hybrid")
