import numpy as np
import pandas as pd
import pytest

import cacclab.dynamics as dynamics
import cacclab.powertrain as powertrain
import cacclab.src.config as cf

FE = powertrain.PowertrainMode.FE
FC = powertrain.PowertrainMode.FC

UNIT = powertrain.PowertrainConfig(
    gear_ratio=1.0,
    aux_power=0.0,
    eta_m=powertrain.EfficiencyMap(1.0),
    eta_e=powertrain.EfficiencyMap(0.36),
)


def constant_log(torque, omega, duration=10.0, t_s=0.2):
    t = np.arange(0.0, duration + t_s / 2, t_s)
    return pd.DataFrame({"t": t, "T_w": np.full_like(t, torque), "omega_w": np.full_like(t, omega)})


def test_power_examples():
    p_b, p_f = powertrain.instantaneous_power(UNIT, FE, 1000.0, 10.0)
    assert p_b == pytest.approx(10000.0)
    assert p_f == 0.0

    p_b, p_f = powertrain.instantaneous_power(UNIT, FC, 1000.0, 10.0)
    assert p_b == 0.0
    assert p_f == pytest.approx(27777.78, abs=1.0)

    cfg = powertrain.PowertrainConfig(aux_power=500.0, eta_m=powertrain.EfficiencyMap(0.9))
    p_b, p_f = powertrain.instantaneous_power(cfg, "fe", 1000.0, 10.0)
    assert p_b == pytest.approx(11611.1, abs=1.0)
    assert p_f == 500.0


def test_power_ignores_regeneration():
    cfg = powertrain.PowertrainConfig(aux_power=300.0)
    p_b, p_f = powertrain.instantaneous_power(cfg, FE, -800.0, 20.0)
    assert p_b == 300.0
    p_b, p_f = powertrain.instantaneous_power(cfg, FC, -800.0, 20.0)
    assert p_b == 0.0
    assert p_f == 0.0


def test_mode_exclusivity():
    torque = np.linspace(10.0, 1000.0, 20)
    p_b, p_f = powertrain.instantaneous_power(UNIT, FE, torque, 50.0)
    assert np.all(p_b > 0) and np.all(p_f == 0)
    p_b, p_f = powertrain.instantaneous_power(UNIT, FC, torque, 50.0)
    assert np.all(p_b == 0) and np.all(p_f > 0)


def test_unknown_mode():
    with pytest.raises(ValueError):
        powertrain.PowertrainMode.parse("hybrid")


def test_trajectory_energy():
    log = constant_log(1000.0, 10.0)
    e_wheel, e_b, e_f = powertrain.trajectory_energy(UNIT, FE, log)
    assert e_wheel == pytest.approx(100e3)
    assert e_b == pytest.approx(100e3)
    assert e_f == 0.0

    e_wheel, e_b, e_f = powertrain.trajectory_energy(UNIT, FC, log)
    assert e_f == pytest.approx(277.8e3, abs=100.0)


def test_zero_torque_energy_is_auxiliary_load():
    cfg = powertrain.PowertrainConfig(aux_power=500.0)
    e_wheel, e_b, e_f = powertrain.trajectory_energy(cfg, FE, constant_log(0.0, 10.0))
    assert e_wheel == 0.0
    assert e_b == pytest.approx(5000.0)
    assert e_f == pytest.approx(5000.0)


def test_empty_log():
    with pytest.raises(cf.EmptyLogError):
        powertrain.trajectory_energy(UNIT, FE, pd.DataFrame({"t": [], "T_w": [], "omega_w": []}))


def test_auxiliary_load_dilutes_savings():
    cfg = powertrain.PowertrainConfig(aux_power=500.0, eta_m=powertrain.EfficiencyMap(0.9))
    lone = powertrain.trajectory_energy(cfg, FE, constant_log(160.0, 80.0))
    follow = powertrain.trajectory_energy(cfg, FE, constant_log(140.0, 80.0))
    wheel_ratio = follow[0] / lone[0]
    battery_ratio = follow[1] / lone[1]
    assert wheel_ratio < battery_ratio < 1.0


def test_normalized_residuals():
    res = powertrain.normalized_residuals([0.0, 0.0], [3.0, -4.0])
    assert res == pytest.approx([0.8485, -1.1314], abs=1e-3)

    predicted = np.linspace(0.0, 10.0, 30)
    res = powertrain.normalized_residuals(predicted, predicted - 2.5)
    assert np.allclose(res, -1.0)

    rng = np.random.default_rng(4)
    res = powertrain.normalized_residuals(rng.normal(size=100), rng.normal(size=100))
    assert np.sqrt(np.mean(res**2)) == pytest.approx(1.0, abs=1e-12)


def test_normalized_residuals_degenerate():
    with pytest.raises(cf.DegenerateResidualError):
        powertrain.normalized_residuals([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(cf.DegenerateResidualError):
        powertrain.normalized_residuals([1.0], [2.0])
    with pytest.raises(ValueError):
        powertrain.normalized_residuals([1.0, 2.0], [1.0, 2.0, 3.0])


def test_efficiency_map_grid(tmp_path):
    grid = pd.DataFrame(
        [[0.8, 0.9], [0.7, 0.8]], index=pd.Index([0.0, 100.0], name="torque"), columns=["0", "100"]
    )
    path = tmp_path / "eta.csv"
    grid.to_csv(path)
    eta = powertrain.EfficiencyMap.from_csv(str(path))
    assert eta(0.0, 0.0) == pytest.approx(0.8)
    assert eta(50.0, 50.0) == pytest.approx(0.8)
    with pytest.raises(cf.EfficiencyMapDomainError):
        eta(200.0, 50.0)
    held = powertrain.EfficiencyMap.from_csv(str(path), extrapolate=True)
    assert held(200.0, 0.0) == pytest.approx(0.7)


def test_efficiency_map_validation():
    with pytest.raises(ValueError):
        powertrain.EfficiencyMap(1.2)
    with pytest.raises(ValueError):
        powertrain.EfficiencyMap(torque_axis=[0, 1], speed_axis=[1, 0], values=[[1, 1], [1, 1]])


def make_table():
    return powertrain.SavingsTable(
        speeds=[20.0, 30.0],
        time_gaps=[0.5, 1.0],
        values={FE: [[0.04, 0.10], [0.04, 0.10]], FC: [[0.02, 0.01], [0.03, 0.02]]},
    )


def test_savings_lookup():
    table = make_table()
    assert powertrain.energy_saving_lookup(table, 20.0, 1.0, FE) == pytest.approx(0.10)
    assert powertrain.energy_saving_lookup(table, 25.0, 0.75, FE) == pytest.approx(0.07)
    assert powertrain.energy_saving_lookup(table, 25.0, float("inf"), FC) == 0.0


def test_savings_lookup_out_of_table():
    table = make_table()
    with pytest.raises(cf.OutOfTableError):
        powertrain.energy_saving_lookup(table, 35.0, 0.5, FE)
    with pytest.raises(cf.OutOfTableError):
        powertrain.energy_saving_lookup(table, 25.0, 0.2, FE)


def test_savings_table_csv(tmp_path):
    table = make_table()
    paths = {}
    for mode in table.modes:
        paths[mode] = str(tmp_path / f"savings-{mode.value}.csv")
        table.to_csv(mode, paths[mode])
    reloaded = powertrain.SavingsTable.from_csv(paths)
    for mode in table.modes:
        assert np.allclose(reloaded.values[mode], table.values[mode])
    assert np.allclose(reloaded.time_gaps, table.time_gaps)


def test_model_savings_table():
    params = dynamics.VehicleParams()
    table = powertrain.model_savings_table(
        params, powertrain.PowertrainConfig(), speeds=[15.0, 25.0, 35.0], time_gaps=[0.3, 1.0, 2.0]
    )
    assert table.source == "model-derived"
    for mode in table.modes:
        grid = table.values[mode]
        assert np.all(grid > 0)
        # closer following saves more
        assert np.all(np.diff(grid, axis=1) < 0)
