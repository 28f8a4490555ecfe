import pytest

import cacclab.src.config as cf
import cacclab.v2v as v2v

T_S = 0.2
A_BOUNDS = (-6.0, 3.0)


def braking_front():
    return v2v.FrontTrajectory(
        25.0, T_S, n_steps=50, events=[(1.0, 3.0, -2.0)], prehistory=5, lookahead=10
    )


def test_constant_front_forecasts_zero():
    front = v2v.FrontTrajectory(20.0, T_S, n_steps=30, prehistory=3)
    cfg = v2v.ChannelConfig(h_steps=2, trust_horizon=4)
    msg = v2v.emit(front, 10, cfg, A_BOUNDS)
    assert msg.forecast == (0.0,) * 5
    assert msg.connected
    assert msg.stamp == 8


def test_undelayed_message_is_current_truth():
    front = braking_front()
    cfg = v2v.ChannelConfig(h_steps=0)
    msg = v2v.emit(front, 7, cfg, A_BOUNDS)
    assert msg.s_f == front.position(7)
    assert msg.v_f == front.speed(7)


def test_forecast_is_realized_acceleration():
    front = braking_front()
    cfg = v2v.ChannelConfig(h_steps=1, trust_horizon=3)
    msg = v2v.emit(front, 6, cfg, A_BOUNDS)
    assert msg.forecast == pytest.approx([-2.0] * 4)
    for j, a in enumerate(msg.forecast):
        assert a == front.accel(msg.stamp + j)


def test_message_carries_the_configured_bounds():
    front = braking_front()
    cfg = v2v.ChannelConfig(h_steps=0, trust_horizon=2)
    msg = v2v.emit(front, 7, cfg, (-9.0, 2.0))
    assert msg.a_bounds == (-9.0, 2.0)
    with pytest.raises(TypeError):
        v2v.emit(front, 7, cfg)


def test_front_trajectory_motion():
    front = braking_front()
    assert front.speed(-5) == 25.0
    assert front.speed(5) == pytest.approx(25.0)
    assert front.speed(15) == pytest.approx(21.0)
    assert front.position(1) - front.position(0) == pytest.approx(T_S * 25.0)
    assert front.accel(20) == 0.0


def test_front_speed_clamped_at_zero():
    front = v2v.FrontTrajectory(1.0, T_S, n_steps=20, events=[(0.0, 4.0, -6.0)])
    speeds = [front.speed(k) for k in range(21)]
    assert min(speeds) == 0.0
    assert front.accel(0) == pytest.approx(-5.0)
    assert front.accel(3) == 0.0


def test_insufficient_history():
    front = v2v.FrontTrajectory(20.0, T_S, n_steps=10, prehistory=1)
    with pytest.raises(cf.InsufficientHistoryError):
        v2v.emit(front, 0, v2v.ChannelConfig(h_steps=2), A_BOUNDS)


def test_radar_only_message():
    front = braking_front()
    msg = v2v.emit(front, 6, v2v.ChannelConfig(connected=False, trust_horizon=3), A_BOUNDS)
    assert not msg.connected
    assert msg.a_bounds is None
    assert msg.forecast == ()


def test_message_validation():
    with pytest.raises(ValueError):
        v2v.V2VMessage(s_f=0.0, v_f=10.0, a_bounds=(-6.0, 3.0), forecast=(0.0,), trust_horizon=2)
    with pytest.raises(ValueError):
        v2v.V2VMessage(s_f=0.0, v_f=10.0, a_bounds=(-6.0, 3.0), forecast=(-7.0,), trust_horizon=0)
    with pytest.raises(ValueError):
        v2v.V2VMessage(s_f=0.0, v_f=10.0, forecast=(0.0,))


def test_channel_validation():
    with pytest.raises(ValueError):
        v2v.ChannelConfig(h_steps=-1)
    with pytest.raises(ValueError):
        v2v.ChannelConfig(n_d_max=-0.1)


def test_noiseless_receive():
    front = braking_front()
    cfg = v2v.ChannelConfig(h_steps=2)
    msg = v2v.emit(front, 12, cfg, A_BOUNDS)
    obs = v2v.receive(msg, front.position(10) - 40.0, cfg)
    assert obs.d == pytest.approx(40.0)
    assert obs.v_f == front.speed(10)
    assert obs.stamp == 10


def test_noise_is_bounded():
    front = braking_front()
    cfg = v2v.ChannelConfig(h_steps=1, n_d_max=0.3, n_vf_max=0.2, seed=5)
    draws = []
    for t in range(0, 50):
        msg = v2v.emit(front, t, cfg, A_BOUNDS)
        obs = v2v.receive(msg, msg.s_f - 30.0, cfg)
        assert abs(obs.d - 30.0) <= 0.3
        assert abs(obs.v_f - msg.v_f) <= 0.2
        draws.append(obs.d)
    assert len(set(draws)) > 1


def test_noise_is_deterministic():
    assert v2v.bounded_noise(0.3, 7, 12, v2v.DISTANCE_CHANNEL) == v2v.bounded_noise(
        0.3, 7, 12, v2v.DISTANCE_CHANNEL
    )
    assert v2v.bounded_noise(0.3, 7, 12, v2v.DISTANCE_CHANNEL) != v2v.bounded_noise(
        0.3, 7, 12, v2v.SPEED_CHANNEL
    )
    assert v2v.bounded_noise(0.0, 7, 12, v2v.SPEED_CHANNEL) == 0.0
