import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moedrive.controller import (
    WaypointFollower, desired_speed, lateral, lateral_pid, longitudinal, longitudinal_pid, pid_step,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_zero_error_gives_zero():
    pid = longitudinal_pid()
    for _ in range(10):
        assert pid_step(pid, 0.0, 0.05) == 0.0


def test_first_call_has_no_derivative_kick():
    assert pid_step(longitudinal_pid(), 1.0, 0.05) == pytest.approx(5.025, abs=1e-12)


def test_integral_grows_linearly_until_clamp():
    pid = longitudinal_pid()
    seen = []
    for _ in range(300):
        pid_step(pid, 1.0, 0.05)
        seen.append(pid.integral)
    assert seen[:5] == pytest.approx([0.05, 0.10, 0.15, 0.20, 0.25])
    assert max(seen) == 10.0


def test_reset_clears_memory():
    pid = lateral_pid()
    pid_step(pid, 0.3, 0.05)
    pid.reset()
    assert pid_step(pid, 1.0, 0.05) == pytest.approx(0.75 + 0.75 * 0.05)


def test_bad_dt():
    with pytest.raises(ValueError):
        pid_step(lateral_pid(), 1.0, 0.0)


def test_stationary_waypoints_brake():
    throttle, brake = longitudinal(np.zeros((4, 2)), 6.0, longitudinal_pid())
    assert throttle == 0.0 and brake > 0


def test_matching_speed_inside_deadband():
    wps = np.array([[1.0, 0], [2.0, 0], [3.0, 0], [4.0, 0]])
    assert desired_speed(wps) == pytest.approx(2.0)
    assert longitudinal(wps, 2.0, longitudinal_pid()) == (0.0, 0.0)


def test_desired_five_from_rest_saturates_throttle():
    wps = np.array([[2.5, 0], [5.0, 0], [7.5, 0], [10.0, 0]])
    assert desired_speed(wps) == pytest.approx(5.0)
    assert longitudinal(wps, 0.0, longitudinal_pid()) == (1.0, 0.0)


def test_straight_ahead_no_steer():
    wps = np.array([[1.0, 0], [2.0, 0], [3.0, 0], [4.0, 0]])
    assert lateral(wps, lateral_pid()) == 0.0


def test_forty_five_degrees_left():
    wps = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    e = math.pi / 4
    assert lateral(wps, lateral_pid(), 0.05) == pytest.approx(0.75 * e + 0.75 * e * 0.05, abs=1e-12)
    assert lateral(wps, lateral_pid(), 0.05) == pytest.approx(0.6185, abs=1e-4)


def test_degenerate_aim_point():
    wps = np.array([[1.0, 0.5], [-1.0, -0.5], [0.0, 0.0], [0.0, 0.0]])
    assert lateral(wps, lateral_pid()) == 0.0


def test_rejects_nan_waypoints():
    with pytest.raises(ValueError):
        desired_speed([[0.0, float("nan")]] * 4)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 2), elements=finite))
def test_mirroring_negates_steer(wps):
    mirrored = wps * np.array([1.0, -1.0])
    assert lateral(mirrored, lateral_pid()) == -lateral(wps, lateral_pid())


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 2), elements=finite), st.floats(0, 30), st.integers(1, 20))
def test_outputs_stay_in_range(wps, speed, steps):
    follow = WaypointFollower()
    for _ in range(steps):
        c = follow(wps, speed)
        assert 0.0 <= c.throttle <= 1.0
        assert 0.0 <= c.brake <= 1.0
        assert -1.0 <= c.steer <= 1.0
        assert c.throttle == 0.0 or c.brake == 0.0
