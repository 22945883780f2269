"""PID tracking of planned waypoints.

Longitudinal gains (5.0, 0.5, 1.0) and lateral gains (0.75, 0.75, 0.3) are
the usual TransFuser settings.  Steering is signed, in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim.world import DT, RECORD_EVERY, Control

ControlCommand = Control

WAYPOINT_HZ = 1.0 / (RECORD_EVERY * DT)
BRAKE_DEADBAND = 0.1


@dataclass
class PidState:
    kp: float
    ki: float
    kd: float
    clamp: float
    integral: float = 0.0
    prev_error: float | None = None

    def reset(self):
        self.integral = 0.0
        self.prev_error = None


def longitudinal_pid() -> PidState:
    return PidState(5.0, 0.5, 1.0, clamp=10.0)


def lateral_pid() -> PidState:
    return PidState(0.75, 0.75, 0.3, clamp=2.0)


def pid_step(state: PidState, error: float, dt: float = DT) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    state.integral = min(max(state.integral + error * dt, -state.clamp), state.clamp)
    prev = error if state.prev_error is None else state.prev_error
    state.prev_error = error
    return state.kp * error + state.ki * state.integral + state.kd * (error - prev) / dt


def as_waypoints(waypoints) -> np.ndarray:
    wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    if len(wp) < 2:
        raise ValueError(f"need at least two waypoints, got {len(wp)}")
    if not np.all(np.isfinite(wp)):
        raise ValueError("non-finite waypoint")
    return wp


def desired_speed(waypoints) -> float:
    """Mean spacing along (origin, w1..w4) times the 2 Hz waypoint rate."""
    pts = np.vstack([np.zeros((1, 2)), as_waypoints(waypoints)])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).mean() * WAYPOINT_HZ)


def longitudinal(waypoints, speed: float, pid: PidState, dt: float = DT) -> tuple[float, float]:
    u = pid_step(pid, desired_speed(waypoints) - speed, dt)
    if u > 0:
        return min(u, 1.0), 0.0
    if u < -BRAKE_DEADBAND:
        return 0.0, min(-u, 1.0)
    return 0.0, 0.0


def lateral(waypoints, pid: PidState, dt: float = DT) -> float:
    wp = as_waypoints(waypoints)
    aim = 0.5 * (wp[0] + wp[1])
    if aim[0] == 0.0 and aim[1] == 0.0:
        pid_step(pid, 0.0, dt)
        return 0.0
    err = math.atan2(aim[1], aim[0])
    return float(np.clip(pid_step(pid, err, dt), -1.0, 1.0))


class WaypointFollower:
    """Per-episode pair of PID loops turning waypoints into controls."""

    def __init__(self, dt: float = DT):
        self.dt = dt
        self.lon = longitudinal_pid()
        self.lat = lateral_pid()

    def reset(self):
        self.lon.reset()
        self.lat.reset()

    def __call__(self, waypoints, speed: float) -> Control:
        throttle, brake = longitudinal(waypoints, speed, self.lon, self.dt)
        return Control(throttle, brake, lateral(waypoints, self.lat, self.dt))
