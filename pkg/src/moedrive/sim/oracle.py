"""Scripted privileged teacher.

The oracle reads the full world state (rear traffic, gap positions, stop
timers) and produces controls through simple per-scenario rules:

* Merging: align with the gap centre, then change lanes once the gap clears.
* Overtaking: swing into lane B before the obstacle, return once past it.
* EmergencyBrake: intelligent-driver-model following of the lead.
* GiveWay: hold lane A at low speed until the rear car has passed, then merge.
* TrafficSign: decelerate to the line, hold, then go.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .world import (
    A_MAX, B_MAX, CAR_L, DRAG, K_WAYPOINTS, LANE_A, LANE_B, MAX_STEER, RECORD_EVERY,
    STOP_HOLD, V_DES, WHEELBASE, Control, ScenarioKind, WorldState, step,
)

FEATURE_DIM = 64
GAMMA = 0.99

IDM_A = 2.0
IDM_B = 3.0
IDM_S0 = 3.0
IDM_T = 1.2


@dataclass
class OracleStep:
    waypoints: np.ndarray                    # (4, 2) ego frame, +0.5 s .. +2.0 s
    teacher_feature: np.ndarray              # (64,)
    controls: Control
    value: float = 0.0
    reward: float = 0.0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(K_WAYPOINTS, 2)
        self.teacher_feature = np.asarray(self.teacher_feature, dtype=np.float64)


def idm_accel(v: float, v0: float, gap: float, dv: float) -> float:
    s_star = IDM_S0 + max(0.0, v * IDM_T + v * dv / (2.0 * math.sqrt(IDM_A * IDM_B)))
    gap = max(gap, 0.1)
    return IDM_A * (1.0 - (v / max(v0, 0.1)) ** 4 - (s_star / gap) ** 2)


def accel_to_controls(a: float, v: float) -> tuple[float, float]:
    a_net = a + DRAG * v
    if a_net >= 0.0:
        return min(a_net / A_MAX, 1.0), 0.0
    return 0.0, min(-a_net / B_MAX, 1.0)


def pursuit_steer(w: WorldState, lane_y: float) -> float:
    look = max(6.0, 1.2 * w.speed)
    alpha = math.atan2(lane_y - w.y, look) - w.heading
    delta = math.atan(2.0 * WHEELBASE * math.sin(alpha) / look)
    return float(np.clip(delta / MAX_STEER, -1.0, 1.0))


def _lead(w: WorldState, lane_band: float = 2.0):
    best = None
    for a in w.agents:
        if a.x > w.x and abs(a.y - w.y) < lane_band and (best is None or a.x < best.x):
            best = a
    return best


def _follow(w: WorldState, v0: float, lane_band: float = 2.0) -> float:
    lead = _lead(w, lane_band)
    if lead is None:
        return idm_accel(w.speed, v0, 1e6, 0.0)
    return idm_accel(w.speed, v0, lead.x - w.x - CAR_L, w.speed - lead.speed)


def _lane_end_cap(w: WorldState) -> float:
    room = w.lane_a_end - w.front_x - 3.0
    return math.sqrt(2.0 * 2.5 * max(room, 0.0))


def oracle_controls(w: WorldState) -> Control:
    """Privileged scripted controls for the current world state."""
    mem = w.oracle_mem
    v = w.speed
    kind = w.kind
    lane = LANE_A

    if kind == ScenarioKind.MERGING:
        d = w.gap_center() - w.x
        if not mem.get("merge") and abs(d) < 0.5 * w.gap_length - 5.5 and abs(v - w.platoon_speed) < 2.0:
            mem["merge"] = True
        lane = LANE_B if mem.get("merge") else LANE_A
        v_t = float(np.clip(w.platoon_speed + 0.6 * d, 0.0, 11.0))
        if not mem.get("merge"):
            v_t = min(v_t, _lane_end_cap(w))
        a = 1.5 * (v_t - v)

    elif kind == ScenarioKind.OVERTAKING:
        obs = w.agents[0]
        ahead = obs.x - w.x
        lane = LANE_B if -9.5 < ahead < 30.0 else LANE_A
        a = min(1.5 * (V_DES - v), _follow(w, V_DES, lane_band=1.8))

    elif kind == ScenarioKind.EMERGENCY_BRAKE:
        a = min(1.5 * (V_DES - v), _follow(w, V_DES))

    elif kind == ScenarioKind.GIVE_WAY:
        rear = w.agents[0]
        if not mem.get("yielded") and rear.x - w.x > 10.0:
            mem["yielded"] = True
        if mem.get("yielded"):
            lane = LANE_B
            a = min(1.5 * (V_DES - v), _follow(w, V_DES))
        else:
            a = 1.5 * (min(5.0, _lane_end_cap(w)) - v)

    elif kind == ScenarioKind.TRAFFIC_SIGN:
        if w.stop_done or w.front_x > w.stop_x + 1.0:
            a = 1.5 * (V_DES - v)
        else:
            d = (w.stop_x - 1.0) - w.front_x
            in_zone = w.front_x >= w.stop_x - 5.0
            if d <= 0.3 or (in_zone and v < 0.5):
                return Control(0.0, 0.6, pursuit_steer(w, LANE_A))
            a = 1.5 * (min(V_DES, math.sqrt(2.0 * 2.0 * max(d, 0.0))) - v)
    else:
        raise ValueError(f"unknown scenario kind {kind}")

    a = float(np.clip(a, -B_MAX, A_MAX))
    th, br = accel_to_controls(a, v)
    return Control(th, br, pursuit_steer(w, lane))


def privileged_state(w: WorldState) -> np.ndarray:
    """Full-information state summary; kinds separate linearly by construction."""
    lead_a = None
    b_ahead = b_behind = None
    for a in w.agents:
        if abs(a.y - LANE_A) < 1.0 and a.x > w.x and (lead_a is None or a.x < lead_a.x):
            lead_a = a
        if abs(a.y - LANE_B) < 1.0:
            if a.x >= w.x and (b_ahead is None or a.x < b_ahead.x):
                b_ahead = a
            if a.x < w.x and (b_behind is None or a.x > b_behind.x):
                b_behind = a

    def rel(a):
        if a is None:
            return [1.0, 0.0]
        return [float(np.clip((a.x - w.x) / 50.0, -1.0, 1.0)), (a.speed - w.speed) / 10.0]

    gc = w.gap_center()
    onehot = [0.0] * len(ScenarioKind)
    onehot[int(w.kind)] = 1.0
    return np.array([
        w.speed / 10.0, w.y / 3.5, w.heading,
        (w.goal[0] - w.x) / 50.0, (w.goal[1] - w.y) / 3.5,
        (w.lane_a_end - w.x) / 50.0 if math.isfinite(w.lane_a_end) else 0.0,
        float(w.has_lane_b),
        (w.stop_x - w.x) / 50.0 if w.stop_x is not None else 0.0,
        float(w.stop_done), w.stop_timer / STOP_HOLD,
        *rel(lead_a), *rel(b_ahead), *rel(b_behind),
        (gc - w.x) / 50.0 if gc is not None else 0.0,
        *onehot,
    ])


PRIVILEGED_DIM = 22


def make_projection(seed: int) -> np.ndarray:
    """Frozen random map from privileged state to teacher feature."""
    rng = np.random.default_rng([int(seed), 0x7465616368])
    return rng.normal(0.0, 1.0 / math.sqrt(PRIVILEGED_DIM), size=(FEATURE_DIM, PRIVILEGED_DIM))


def future_waypoints(w: WorldState, policy=oracle_controls) -> np.ndarray:
    """Poses of a forward-simulated copy at +0.5 .. +2.0 s in the current ego frame."""
    sim = copy.deepcopy(w)
    c, s = math.cos(w.heading), math.sin(w.heading)
    out = np.empty((K_WAYPOINTS, 2))
    for k in range(K_WAYPOINTS):
        for _ in range(RECORD_EVERY):
            step(sim, policy(sim))
        dx, dy = sim.x - w.x, sim.y - w.y
        out[k] = (c * dx + s * dy, -s * dx + c * dy)
    return out


def oracle_policy(w: WorldState, projection: np.ndarray | None = None) -> OracleStep:
    """Controls, waypoint targets and teacher feature for ``w``.

    ``value`` and ``reward`` are left at zero; they are filled in once the
    episode is complete.
    """
    controls = oracle_controls(copy.deepcopy(w))
    wps = future_waypoints(w)
    if projection is None:
        projection = make_projection(0)
    feat = projection @ privileged_state(w)
    return OracleStep(wps, feat, controls)


def discounted_values(rewards, gamma: float = GAMMA) -> list[float]:
    """value_t = reward_t + gamma * value_{t+1}, terminal value 0."""
    values = [0.0] * len(rewards)
    nxt = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        nxt = rewards[i] + gamma * nxt
        values[i] = nxt
    return values
