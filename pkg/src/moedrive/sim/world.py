"""Straight-road 2D world with a kinematic bicycle ego and scripted agents.

World frame: +x along the route, +y to the left.  Lane A is centred on y=0,
lane B (when present) on y=3.5.  All scenarios start the ego at the origin in
lane A heading along +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

DT = 0.05                 # physics step, s (20 Hz)
RECORD_EVERY = 10         # physics steps per record (2 Hz)
K_WAYPOINTS = 4

A_MAX = 3.0               # m/s^2 at full throttle
B_MAX = 8.0               # m/s^2 at full brake
DRAG = 0.05               # 1/s, linear speed drag
V_MAX = 20.0
WHEELBASE = 2.7
MAX_STEER = 0.5           # rad at |steer_cmd| = 1

LANE_W = 3.5
LANE_A = 0.0
LANE_B = 3.5
CAR_L = 4.5
CAR_W = 2.0
OFFROAD_TOL = 0.75        # ego centre may sit this far past a lane edge

V_DES = 8.0
GAP_BOUNDS = (24.0, 32.0)         # merging gap, bumper to bumper, m
TRIGGER_RANGE = (45.0, 75.0)      # emergency-brake trigger position, m
STOP_HOLD = 2.5                   # s at standstill before a stop counts; longer than the waypoint horizon
STOP_SPEED = 0.1
PLATOON_HEADWAY = 11.0            # centre spacing of merge traffic


class ScenarioKind(IntEnum):
    MERGING = 0
    OVERTAKING = 1
    EMERGENCY_BRAKE = 2
    GIVE_WAY = 3
    TRAFFIC_SIGN = 4


KIND_NAMES = {
    ScenarioKind.MERGING: "Merging",
    ScenarioKind.OVERTAKING: "Overtaking",
    ScenarioKind.EMERGENCY_BRAKE: "EmergencyBrake",
    ScenarioKind.GIVE_WAY: "GiveWay",
    ScenarioKind.TRAFFIC_SIGN: "TrafficSign",
}

T_MAX = {
    ScenarioKind.MERGING: 40.0,
    ScenarioKind.OVERTAKING: 30.0,
    ScenarioKind.EMERGENCY_BRAKE: 40.0,
    ScenarioKind.GIVE_WAY: 40.0,
    ScenarioKind.TRAFFIC_SIGN: 30.0,
}


@dataclass(frozen=True)
class Control:
    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0


@dataclass
class Agent:
    x: float
    y: float
    speed: float
    script: str                    # cruise | static | brake
    v_cruise: float = 0.0
    trigger_x: float = math.inf
    decel: float = 6.5
    hold: float = 2.0
    phase: str = "cruise"
    timer: float = 0.0

    def advance(self, dt: float):
        if self.script == "static":
            return
        if self.script == "brake":
            if self.phase == "cruise" and self.x >= self.trigger_x:
                self.phase = "brake"
            if self.phase == "brake":
                self.speed = max(0.0, self.speed - self.decel * dt)
                if self.speed == 0.0:
                    self.phase = "hold"
            elif self.phase == "hold":
                self.timer += dt
                if self.timer >= self.hold:
                    self.phase = "resume"
            elif self.phase == "resume":
                self.speed = min(self.v_cruise, self.speed + 2.0 * dt)
        self.x += self.speed * dt


@dataclass
class WorldState:
    kind: ScenarioKind
    seed: int
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    t: float = 0.0
    steps: int = 0
    agents: list[Agent] = field(default_factory=list)
    has_lane_b: bool = False
    lane_a_end: float = math.inf
    stop_x: float | None = None
    goal: tuple[float, float] = (100.0, 0.0)
    t_max: float = 30.0
    # merge bookkeeping (oracle-visible)
    gap_center0: float | None = None
    platoon_speed: float = 0.0
    gap_length: float = 0.0
    # progress / rule tracking
    collided: bool = False
    violations: int = 0
    stop_timer: float = 0.0
    stop_done: bool = False
    ran_stop: bool = False
    finished: bool = False
    oracle_mem: dict = field(default_factory=dict)

    @property
    def front_x(self) -> float:
        return self.x + 0.5 * CAR_L * math.cos(self.heading)

    @property
    def completion(self) -> float:
        return float(np.clip(self.x / self.goal[0], 0.0, 1.0))

    @property
    def done(self) -> bool:
        return self.collided or self.finished or self.t >= self.t_max - 1e-9

    @property
    def success(self) -> bool:
        return self.finished and not self.collided and self.violations == 0

    def gap_center(self) -> float | None:
        if self.gap_center0 is None:
            return None
        return self.gap_center0 + self.platoon_speed * self.t


def _rng(kind: ScenarioKind, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(kind), int(seed), 0x6D6F65])


def spawn_scenario(kind: ScenarioKind | int, seed: int) -> WorldState:
    """Deterministic scenario instance for ``(kind, seed)``."""
    kind = ScenarioKind(kind)
    rng = _rng(kind, seed)
    w = WorldState(kind=kind, seed=int(seed), t_max=T_MAX[kind])
    w.speed = float(rng.uniform(5.0, 7.0))

    if kind == ScenarioKind.MERGING:
        w.has_lane_b = True
        w.lane_a_end = float(rng.uniform(60.0, 80.0))
        w.platoon_speed = float(rng.uniform(5.0, 7.0))
        w.gap_length = float(rng.uniform(*GAP_BOUNDS))
        w.gap_center0 = float(rng.uniform(0.0, 15.0))
        half = 0.5 * (w.gap_length + CAR_L)
        for i in range(10):
            w.agents.append(Agent(w.gap_center0 + half + i * PLATOON_HEADWAY, LANE_B,
                                  w.platoon_speed, "cruise", v_cruise=w.platoon_speed))
        for i in range(6):
            w.agents.append(Agent(w.gap_center0 - half - i * PLATOON_HEADWAY, LANE_B,
                                  w.platoon_speed, "cruise", v_cruise=w.platoon_speed))
        w.goal = (w.lane_a_end + 35.0, LANE_B)

    elif kind == ScenarioKind.OVERTAKING:
        w.has_lane_b = True
        x_obs = float(rng.uniform(35.0, 50.0))
        v_obs = float(rng.uniform(0.0, 1.5))
        script = "static" if v_obs < 0.5 else "cruise"
        v_obs = 0.0 if script == "static" else v_obs
        w.agents.append(Agent(x_obs, LANE_A, v_obs, script, v_cruise=v_obs))
        w.goal = (x_obs + 50.0, LANE_A)

    elif kind == ScenarioKind.EMERGENCY_BRAKE:
        v_lead = float(rng.uniform(7.0, 9.0))
        w.agents.append(Agent(float(rng.uniform(20.0, 30.0)), LANE_A, v_lead, "brake",
                              v_cruise=v_lead, trigger_x=float(rng.uniform(*TRIGGER_RANGE)),
                              decel=float(rng.uniform(6.0, 7.0))))
        w.goal = (w.agents[0].trigger_x + 30.0, LANE_A)

    elif kind == ScenarioKind.GIVE_WAY:
        w.has_lane_b = True
        w.lane_a_end = float(rng.uniform(65.0, 80.0))
        v_r = float(rng.uniform(11.0, 13.0))
        w.agents.append(Agent(float(rng.uniform(-35.0, -20.0)), LANE_B, v_r, "cruise", v_cruise=v_r))
        w.goal = (w.lane_a_end + 35.0, LANE_B)

    elif kind == ScenarioKind.TRAFFIC_SIGN:
        w.stop_x = float(rng.uniform(30.0, 50.0))
        w.goal = (w.stop_x + 35.0, LANE_A)

    return w


def drivable(w: WorldState, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Boolean drivable mask for world-frame points."""
    in_a = (np.abs(ys - LANE_A) <= 0.5 * LANE_W) & (xs < w.lane_a_end)
    if w.has_lane_b:
        return in_a | (np.abs(ys - LANE_B) <= 0.5 * LANE_W)
    return in_a


def off_road(w: WorldState) -> bool:
    y = w.y
    top = (LANE_B if w.has_lane_b else LANE_A) + 0.5 * LANE_W + OFFROAD_TOL
    low_a = LANE_A - 0.5 * LANE_W - OFFROAD_TOL
    in_a = w.front_x < w.lane_a_end and low_a <= y <= top
    in_b = w.has_lane_b and LANE_B - 0.5 * LANE_W - OFFROAD_TOL <= y <= top
    return not (in_a or in_b)


def hits_agent(w: WorldState) -> bool:
    return any(abs(a.x - w.x) < CAR_L and abs(a.y - w.y) < CAR_W for a in w.agents)


def lane_at_goal(w: WorldState) -> bool:
    return abs(w.y - w.goal[1]) <= 1.2


def step(w: WorldState, control: Control, dt: float = DT) -> WorldState:
    """Advance the world in place by one physics step and return it."""
    th, br, st = control.throttle, control.brake, control.steer
    if not all(math.isfinite(c) for c in (th, br, st)):
        raise ValueError(f"non-finite control {control}")
    th = min(max(th, 0.0), 1.0)
    br = min(max(br, 0.0), 1.0)
    st = min(max(st, -1.0), 1.0)

    v = w.speed
    accel = A_MAX * th - B_MAX * br - DRAG * v
    v_new = min(max(v + accel * dt, 0.0), V_MAX)
    w.heading += (v / WHEELBASE) * math.tan(st * MAX_STEER) * dt
    w.x += v_new * math.cos(w.heading) * dt
    w.y += v_new * math.sin(w.heading) * dt
    w.speed = v_new
    for a in w.agents:
        a.advance(dt)
    w.steps += 1
    w.t = w.steps * dt

    if not w.collided and (hits_agent(w) or off_road(w)):
        w.collided = True

    if w.stop_x is not None:
        fx = w.front_x
        in_zone = w.stop_x - 5.0 <= fx <= w.stop_x + 1.0
        if in_zone and w.speed < STOP_SPEED:
            w.stop_timer += dt
            if w.stop_timer >= STOP_HOLD - 1e-9:
                w.stop_done = True
        if fx > w.stop_x + 1.0 and not w.stop_done and not w.ran_stop:
            w.ran_stop = True
            w.violations += 1

    if not w.finished and w.x >= w.goal[0]:
        w.finished = True
        if not lane_at_goal(w):
            w.violations += 1
    return w
