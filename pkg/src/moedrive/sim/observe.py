"""Ego-centred observation: forward occupancy raster plus measurements.

The raster covers 2 m behind to 30 m ahead of the ego centre and 16 m to
either side, at 1 m per cell.  Row i is forward distance, column j lateral
offset (left positive).  Anything further than 2 m behind the ego centre is
invisible, so agents approaching from the rear do not show up until they
draw level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .world import CAR_L, CAR_W, LANE_A, LANE_B, LANE_W, ScenarioKind, WorldState, drivable

GRID = 32
CELL = 1.0
X_BACK = 2.0
N_CHANNELS = 3
GRID_SIZE = N_CHANNELS * GRID * GRID

_fwd = -X_BACK + (np.arange(GRID) + 0.5) * CELL
_lat = -GRID / 2 * CELL + (np.arange(GRID) + 0.5) * CELL
CELL_FWD, CELL_LAT = np.meshgrid(_fwd, _lat, indexing="ij")


class Command(IntEnum):
    FOLLOW = 0
    LEFT = 1
    RIGHT = 2
    STRAIGHT = 3
    CHANGE_LEFT = 4
    CHANGE_RIGHT = 5


N_COMMANDS = len(Command)


@dataclass
class Observation:
    grid: np.ndarray          # (3, 32, 32): drivable, agents, signs/markings
    speed: float
    command: np.ndarray       # one-hot, length 6
    goal: np.ndarray          # (x_g, y_g) in ego frame, m

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.command = np.asarray(self.command, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        validate_observation(self)


def validate_observation(obs: Observation):
    if obs.grid.shape != (N_CHANNELS, GRID, GRID):
        raise ValueError(f"grid must be {(N_CHANNELS, GRID, GRID)}, got {obs.grid.shape}")
    if not np.all((obs.grid >= 0.0) & (obs.grid <= 1.0)):
        raise ValueError("grid entries must lie in [0, 1]")
    validate_command(obs.command)
    if obs.goal.shape != (2,) or not np.all(np.isfinite(obs.goal)):
        raise ValueError(f"goal must be 2 finite numbers, got {obs.goal.tolist()}")
    if not math.isfinite(obs.speed) or obs.speed < 0:
        raise ValueError(f"speed must be finite and non-negative, got {obs.speed}")


def validate_command(command: np.ndarray):
    c = np.asarray(command)
    if c.shape != (N_COMMANDS,) or not np.all((c == 0) | (c == 1)) or c.sum() != 1:
        raise ValueError(f"command must be one-hot of length {N_COMMANDS}, got {c.tolist()}")


def one_hot_command(cmd: Command) -> np.ndarray:
    v = np.zeros(N_COMMANDS)
    v[int(cmd)] = 1.0
    return v


def route_command(w: WorldState) -> Command:
    if w.kind in (ScenarioKind.MERGING, ScenarioKind.GIVE_WAY):
        return Command.CHANGE_LEFT if w.y < 0.5 * (LANE_A + LANE_B) else Command.FOLLOW
    if w.kind == ScenarioKind.TRAFFIC_SIGN:
        return Command.STRAIGHT
    return Command.FOLLOW


def to_ego(w: WorldState, px, py):
    c, s = math.cos(w.heading), math.sin(w.heading)
    dx = np.asarray(px) - w.x
    dy = np.asarray(py) - w.y
    return c * dx + s * dy, -s * dx + c * dy


def rasterize(w: WorldState) -> np.ndarray:
    c, s = math.cos(w.heading), math.sin(w.heading)
    wx = w.x + c * CELL_FWD - s * CELL_LAT
    wy = w.y + s * CELL_FWD + c * CELL_LAT
    grid = np.zeros((N_CHANNELS, GRID, GRID), dtype=np.float64)
    grid[0] = drivable(w, wx, wy)
    for a in w.agents:
        grid[1][(np.abs(wx - a.x) <= 0.5 * CAR_L) & (np.abs(wy - a.y) <= 0.5 * CAR_W)] = 1.0
    marks = grid[2]
    if w.stop_x is not None and not w.stop_done:
        # the line is drawn until the required stop has been served
        marks[(np.abs(wx - w.stop_x) <= 0.5) & (np.abs(wy - LANE_A) <= 0.5 * LANE_W)] = 1.0
        marks[(np.abs(wx - w.stop_x) <= 1.0) & (wy < LANE_A - 0.5 * LANE_W - 0.5)
              & (wy > LANE_A - 0.5 * LANE_W - 2.5)] = 1.0
    if math.isfinite(w.lane_a_end):
        marks[(np.abs(wx - w.lane_a_end) <= 0.5) & (np.abs(wy - LANE_A) <= 0.5 * LANE_W)] = 1.0
        marks[(np.abs(wx - (w.lane_a_end - 25.0)) <= 1.0) & (wy < LANE_A - 0.5 * LANE_W - 0.5)
              & (wy > LANE_A - 0.5 * LANE_W - 2.5)] = 1.0
    return grid


def observe(w: WorldState) -> Observation:
    gx, gy = to_ego(w, w.goal[0], w.goal[1])
    return Observation(rasterize(w), float(w.speed), one_hot_command(route_command(w)),
                       np.array([float(gx), float(gy)]))
