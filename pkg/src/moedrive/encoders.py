"""Observation and measurement encoders producing the fused feature F.

The raster path is a 3072 -> 512 -> 256 -> 128 tanh MLP and the measurement
path a 9 -> 64 -> 64 -> 32 tanh MLP over (speed/10, command one-hot, goal/50).
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Node, ParamSet, ShapeError
from .sim.observe import GRID_SIZE, N_COMMANDS, Observation, validate_command, validate_observation

IMAGE_DIM = 128
MEAS_DIM = 32
FUSED_DIM = IMAGE_DIM + MEAS_DIM
MEAS_IN = 1 + N_COMMANDS + 2
SPEED_SCALE = 10.0
GOAL_SCALE = 50.0


class MLP:
    """tanh on every hidden layer, linear output."""

    def __init__(self, ps: ParamSet, prefix: str, sizes: list[int]):
        self.sizes = sizes
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            W = ps.uniform(f"{prefix}.{i}.W", (b, a), a)
            bias = ps.uniform(f"{prefix}.{i}.b", (b,), a)
            self.layers.append((W, bias))

    def __call__(self, x: Node) -> Node:
        if x.value.ndim != 2 or x.value.shape[1] != self.sizes[0]:
            raise ShapeError(f"MLP expects (B, {self.sizes[0]}), got {x.value.shape}")
        for i, (W, b) in enumerate(self.layers):
            x = nx.linear(x, nx.leaf(W), nx.leaf(b))
            if i < len(self.layers) - 1:
                x = nx.tanh(x)
        return x


class ImageEncoder(MLP):
    def __init__(self, ps: ParamSet, prefix: str = "enc.img"):
        super().__init__(ps, prefix, [GRID_SIZE, 512, 256, IMAGE_DIM])


class MeasurementEncoder(MLP):
    def __init__(self, ps: ParamSet, prefix: str = "enc.meas"):
        super().__init__(ps, prefix, [MEAS_IN, 64, 64, MEAS_DIM])


def measurement_input(speed, command, goal) -> np.ndarray:
    """Normalized (B, 9) measurement rows; rejects anything but one-hot commands."""
    speed = np.atleast_1d(np.asarray(speed, dtype=np.float64))
    command = np.atleast_2d(np.asarray(command, dtype=np.float64))
    goal = np.atleast_2d(np.asarray(goal, dtype=np.float64))
    if command.shape != (speed.shape[0], N_COMMANDS) or goal.shape != (speed.shape[0], 2):
        raise ShapeError(f"measurement shapes: speed {speed.shape}, command {command.shape}, goal {goal.shape}")
    for row in command:
        validate_command(row)
    return np.concatenate([speed[:, None] / SPEED_SCALE, command, goal / GOAL_SCALE], axis=1)


def fuse(i_feat: Node, m_feat: Node) -> Node:
    """F = image feature followed by measurement feature."""
    if i_feat.value.shape[1] != IMAGE_DIM or m_feat.value.shape[1] != MEAS_DIM:
        raise ShapeError(f"fuse expects widths {IMAGE_DIM} and {MEAS_DIM}, got "
                         f"{i_feat.value.shape[1]} and {m_feat.value.shape[1]}")
    return nx.concat([i_feat, m_feat])


def fuse_np(i_feat, m_feat) -> np.ndarray:
    i_feat = np.asarray(i_feat, dtype=np.float64)
    m_feat = np.asarray(m_feat, dtype=np.float64)
    if i_feat.shape != (IMAGE_DIM,) or m_feat.shape != (MEAS_DIM,):
        raise ShapeError(f"fuse expects lengths {IMAGE_DIM} and {MEAS_DIM}, got {i_feat.shape}, {m_feat.shape}")
    return np.concatenate([i_feat, m_feat])


def encode_observation(enc: ImageEncoder, obs: Observation) -> np.ndarray:
    validate_observation(obs)
    with nx.no_grad():
        return enc(nx.const(obs.grid.reshape(1, -1))).value[0]


def encode_measurement(enc: MeasurementEncoder, speed: float, command, goal) -> np.ndarray:
    with nx.no_grad():
        return enc(nx.const(measurement_input(speed, command, goal))).value[0]
