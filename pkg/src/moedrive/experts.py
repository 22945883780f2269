"""Expert heads: bottleneck, GRU waypoint decoder, value and feature heads.

One expert maps F (160) through two tanh layers to f (256).  The GRU hidden
state starts at a linear map of f; each of the 4 steps takes the previous
waypoint (scaled by 0.1) as input and emits a displacement, so waypoints are
cumulative sums starting from (0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import FUSED_DIM, MLP
from .numerics import GruParams, Node, ParamSet, ShapeError
from .sim.oracle import FEATURE_DIM
from .sim.world import K_WAYPOINTS, ScenarioKind

BOTTLENECK = 256
GRU_HIDDEN = 64
WP_INPUT_SCALE = 0.1
GLOBAL = -1
N_SCENE = len(ScenarioKind)


@dataclass
class ExpertOutput:
    waypoints: Node       # (B, 8): x1, y1, ..., x4, y4
    value: Node           # (B, 1)
    feature: Node         # (B, 64)

    def numpy(self, row: int = 0):
        return (self.waypoints.value[row].reshape(K_WAYPOINTS, 2), float(self.value.value[row, 0]),
                self.feature.value[row].copy())


class Expert:
    def __init__(self, ps: ParamSet, prefix: str):
        self.prefix = prefix
        self.trunk = MLP(ps, f"{prefix}.trunk", [FUSED_DIM, BOTTLENECK, BOTTLENECK])
        self.h0_W = ps.uniform(f"{prefix}.h0.W", (GRU_HIDDEN, BOTTLENECK), BOTTLENECK)
        self.h0_b = ps.uniform(f"{prefix}.h0.b", (GRU_HIDDEN,), BOTTLENECK)
        self.gru = GruParams(ps, f"{prefix}.gru", 2, GRU_HIDDEN)
        self.delta_W = ps.uniform(f"{prefix}.delta.W", (2, GRU_HIDDEN), GRU_HIDDEN)
        self.delta_b = ps.uniform(f"{prefix}.delta.b", (2,), GRU_HIDDEN)
        self.value_W = ps.uniform(f"{prefix}.value.W", (1, BOTTLENECK), BOTTLENECK)
        self.value_b = ps.uniform(f"{prefix}.value.b", (1,), BOTTLENECK)
        self.feat_W = ps.uniform(f"{prefix}.feat.W", (FEATURE_DIM, BOTTLENECK), BOTTLENECK)
        self.feat_b = ps.uniform(f"{prefix}.feat.b", (FEATURE_DIM,), BOTTLENECK)

    def __call__(self, F: Node) -> ExpertOutput:
        if F.value.ndim != 2 or F.value.shape[1] != FUSED_DIM:
            raise ShapeError(f"expert expects (B, {FUSED_DIM}), got {F.value.shape}")
        # trunk MLP leaves its last layer linear; the bottleneck is squashed too
        f = nx.tanh(self.trunk(F))
        h = nx.linear(f, nx.leaf(self.h0_W), nx.leaf(self.h0_b))
        Wx, Wh, b = nx.leaf(self.gru.Wx), nx.leaf(self.gru.Wh), nx.leaf(self.gru.b)
        dW, db = nx.leaf(self.delta_W), nx.leaf(self.delta_b)
        wp = nx.const(np.zeros((F.value.shape[0], 2)))
        points = []
        for _ in range(K_WAYPOINTS):
            h = nx.gru_cell(h, nx.scale(wp, WP_INPUT_SCALE), Wx, Wh, b)
            wp = nx.add(wp, nx.linear(h, dW, db))
            points.append(wp)
        value = nx.linear(f, nx.leaf(self.value_W), nx.leaf(self.value_b))
        feat = nx.linear(f, nx.leaf(self.feat_W), nx.leaf(self.feat_b))
        return ExpertOutput(nx.concat(points), value, feat)


class SpeedHead:
    def __init__(self, ps: ParamSet, prefix: str = "speed"):
        self.W = ps.uniform(f"{prefix}.W", (1, FUSED_DIM), FUSED_DIM)
        self.b = ps.uniform(f"{prefix}.b", (1,), FUSED_DIM)

    def __call__(self, F: Node) -> Node:
        return nx.linear(F, nx.leaf(self.W), nx.leaf(self.b))


class ExpertBank:
    """Global expert, one scene expert per scenario kind, shared speed head."""

    def __init__(self, ps: ParamSet):
        self.global_expert = Expert(ps, "expert.global")
        self.scene = [Expert(ps, f"expert.scene{int(k)}") for k in ScenarioKind]
        self.speed_head = SpeedHead(ps)

    def expert(self, index: int) -> Expert:
        return self.global_expert if index == GLOBAL else self.scene[index]

    def forward_all(self, F: Node) -> list[ExpertOutput]:
        """Outputs ordered [global, kind 0, ..., kind 4]."""
        return [self.global_expert(F)] + [e(F) for e in self.scene]


def expert_forward(expert: Expert, F) -> ExpertOutput:
    F = np.asarray(F, dtype=np.float64)
    with nx.no_grad():
        return expert(nx.const(F.reshape(1, -1) if F.ndim == 1 else F))


def predict_speed(bank: ExpertBank, F) -> float:
    F = np.asarray(F, dtype=np.float64).reshape(1, -1)
    with nx.no_grad():
        return float(bank.speed_head(nx.const(F)).value[0, 0])
