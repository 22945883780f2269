"""Scenario router with entropy-gated fallback to the global expert."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import FUSED_DIM, MLP
from .experts import GLOBAL, N_SCENE
from .numerics import PROB_FLOOR, Node, ParamSet

ROUTER_HIDDEN = 64
DEFAULT_TAU = 0.5


class Router(MLP):
    def __init__(self, ps: ParamSet, prefix: str = "router"):
        super().__init__(ps, prefix, [FUSED_DIM, ROUTER_HIDDEN, N_SCENE])

    def probs(self, F: Node) -> Node:
        return nx.softmax(self(F))


def route_logits(router: Router, F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    with nx.no_grad():
        return router(nx.const(F.reshape(1, -1))).value[0]


def normalized_entropy(probs) -> float:
    """Shannon entropy over ln N; 0 for a one-hot vector, 1 for uniform."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need a probability vector with at least two entries")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {p.tolist()}")
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log(nz)))
    return min(max(0.0, h / math.log(p.size)), 1.0)


def normalized_entropy_rows(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return np.clip(-(p * logs).sum(axis=1) / math.log(p.shape[1]), 0.0, 1.0)


@dataclass(frozen=True)
class RoutingDecision:
    selected: int              # GLOBAL (-1) or scenario kind id
    probs: tuple[float, ...]
    uncertainty: float
    tau: float

    @property
    def is_global(self) -> bool:
        return self.selected == GLOBAL


def select(probs, tau: float = DEFAULT_TAU) -> RoutingDecision:
    """Global expert when U >= tau, otherwise the most probable scene expert."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    p = np.asarray(probs, dtype=np.float64)
    u = normalized_entropy(p)
    chosen = GLOBAL if u >= tau else int(np.argmax(p))
    return RoutingDecision(chosen, tuple(float(v) for v in p), u, float(tau))


def scenario_loss(probs, kind: int) -> float:
    """Cross-entropy against the expert assigned to ``kind``."""
    p = np.asarray(probs, dtype=np.float64)
    return -math.log(max(float(p[int(kind)]), PROB_FLOOR))
