"""Closed-loop episodes and aggregate driving metrics.

The per-episode driving score is a desk-scale stand-in for the benchmark
score: ``100 * completion * 0.5**collisions * 0.7**violations``.  It is not
comparable in absolute value with any published number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from .oracle import oracle_controls
from .world import KIND_NAMES, Control, ScenarioKind, WorldState, spawn_scenario, step

COLLISION_FACTOR = 0.5
VIOLATION_FACTOR = 0.7
EVAL_SEED_BASE = 1_000_000


class Agent(Protocol):
    def reset(self, world: WorldState) -> None: ...
    def act(self, world: WorldState) -> Control: ...


class OracleAgent:
    def reset(self, world):
        pass

    def act(self, world):
        return oracle_controls(world)


@dataclass
class EpisodeResult:
    scenario_id: int
    seed: int
    success: bool
    collisions: int
    violations: int
    timeout: bool
    completion: float
    driving_score: float
    trace: list = field(default_factory=list)


@dataclass
class Metrics:
    success_rate: float
    driving_score: float
    per_ability: dict[str, float | None]
    ability_mean: float
    episodes: list[EpisodeResult] = field(default_factory=list)


def driving_score(completion: float, collisions: int, violations: int) -> float:
    return 100.0 * completion * COLLISION_FACTOR ** collisions * VIOLATION_FACTOR ** violations


def run_episode(agent: Agent, kind: ScenarioKind | int, seed: int) -> EpisodeResult:
    w = spawn_scenario(kind, seed)
    agent.reset(w)
    while not w.done:
        step(w, agent.act(w))
    collisions = int(w.collided)
    return EpisodeResult(int(kind), int(seed), w.success, collisions, w.violations,
                         timeout=not w.finished and not w.collided, completion=w.completion,
                         driving_score=driving_score(w.completion, collisions, w.violations),
                         trace=list(getattr(agent, "trace", [])))


def aggregate(results: Iterable[EpisodeResult]) -> Metrics:
    results = sorted(results, key=lambda r: (r.scenario_id, r.seed))
    if not results:
        raise ValueError("no episodes to aggregate")
    per = {}
    for k in ScenarioKind:
        sub = [r.success for r in results if r.scenario_id == int(k)]
        per[KIND_NAMES[k]] = 100.0 * float(np.mean(sub)) if sub else None
    defined = [v for v in per.values() if v is not None]
    return Metrics(
        success_rate=100.0 * float(np.mean([r.success for r in results])),
        driving_score=float(np.mean([r.driving_score for r in results])),
        per_ability=per,
        ability_mean=float(np.mean(defined)),
        episodes=results,
    )


def eval_scenarios(episodes_per_scenario: int, kinds: Iterable[int] | None = None,
                   seed_base: int = EVAL_SEED_BASE) -> list[tuple[int, int]]:
    kinds = list(ScenarioKind) if kinds is None else [ScenarioKind(k) for k in kinds]
    return [(int(k), seed_base + i) for k in kinds for i in range(episodes_per_scenario)]


def evaluate_closed_loop(agent_factory: Callable[[], Agent],
                         scenarios: Iterable[tuple[int, int]]) -> Metrics:
    """Run one fresh agent per (kind, seed) and aggregate."""
    return aggregate(run_episode(agent_factory(), k, s) for k, s in scenarios)
