from .world import (
    DT, K_WAYPOINTS, RECORD_EVERY, Control, ScenarioKind, KIND_NAMES, WorldState,
    spawn_scenario, step,
)
from .observe import Command, Observation, observe
from .oracle import OracleStep, oracle_controls, oracle_policy, privileged_state
from .rollout import Dataset, EpisodeRecord, generate_dataset, load_dataset, rollout_oracle
from .evaluate import Metrics, OracleAgent, evaluate_closed_loop, eval_scenarios, run_episode

__all__ = [
    "DT", "K_WAYPOINTS", "RECORD_EVERY", "Control", "ScenarioKind", "KIND_NAMES", "WorldState",
    "spawn_scenario", "step", "Command", "Observation", "observe", "OracleStep",
    "oracle_controls", "oracle_policy", "privileged_state", "Dataset", "EpisodeRecord",
    "generate_dataset", "load_dataset", "rollout_oracle", "Metrics", "OracleAgent",
    "evaluate_closed_loop", "eval_scenarios", "run_episode",
]
