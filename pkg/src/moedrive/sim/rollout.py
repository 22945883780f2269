"""Oracle rollouts and the line-delimited clip dataset format.

A dataset directory holds ``manifest.json`` and one ``clips/clip_NNNNN.jsonl``
file per episode.  Each clip line is one 2 Hz record with the keys::

    scenario_id, t, obs.grid, obs.speed, obs.command, obs.goal,
    oracle.waypoints, oracle.value, oracle.feature, oracle.controls, reward

``obs.grid`` is the (3, 32, 32) raster flattened row-major (channel, row,
column); ``oracle.waypoints`` is the (4, 2) array flattened to 8 reals.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .observe import GRID_SIZE, N_COMMANDS, Observation, observe
from .oracle import (
    FEATURE_DIM, GAMMA, OracleStep, discounted_values, make_projection, oracle_controls,
    oracle_policy,
)
from .world import (
    DT, K_WAYPOINTS, RECORD_EVERY, Control, ScenarioKind, WorldState, spawn_scenario, step,
)

DATASET_FORMAT = "moedrive-dataset"
DATASET_VERSION = 1
COLLISION_PENALTY = 100.0
VIOLATION_PENALTY = 10.0
EVENT_RATE = 0.3            # perturbation events per second at noise = 1
EVENTS = ("brake", "coast", "steer")


@dataclass
class EpisodeRecord:
    scenario_id: int
    seed: int
    steps: list[tuple[Observation, OracleStep]]
    success: bool
    collision: bool
    timeout: bool
    completion: float
    violations: int = 0

    def __post_init__(self):
        if not self.steps:
            raise ValueError("episode record must hold at least one step")
        if not 0.0 <= self.completion <= 1.0:
            raise ValueError(f"completion {self.completion} outside [0, 1]")


def _noise_rng(kind: int, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(kind), int(seed), 0x6E6F697365])


def rollout_oracle(kind: ScenarioKind | int, seed: int, t_max: float | None = None,
                   projection: np.ndarray | None = None, noise: float = 0.0) -> EpisodeRecord:
    """Run the oracle closed-loop and record one 2 Hz step per 0.5 s.

    With ``noise > 0`` the executed controls are perturbed while the recorded
    targets stay those of the clean oracle from the visited states: a slow
    steer/accel drift plus occasional events (full-brake pulse, coasting,
    steering pulse) that push the ego into recovery states.
    """
    w = spawn_scenario(kind, seed)
    if t_max is not None:
        w.t_max = float(t_max)
    if projection is None:
        projection = make_projection(0)
    rng = _noise_rng(kind, seed) if noise > 0 else None
    steer_drift = 0.0
    accel_drift = 0.0
    event, event_left, event_steer = None, 0.0, 0.0

    steps: list[tuple[Observation, OracleStep]] = []
    rewards: list[float] = []
    while not w.done:
        obs = observe(w)
        target = oracle_policy(w, projection)
        x0, hit0, viol0 = w.x, w.collided, w.violations
        for _ in range(RECORD_EVERY):
            c = oracle_controls(w)
            if rng is not None:
                steer_drift = 0.92 * steer_drift + 0.08 * noise * rng.normal()
                accel_drift = 0.9 * accel_drift + 0.1 * noise * rng.normal()
                throttle = c.throttle if c.brake > 0 else min(max(c.throttle + accel_drift, 0.0), 1.0)
                c = Control(throttle, c.brake, min(max(c.steer + steer_drift, -1.0), 1.0))
                if event is None and rng.random() < noise * EVENT_RATE * DT:
                    event = EVENTS[rng.integers(len(EVENTS))]
                    event_left = rng.uniform(0.5, 2.0)
                    event_steer = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.2)
                if event is not None:
                    if event == "brake":
                        c = Control(0.0, 1.0, c.steer)
                    elif event == "coast":
                        c = Control(0.0, 0.0, c.steer)
                    else:
                        c = Control(c.throttle, c.brake, min(max(c.steer + event_steer, -1.0), 1.0))
                    event_left -= DT
                    if event_left <= 0:
                        event = None
            step(w, c)
            if w.done:
                break
        r = (w.x - x0) - COLLISION_PENALTY * (w.collided and not hit0) \
            - VIOLATION_PENALTY * (w.violations - viol0)
        steps.append((obs, target))
        rewards.append(float(r))

    for (_, target), r, v in zip(steps, rewards, discounted_values(rewards, GAMMA)):
        target.reward = r
        target.value = v
    return EpisodeRecord(int(kind), int(seed), steps, success=w.success, collision=w.collided,
                         timeout=not w.finished and not w.collided, completion=w.completion,
                         violations=w.violations)


# ---------------------------------------------------------------- serialization

def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2 ** 53 else x


def step_to_json(scenario_id: int, i: int, obs: Observation, target: OracleStep) -> str:
    grid = obs.grid.reshape(-1)
    rec = {
        "scenario_id": int(scenario_id),
        "t": round(i * RECORD_EVERY * DT, 6),
        "obs.grid": [_num(v) for v in grid],
        "obs.speed": float(obs.speed),
        "obs.command": [int(v) for v in obs.command],
        "obs.goal": [float(v) for v in obs.goal],
        "oracle.waypoints": [float(v) for v in target.waypoints.reshape(-1)],
        "oracle.value": float(target.value),
        "oracle.feature": [float(v) for v in target.teacher_feature],
        "oracle.controls": [float(target.controls.throttle), float(target.controls.brake),
                            float(target.controls.steer)],
        "reward": float(target.reward),
    }
    return json.dumps(rec, separators=(",", ":"))


def write_clip(path: Path, ep: EpisodeRecord):
    with open(path, "w") as fh:
        for i, (obs, target) in enumerate(ep.steps):
            fh.write(step_to_json(ep.scenario_id, i, obs, target))
            fh.write("\n")


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def split_clips(kinds: list[int], val_fraction: float, rng: np.random.Generator) -> list[str]:
    """Stratified train/val assignment; val takes ceil(fraction * N) clips round-robin over kinds."""
    n = len(kinds)
    n_val = math.ceil(val_fraction * n) if val_fraction > 0 else 0
    by_kind: dict[int, list[int]] = {}
    for i, k in enumerate(kinds):
        by_kind.setdefault(k, []).append(i)
    pools = {k: list(rng.permutation(v)) for k, v in sorted(by_kind.items())}
    split = ["train"] * n
    taken = 0
    while taken < n_val:
        progressed = False
        for k in sorted(pools):
            if taken >= n_val:
                break
            if len(pools[k]) > 1:
                split[int(pools[k].pop())] = "val"
                taken += 1
                progressed = True
        if not progressed:
            break
    return split


def generate_dataset(out: Path | str, clips_per_scenario: dict[int, int], seed: int = 0,
                     val_fraction: float = 0.05, noise: float = 0.3, t_max: float | None = None) -> dict:
    """Roll out the oracle and write clips + manifest.  Returns the manifest."""
    out = Path(out)
    if sum(clips_per_scenario.values()) <= 0:
        raise ValueError("dataset must contain at least one clip")
    tmp = out.with_name(out.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "clips").mkdir(parents=True)
    try:
        rng = np.random.default_rng([int(seed), 0x64617461])
        projection = make_projection(seed)
        plan: list[tuple[int, int]] = []
        for kind in sorted(clips_per_scenario):
            n = int(clips_per_scenario[kind])
            seeds = rng.choice(1_000_000, size=n, replace=False) if n else []
            plan.extend((int(kind), int(s)) for s in seeds)
        split = split_clips([k for k, _ in plan], val_fraction, rng)
        clips = []
        for idx, ((kind, s), part) in enumerate(zip(plan, split)):
            ep = rollout_oracle(kind, s, t_max=t_max, projection=projection, noise=noise)
            name = f"clip_{idx:05d}.jsonl"
            write_clip(tmp / "clips" / name, ep)
            clips.append({
                "file": f"clips/{name}", "scenario_id": kind, "seed": s, "split": part,
                "n_steps": len(ep.steps), "success": bool(ep.success),
                "collision": bool(ep.collision), "completion": float(ep.completion),
                "sha256": sha256_file(tmp / "clips" / name),
            })
        manifest = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "seed": int(seed),
            "noise": float(noise),
            "val_fraction": float(val_fraction),
            "clips_per_scenario": {str(k): int(v) for k, v in sorted(clips_per_scenario.items())},
            "seed_list": [c["seed"] for c in clips],
            "projection": projection.tolist(),
            "clips": clips,
        }
        with open(tmp / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


class DatasetError(RuntimeError):
    pass


@dataclass
class Dataset:
    """Flat per-step arrays; ``clip`` indexes into ``manifest['clips']``."""
    grid: np.ndarray          # (N, 3072) uint8
    speed: np.ndarray         # (N,)
    command: np.ndarray       # (N, 6)
    goal: np.ndarray          # (N, 2)
    waypoints: np.ndarray     # (N, 4, 2)
    value: np.ndarray         # (N,)
    feature: np.ndarray       # (N, 64)
    kind: np.ndarray          # (N,) int
    clip: np.ndarray          # (N,) int
    manifest: dict = field(default_factory=dict)
    manifest_hash: str = ""

    def __len__(self):
        return len(self.kind)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.grid[idx], self.speed[idx], self.command[idx], self.goal[idx],
                       self.waypoints[idx], self.value[idx], self.feature[idx], self.kind[idx],
                       self.clip[idx], self.manifest, self.manifest_hash)

    def split(self, name: str) -> "Dataset":
        parts = np.array([c["split"] for c in self.manifest["clips"]])
        return self.subset(np.flatnonzero(parts[self.clip] == name))

    def scenario_subsets(self) -> dict[int, np.ndarray]:
        """Row indices per scenario id; every row lands in exactly one subset."""
        subsets = {}
        for k in ScenarioKind:
            idx = np.flatnonzero(self.kind == int(k))
            if idx.size == 0:
                raise DatasetError(f"empty scenario subset: {k.name}")
            subsets[int(k)] = idx
        return subsets


def load_dataset(path: Path | str, verify: bool = True) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"missing dataset manifest {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{mpath} is not a {DATASET_FORMAT} manifest")
    cols = {k: [] for k in ("grid", "speed", "command", "goal", "waypoints", "value",
                            "feature", "kind", "clip")}
    for ci, clip in enumerate(manifest["clips"]):
        cpath = path / clip["file"]
        if not cpath.exists():
            raise DatasetError(f"missing clip file {cpath}")
        if verify and sha256_file(cpath) != clip["sha256"]:
            raise DatasetError(f"hash mismatch for {cpath}")
        with open(cpath) as fh:
            for line in fh:
                rec = json.loads(line)
                cols["grid"].append(np.asarray(rec["obs.grid"], dtype=np.uint8))
                cols["speed"].append(rec["obs.speed"])
                cols["command"].append(rec["obs.command"])
                cols["goal"].append(rec["obs.goal"])
                cols["waypoints"].append(rec["oracle.waypoints"])
                cols["value"].append(rec["oracle.value"])
                cols["feature"].append(rec["oracle.feature"])
                cols["kind"].append(rec["scenario_id"])
                cols["clip"].append(ci)
    if not cols["kind"]:
        raise DatasetError(f"dataset {path} holds no steps")
    return Dataset(
        grid=np.stack(cols["grid"]).reshape(-1, GRID_SIZE),
        speed=np.asarray(cols["speed"], dtype=np.float64),
        command=np.asarray(cols["command"], dtype=np.float64).reshape(-1, N_COMMANDS),
        goal=np.asarray(cols["goal"], dtype=np.float64).reshape(-1, 2),
        waypoints=np.asarray(cols["waypoints"], dtype=np.float64).reshape(-1, K_WAYPOINTS, 2),
        value=np.asarray(cols["value"], dtype=np.float64),
        feature=np.asarray(cols["feature"], dtype=np.float64).reshape(-1, FEATURE_DIM),
        kind=np.asarray(cols["kind"], dtype=np.int64),
        clip=np.asarray(cols["clip"], dtype=np.int64),
        manifest=manifest,
        manifest_hash=sha256_file(mpath),
    )
