"""Full driving model, inference-time routing per variant, and checkpoints.

Checkpoint layout (little-endian)::

    b"MOEDRIVE" | uint32 version | uint64 header length | JSON header | float64 payload

The header records dims, expert count, tau, loss weights, variant, the
dataset manifest hash and, per parameter, its name, shape and payload offset.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .controller import WaypointFollower
from .encoders import (
    FUSED_DIM, IMAGE_DIM, MEAS_DIM, ImageEncoder, MeasurementEncoder, fuse, measurement_input,
)
from .experts import BOTTLENECK, GLOBAL, GRU_HIDDEN, N_SCENE, ExpertBank
from .numerics import ParamSet
from .router import DEFAULT_TAU, Router, normalized_entropy_rows
from .sim.observe import GRID_SIZE, observe
from .sim.world import K_WAYPOINTS, Control, WorldState

VARIANTS = ("geminus", "scenario_moe", "vanilla_moe", "single_expert")
CHECKPOINT_MAGIC = b"MOEDRIVE"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class DrivingModel:
    """Encoders, router and expert bank sharing one :class:`ParamSet`.

    Every variant carries the same parameter layout so a given seed gives
    identical initial weights across the ablation arms; each variant simply
    leaves some parts unused.
    """

    def __init__(self, seed: int = 0, variant: str = "geminus"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.params = ParamSet(seed)
        self.image_enc = ImageEncoder(self.params)
        self.meas_enc = MeasurementEncoder(self.params)
        self.router = Router(self.params)
        self.bank = ExpertBank(self.params)
        self.meta: dict = {}

    def features(self, grid, speed, command, goal) -> nx.Node:
        grid = np.asarray(grid, dtype=np.float64).reshape(-1, GRID_SIZE)
        i_feat = self.image_enc(nx.const(grid))
        m_feat = self.meas_enc(nx.const(measurement_input(speed, command, goal)))
        return fuse(i_feat, m_feat)

    def plan(self, F: np.ndarray, tau: float = DEFAULT_TAU):
        """Waypoints (B, 4, 2), selected expert ids (B,), router probs and U."""
        B = F.shape[0]
        with nx.no_grad():
            Fn = nx.const(F)
            probs = self.router.probs(Fn).value if self.variant != "single_expert" else \
                np.full((B, N_SCENE), 1.0 / N_SCENE)
            u = normalized_entropy_rows(probs)
            if self.variant == "single_expert":
                sel = np.full(B, GLOBAL)
            elif self.variant == "geminus":
                sel = np.where(u >= tau, GLOBAL, probs.argmax(axis=1))
            else:
                sel = probs.argmax(axis=1)
            wps = np.zeros((B, K_WAYPOINTS * 2))
            for e in np.unique(sel):
                rows = np.flatnonzero(sel == e)
                out = self.bank.expert(int(e))(nx.const(F[rows]))
                wp = out.waypoints.value
                if self.variant == "vanilla_moe":
                    wp = wp * probs[rows, e][:, None]
                wps[rows] = wp
        return wps.reshape(B, K_WAYPOINTS, 2), sel, probs, u

    def fused_numpy(self, grid, speed, command, goal) -> np.ndarray:
        with nx.no_grad():
            return self.features(grid, speed, command, goal).value

    # ------------------------------------------------------------ checkpoint

    def header(self) -> dict:
        return {
            "format": "moedrive-checkpoint",
            "version": CHECKPOINT_VERSION,
            "variant": self.variant,
            "seed": self.params.rng_seed,
            "dims": {"grid": GRID_SIZE, "image": IMAGE_DIM, "measurement": MEAS_DIM,
                     "fused": FUSED_DIM, "bottleneck": BOTTLENECK, "gru_hidden": GRU_HIDDEN,
                     "waypoints": K_WAYPOINTS},
            "experts": {"global": 1, "scene": N_SCENE},
            **self.meta,
        }

    def save(self, path: Path | str):
        path = Path(path)
        entries = []
        offset = 0
        for name, p in self.params:
            entries.append({"name": name, "shape": list(p.shape), "offset": offset})
            offset += p.value.size
        header = dict(self.header(), params=entries, n_values=offset)
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        payload = self.params.flat_values().astype("<f8").tobytes()
        tmp = path.with_name(path.name + ".partial")
        try:
            with open(tmp, "wb") as fh:
                fh.write(CHECKPOINT_MAGIC)
                fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
                fh.write(hbytes)
                fh.write(payload)
            tmp.replace(path)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise

    @classmethod
    def load(cls, path: Path | str) -> "DrivingModel":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        raw = path.read_bytes()
        if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 20:
            raise CheckpointError(f"{path} is not a model checkpoint")
        version, hlen = struct.unpack("<IQ", raw[8:20])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(raw[20:20 + hlen])
            values = np.frombuffer(raw[20 + hlen:], dtype="<f8")
        except ValueError as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
        if values.size != header.get("n_values"):
            raise CheckpointError(f"payload holds {values.size} values, header says {header.get('n_values')}")
        if header.get("variant") not in VARIANTS:
            raise CheckpointError(f"unknown variant {header.get('variant')!r} in {path}")
        model = cls(seed=header["seed"], variant=header["variant"])
        names = [e["name"] for e in header["params"]]
        if names != list(model.params.params):
            raise CheckpointError("checkpoint parameter layout does not match this build")
        for e in header["params"]:
            p = model.params[e["name"]]
            if list(p.shape) != e["shape"]:
                raise CheckpointError(f"shape mismatch for {e['name']}")
            p.value[...] = values[e["offset"]:e["offset"] + p.value.size].reshape(p.shape)
        model.meta = {k: v for k, v in header.items()
                      if k not in ("params", "n_values", "format", "version", "variant", "seed",
                                   "dims", "experts")}
        return model


def file_hash(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class TraceStep:
    step: int
    probs: tuple
    uncertainty: float
    selected: int


class ModelAgent:
    """Closed-loop driver: observe, route, decode waypoints, track with PID."""

    def __init__(self, model: DrivingModel, tau: float = DEFAULT_TAU, record_trace: bool = False):
        self.model = model
        self.tau = tau
        self.record_trace = record_trace
        self.follower = WaypointFollower()
        self.trace: list[TraceStep] = []
        self._n = 0

    def reset(self, world: WorldState):
        self.follower.reset()
        self.trace = []
        self._n = 0

    def act(self, world: WorldState) -> Control:
        obs = observe(world)
        F = self.model.fused_numpy(obs.grid, obs.speed, obs.command, obs.goal)
        wps, sel, probs, u = self.model.plan(F, self.tau)
        if self.record_trace:
            self.trace.append(TraceStep(self._n, tuple(float(p) for p in probs[0]), float(u[0]), int(sel[0])))
        self._n += 1
        return self.follower(wps[0], obs.speed)
